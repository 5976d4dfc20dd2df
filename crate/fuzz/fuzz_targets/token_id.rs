#![no_main]

use genrec::indexer::{parse_id, render_id};
use genrec::model::Vocabulary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(id) = parse_id(text) {
        assert_eq!(parse_id(&render_id(&id).expect("valid")).expect("round trip"), id);
        let vocab = Vocabulary::default();
        let prompt = vocab.make_prompt("recommend items for user", &id);
        assert!(prompt.iter().all(|&t| (t as usize) < vocab.len()));
    }
    let _ = Vocabulary::default().tokenize(text);
});
