#![no_main]

use genrec::decode::IdTrie;
use genrec::indexer::IndexDictionary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(dict) = IndexDictionary::parse(text) {
        let again = IndexDictionary::parse(&dict.to_text().expect("renders")).expect("round trip");
        assert_eq!(again, dict);
        let _ = IdTrie::build(&dict);
    }
});
