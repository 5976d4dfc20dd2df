#![no_main]

use genrec::embed::{zscore, NodeEmbeddings};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(e) = NodeEmbeddings::parse_tsv(text) {
        if e.is_finite() {
            let _ = zscore(&e);
        }
    }
});
