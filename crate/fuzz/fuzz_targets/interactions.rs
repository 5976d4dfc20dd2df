#![no_main]

use genrec::corpus::{leave_one_out_split, Format, InteractionLog};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for format in [Format::Tsv, Format::Csv] {
        if let Ok(log) = InteractionLog::parse(text, format) {
            let split = leave_one_out_split(&log);
            assert_eq!(split.num_users(), log.num_users());
            let again = InteractionLog::parse(&log.to_text(format), format).expect("round trip");
            assert_eq!(again.records().len(), log.records().len());
        }
    }
});
