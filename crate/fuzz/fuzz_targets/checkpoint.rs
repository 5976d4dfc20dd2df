#![no_main]

use genrec::model::Seq2SeqModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((model, stamp)) = Seq2SeqModel::from_json(text) {
        let _ = model.forward(&[genrec::model::EOS], &[]);
        let again = model.to_json(stamp.as_deref()).expect("serializes");
        assert!(Seq2SeqModel::from_json(&again).is_ok());
    }
});
