#![no_main]

use libfuzzer_sys::fuzz_target;
use trade_core::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ck) = Checkpoint::from_json(text) {
        let back = Checkpoint::from_json(&ck.to_json()).expect("re-load of written checkpoint");
        assert_eq!(back.model.params, ck.model.params);
    }
});
