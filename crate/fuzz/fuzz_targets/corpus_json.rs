#![no_main]

use libfuzzer_sys::fuzz_target;
use trade_core::corpus::{corpus_to_json, parse_corpus};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(corpus) = parse_corpus(text) {
        // Anything accepted must survive a write/read cycle unchanged.
        let again = parse_corpus(&corpus_to_json(&corpus)).expect("re-parse of written corpus");
        assert_eq!(again, corpus);
    }
});
