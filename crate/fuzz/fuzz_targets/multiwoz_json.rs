#![no_main]

use libfuzzer_sys::fuzz_target;
use trade_core::corpus::{convert_multiwoz, corpus_to_json, parse_corpus};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(corpus) = convert_multiwoz(text) {
        let again = parse_corpus(&corpus_to_json(&corpus)).expect("converted corpus re-parses");
        assert_eq!(again, corpus);
    }
});
