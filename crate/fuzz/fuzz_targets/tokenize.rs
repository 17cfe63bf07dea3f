#![no_main]

use libfuzzer_sys::fuzz_target;
use trade_core::corpus::{canonical, tokenize};

fuzz_target!(|text: &str| {
    let toks = tokenize(text);
    assert!(toks.iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
    let c = canonical(text);
    assert_eq!(canonical(&c), c);
});
