#![no_main]

use libfuzzer_sys::fuzz_target;
use trade_core::demo::{parse_demo_line, DemoCommand};

fuzz_target!(|line: &str| {
    if let Ok(DemoCommand::User(t) | DemoCommand::System(t)) = parse_demo_line(line) {
        assert!(!t.is_empty());
    }
});
