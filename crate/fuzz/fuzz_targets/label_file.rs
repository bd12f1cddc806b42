#![no_main]

use geodistill::io::{format_labels, parse_labels};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(labels) = parse_labels(text) {
        let again = parse_labels(&format_labels(&labels)).unwrap();
        assert_eq!(labels.len(), again.len());
    }
});
