#![no_main]

use libfuzzer_sys::fuzz_target;
use qmu_core::audit::{parse_report, report_digest, report_to_json};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(report) = parse_report(text) {
            if let Ok(json) = report_to_json(&report) {
                let again = parse_report(&json).expect("emitted report must parse");
                assert_eq!(report_digest(&again).ok(), report_digest(&report).ok());
            }
        }
    }
});
