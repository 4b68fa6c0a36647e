#![no_main]

use libfuzzer_sys::fuzz_target;
use qmu_core::data::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(d) = Dataset::from_csv(text, 0) {
            let again = Dataset::from_csv(&d.to_csv(), 0).expect("snapshot must parse");
            assert_eq!(again.digest(), d.digest());
        }
    }
});
