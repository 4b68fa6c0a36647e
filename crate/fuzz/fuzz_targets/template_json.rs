#![no_main]

use libfuzzer_sys::fuzz_target;
use qmu_core::pqc::CircuitTemplate;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(t) = CircuitTemplate::from_json(text) {
            let again = CircuitTemplate::from_json(&t.to_json()).expect("serialized template must parse");
            assert_eq!(again, t);
        }
    }
});
