#![no_main]

use libfuzzer_sys::fuzz_target;
use qmu_cli::config::parse_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_config(text) {
            if let Ok(resolved) = cfg.to_toml() {
                parse_config(&resolved).expect("resolved config must parse");
            }
        }
    }
});
