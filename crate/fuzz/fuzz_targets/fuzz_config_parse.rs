//! Fuzz the strict TOML run-configuration parser. Must never panic;
//! accepted configs must survive re-validation.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = cqed_homodyne::io::parse_config(text) {
            // anything the parser accepts must also re-validate
            cqed_homodyne::io::validate_config(&cfg).unwrap();
        }
    }
});
