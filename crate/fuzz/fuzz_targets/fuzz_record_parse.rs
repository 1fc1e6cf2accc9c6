//! Fuzz the photocount-record JSON parser. Accepted records must
//! serialize back and re-parse to the same record.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rec) = cqed_homodyne::io::record_from_json(text, 1.0) {
            let out = cqed_homodyne::io::record_to_json(&rec).unwrap();
            let back = cqed_homodyne::io::record_from_json(&out, 1.0).unwrap();
            assert_eq!(rec, back);
        }
    }
});
