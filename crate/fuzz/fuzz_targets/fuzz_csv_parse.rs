//! Fuzz the CSV series parser. Accepted tables must round-trip
//! byte-identically through the writer.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(series) = cqed_homodyne::io::Series::from_csv(text) {
            let out = series.to_csv();
            let back = cqed_homodyne::io::Series::from_csv(&out).unwrap();
            assert_eq!(series, back);
            assert_eq!(out, back.to_csv());
        }
    }
});
