#![no_main]

use distdiff::data::{format_benchmark, parse_benchmark};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tracks) = parse_benchmark(text, "fuzz", "fuzz.txt") {
        // anything accepted must survive a format/parse cycle
        let again = parse_benchmark(&format_benchmark(&tracks), "fuzz", "fuzz.txt").expect("reparse");
        assert_eq!(again.len(), tracks.len());
    }
});
