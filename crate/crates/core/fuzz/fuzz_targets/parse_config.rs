#![no_main]

use distdiff::cli::parse_ini;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ini) = parse_ini(text, "fuzz.ini") {
        let again = parse_ini(&ini.render(), "fuzz.ini").expect("rendered file reparses");
        assert_eq!(again.sections.len(), ini.sections.len());
    }
});
