#![no_main]

use distdiff::numerics::Container;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Container::decode(data) {
        let bytes = c.encode();
        assert_eq!(Container::decode(&bytes).expect("re-decode").encode(), bytes);
    }
});
