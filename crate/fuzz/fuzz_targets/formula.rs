#![no_main]

use libfuzzer_sys::fuzz_target;
use nbs_core::Formula;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(f) = Formula::parse(text) {
        let again = Formula::parse(&f.to_string()).expect("display output parses");
        assert_eq!(f, again);
    }
});
