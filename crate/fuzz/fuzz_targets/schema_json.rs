#![no_main]

use libfuzzer_sys::fuzz_target;
use nbs_core::data::{read_csv, SchemaMapping};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = SchemaMapping::from_json(text) {
        let again = SchemaMapping::from_json(&m.to_json()).expect("own output parses");
        assert_eq!(m, again);
        let _ = read_csv(&b"A,Z,Y,delta,delta_star\n1,2,3,0,0\n"[..], &m);
    }
});
