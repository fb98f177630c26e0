#![no_main]

use libfuzzer_sys::fuzz_target;
use nbs_core::data::ColumnSpec;
use nbs_core::pipeline::parse_profiles;
use nbs_core::Schema;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let schema = Schema::new(
        vec![
            ColumnSpec::categorical("stage", vec!["I".into(), "II".into()]),
            ColumnSpec::numeric("score"),
        ],
        vec![ColumnSpec::numeric("age")],
    );
    if let Ok(profiles) = parse_profiles(text, &schema) {
        assert!(profiles
            .iter()
            .all(|p| p.x.len() == 2 && p.x.iter().all(|v| v.is_finite())));
    }
});
