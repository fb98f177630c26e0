#![no_main]

use libfuzzer_sys::fuzz_target;
use nbs_core::data::{read_csv, validate, SchemaMapping};

const MAPPING: &str = r#"{
  "treatment": "A", "time": "Z", "cost": "Y",
  "cost_censored": "delta_star", "survival_censored": "delta",
  "x": [{"name": "stage", "type": "categorical", "levels": ["I", "II"]}],
  "l": [{"name": "age", "type": "numeric"}]
}"#;

fuzz_target!(|data: &[u8]| {
    let mapping = SchemaMapping::from_json(MAPPING).unwrap();
    if let Ok(d) = read_csv(data, &mapping) {
        let _ = validate(&d);
        let _ = d.censoring_fraction();
    }
});
