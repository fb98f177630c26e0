#![no_main]

use libfuzzer_sys::fuzz_target;
use nbs_core::PipelineSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = serde_json::from_str::<PipelineSpec>(text) {
        if spec.validate().is_ok() {
            let _ = spec.grid();
        }
    }
});
