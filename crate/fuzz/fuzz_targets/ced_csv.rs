#![no_main]

use libfuzzer_sys::fuzz_target;
use nbs_core::nbs::CedCurve;

fuzz_target!(|data: &[u8]| {
    if let Ok(curve) = CedCurve::read_csv(data) {
        let _ = curve.to_svg();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).expect("write to memory");
    }
});
