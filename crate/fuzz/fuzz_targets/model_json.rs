#![no_main]

use libfuzzer_sys::fuzz_target;
use nbs_core::models::ModelDocument;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = ModelDocument::from_json(text) {
        let again = ModelDocument::from_json(&doc.to_json()).expect("own output parses");
        assert_eq!(doc, again);
        let _ = doc.into_fitted();
    }
});
