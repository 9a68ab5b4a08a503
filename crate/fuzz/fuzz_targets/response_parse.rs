#![no_main]

use camforge::detector::ResponseDoc;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(doc) = ResponseDoc::parse(text) {
        if let Ok(set) = doc.detection_set() {
            assert_eq!(set.len(), doc.detections.len());
        }
        for rel in &doc.activations {
            assert!(!rel.starts_with('/') && !rel.split('/').any(|c| c == ".."));
        }
    }
});
