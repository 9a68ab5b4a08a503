#![no_main]

use camforge_cli::scene_io::parse_ground_truth;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((doc, boxes)) = parse_ground_truth(text) {
        assert_eq!(doc.boxes.len(), boxes.len());
        let (again, _) = parse_ground_truth(&doc.to_json()).expect("reparse");
        assert_eq!(again, doc);
    }
});
