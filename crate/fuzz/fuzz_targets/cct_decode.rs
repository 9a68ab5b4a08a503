#![no_main]

use camforge::cct;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = cct::decode(data) {
        let bytes = cct::encode(&t);
        assert_eq!(&bytes[..], data);
        let _ = t.to_stack();
    }
});
