#![no_main]

use camforge_cli::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_text(text) {
        let again = RunConfig::from_text(&cfg.to_text()).expect("reparse");
        assert_eq!(again, cfg);
    }
});
