#![no_main]

use libfuzzer_sys::fuzz_target;
use tracked_bridge::experiments::ConfigFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ConfigFile::parse(text) {
        assert!(cfg.ensemble_size >= 100);
        assert!(!cfg.intensities.is_empty());
    }
});
