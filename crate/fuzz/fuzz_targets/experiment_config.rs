#![no_main]

use geodistill::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::from_toml(text) {
        ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    }
});
