#![no_main]

use geodistill::io::decode_cloud;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cloud) = decode_cloud(data) {
        assert_eq!(data.len(), 12 + 16 * cloud.len());
    }
});
