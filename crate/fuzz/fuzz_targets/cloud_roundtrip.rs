#![no_main]

use geodistill::io::{decode_cloud, encode_cloud};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cloud) = decode_cloud(data) {
        let again = decode_cloud(&encode_cloud(&cloud)).unwrap();
        assert!(cloud.bitwise_eq(&again));
    }
});
