#![no_main]

use geodistill::io::{decode_feature_map, encode_feature_map};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = decode_feature_map(data) {
        let again = decode_feature_map(&encode_feature_map(&map)).unwrap();
        assert_eq!(map.values(), again.values());
    }
});
