#![no_main]

use dash_core::io::{decode_checkpoint, write_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = decode_checkpoint(data) {
        let mut out = Vec::new();
        write_checkpoint(&params, &mut out).unwrap();
        let back = decode_checkpoint(&out).unwrap();
        assert_eq!(params.len(), back.len());
    }
});
