#![no_main]

use dash_core::data::{read_csv, write_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((examples, dim)) = read_csv(data) {
        let mut out = Vec::new();
        write_csv(&examples, dim, &mut out).unwrap();
        let (again, dim2) = read_csv(out.as_slice()).unwrap();
        assert_eq!(dim, dim2);
        assert_eq!(examples.len(), again.len());
    }
});
