#![no_main]

use dash_core::io::read_metrics;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_metrics(data);
});
