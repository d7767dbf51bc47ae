#![no_main]

use dash_core::theory::BoundReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = BoundReport::from_json(s);
    }
});
