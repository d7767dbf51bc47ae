#![no_main]

use dash_cli::commands::compare::CompareConfig;
use dash_cli::commands::theory::TheoryVerifyConfig;
use dash_cli::commands::train::TrainRunConfig;
use dash_cli::config::{apply_set, parse_config};
use libfuzzer_sys::fuzz_target;

// Input: a config document, then `--set` assignments one per line after a NUL.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (doc, sets) = text.split_once('\0').unwrap_or((text, ""));
    let sets: Vec<String> = sets.lines().map(str::to_owned).collect();
    let _ = parse_config::<TrainRunConfig>(Some(doc), &sets);
    let _ = parse_config::<TheoryVerifyConfig>(Some(doc), &sets);
    let _ = parse_config::<CompareConfig>(Some(doc), &sets);
    let mut v = serde_json::json!({});
    for s in &sets {
        let _ = apply_set(&mut v, s);
    }
});
