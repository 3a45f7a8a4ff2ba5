#![no_main]

use koopman_quad::harness::{compute_metrics, RunLog};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(log) = RunLog::read_csv(data) {
        let _ = compute_metrics(&log, None);
        let text = log.to_csv_string();
        RunLog::read_csv(text.as_bytes()).expect("re-read of written log");
    }
});
