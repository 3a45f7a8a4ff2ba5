#![no_main]

use koopman_quad::lmpc::{parse_qp_dump_line, solve_qp};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(dump) = parse_qp_dump_line(line) {
        // A validated dump has consistent sizes, so re-solving may fail only
        // with an error, never a panic.
        let (lo, hi) = dump.bounds();
        if lo.len() <= 64 {
            let _ = solve_qp(&dump.h_matrix(), &dump.p_vector(), &lo, &hi);
        }
    }
});
