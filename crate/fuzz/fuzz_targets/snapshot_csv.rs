#![no_main]

use koopman_quad::koopman::{read_snapshots, write_snapshots};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = read_snapshots(data) {
        let mut buf = Vec::new();
        write_snapshots(&set, &mut buf).expect("accepted snapshots serialize");
        let back = read_snapshots(buf.as_slice()).expect("re-read of written snapshots");
        assert_eq!(back.len(), set.len());
    }
});
