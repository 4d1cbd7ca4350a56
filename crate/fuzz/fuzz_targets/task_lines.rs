#![no_main]
use agl_core::env::{read_tasks, write_tasks};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tasks) = read_tasks(data, 8, 0.5) {
        let mut out = Vec::new();
        write_tasks(&mut out, &tasks).expect("write to memory");
        assert_eq!(read_tasks(out.as_slice(), 8, 0.5).expect("round trip"), tasks);
    }
});
