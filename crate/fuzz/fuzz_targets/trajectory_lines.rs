#![no_main]
use agl_core::oracle::{label_trajectory, read_trajectories};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(trajs) = read_trajectories(data, 8, 0.5) {
        for t in &trajs {
            t.validate().expect("reader validates");
            let _ = label_trajectory(t);
        }
    }
});
