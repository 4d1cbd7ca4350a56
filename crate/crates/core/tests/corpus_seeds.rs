//! The checked-in fuzz seeds must be valid inputs, or the fuzzers start from
//! nothing but error paths.

use std::fs;
use std::path::PathBuf;

use agl_core::agle::AgleFile;
use agl_core::config::RunConfig;
use agl_core::env::read_tasks;
use agl_core::eval::TraceRecord;
use agl_core::nn::checkpoint;
use agl_core::oracle::read_trajectories;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<Vec<u8>> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| fs::read(e.unwrap().path()).unwrap())
        .collect();
    assert!(!out.is_empty(), "no seeds for {target}");
    out.sort();
    out
}

#[test]
fn every_seed_parses() {
    for s in seeds("agle_decode") {
        assert!(AgleFile::decode(&s).unwrap().validate(None).is_empty());
    }
    for s in seeds("checkpoint_decode") {
        assert!(!checkpoint::decode_bytes(&s).unwrap().is_empty());
    }
    for s in seeds("task_lines") {
        assert!(!read_tasks(s.as_slice(), 8, 0.5).unwrap().is_empty());
    }
    for s in seeds("trajectory_lines") {
        assert!(!read_trajectories(s.as_slice(), 8, 0.5).unwrap().is_empty());
    }
    for s in seeds("run_config") {
        RunConfig::from_json(std::str::from_utf8(&s).unwrap()).unwrap();
    }
    for s in seeds("trace_record") {
        serde_json::from_slice::<TraceRecord>(&s).unwrap().replay().unwrap();
    }
}
