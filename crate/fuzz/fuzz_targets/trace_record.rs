#![no_main]
use agl_core::eval::TraceRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = serde_json::from_slice::<TraceRecord>(data) {
        let _ = trace.replay();
    }
});
