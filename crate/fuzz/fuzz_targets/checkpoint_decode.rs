#![no_main]
use agl_core::nn::checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = checkpoint::decode_bytes(data) {
        assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        for (_, t) in &entries {
            assert_eq!(t.len(), t.shape().iter().product::<usize>());
        }
    }
});
