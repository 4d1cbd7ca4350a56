#![no_main]
use agl_core::agle::AgleFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = AgleFile::decode(data) {
        let _ = file.validate(None);
        let again = AgleFile::decode(&file.encode()).expect("re-encoded file decodes");
        assert_eq!(again, file);
    }
});
