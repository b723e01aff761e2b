#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Must reject or accept without panicking or overallocating; accepted
    // inputs must survive a write/read round trip.
    let mut cursor = data;
    if let Ok(ds) = topopt::dataset::parse_dataset(&mut cursor) {
        let dir = std::env::temp_dir().join(format!("fuzz-topd-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.topd");
        topopt::dataset::write_dataset(&ds, &path).unwrap();
        let back = topopt::dataset::read_dataset(&path).unwrap();
        assert_eq!(back.samples.len(), ds.samples.len());
        for (a, b) in ds.samples.iter().zip(back.samples.iter()) {
            assert_eq!(a.input.data(), b.input.data());
            assert_eq!(a.target, b.target);
        }
    }
});
