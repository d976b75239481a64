#![no_main]

use libfuzzer_sys::fuzz_target;
use treerl::scene::{parse_manifest, write_manifest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scenes) = parse_manifest(text) {
        // Anything accepted must survive a write/parse round trip unchanged.
        let again = parse_manifest(&write_manifest(&scenes)).expect("re-parse written manifest");
        assert_eq!(scenes, again);
    }
});
