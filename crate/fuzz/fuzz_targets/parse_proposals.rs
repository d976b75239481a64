#![no_main]

use libfuzzer_sys::fuzz_target;
use treerl::tree_search::parse_proposals;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scenes) = parse_proposals(text) {
        for s in &scenes {
            assert!(!s.proposals.is_empty());
            assert!(s.proposals.iter().all(|(level, w)| *level >= 1 && w.width() > 0.0 && w.height() > 0.0));
        }
    }
});
