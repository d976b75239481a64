#![no_main]

use libfuzzer_sys::fuzz_target;
use treerl::mdp::ActionHistory;

fuzz_target!(|data: &[u8]| {
    let matrix: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Ok(history) = ActionHistory::from_matrix(&matrix) {
        assert_eq!(history.to_matrix(), matrix);
    }
});
