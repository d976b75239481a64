//! Replays the checked-in fuzz corpus seeds on stable with the same
//! invariants the fuzz targets assert.

use std::fs;
use std::path::PathBuf;

use treerl::mdp::ActionHistory;
use treerl::qnet::QNetwork;
use treerl::scene::{parse_manifest, write_manifest};
use treerl::tree_search::parse_proposals;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn manifest_seeds() {
    let mut accepted = 0;
    for (name, data) in seeds("parse_manifest") {
        let text = std::str::from_utf8(&data).unwrap();
        if let Ok(scenes) = parse_manifest(text) {
            assert_eq!(parse_manifest(&write_manifest(&scenes)).unwrap(), scenes, "{name}");
            accepted += 1;
        }
    }
    assert!(accepted >= 3);
}

#[test]
fn checkpoint_seeds() {
    let mut accepted = 0;
    for (name, data) in seeds("checkpoint_from_bytes") {
        if let Ok(net) = QNetwork::from_bytes(&data) {
            assert_eq!(net.to_bytes(), data, "{name}");
            assert_eq!(net.forward(&vec![0.5; net.input_dim()]).unwrap().len(), net.output_dim());
            accepted += 1;
        }
    }
    assert_eq!(accepted, 2);
}

#[test]
fn proposal_seeds() {
    let parsed: Vec<bool> = seeds("parse_proposals")
        .iter()
        .map(|(_, d)| parse_proposals(std::str::from_utf8(d).unwrap()).is_ok())
        .collect();
    assert_eq!(parsed, [false, true, true]);
}

#[test]
fn history_seeds() {
    for (name, data) in seeds("history_from_matrix") {
        let matrix: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let history = ActionHistory::from_matrix(&matrix).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(history.to_matrix(), matrix);
    }
}
