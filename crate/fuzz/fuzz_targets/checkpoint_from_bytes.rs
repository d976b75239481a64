#![no_main]

use libfuzzer_sys::fuzz_target;
use treerl::qnet::QNetwork;

fuzz_target!(|data: &[u8]| {
    if let Ok(net) = QNetwork::from_bytes(data) {
        assert_eq!(net.to_bytes(), data);
        let input = vec![0.5; net.input_dim()];
        let q = net.forward(&input).expect("input matches dims");
        assert_eq!(q.len(), net.output_dim());
    }
});
