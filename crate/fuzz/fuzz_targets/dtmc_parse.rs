//! DTMC model import (reproducibility files) must never panic, and accepted
//! models must behave like probability objects.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pncsim::dtmc::DtmcModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = DtmcModel::from_json_str(text) {
        for lookahead in [0usize, 1, 5, 20] {
            let dist = model.marginal(lookahead);
            let sum: f64 = dist.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            let m = model.expected_success_matrix(lookahead);
            assert!(m.iter().all(|p| (0.0..=1.0 + 1e-12).contains(p)));
        }
        let round = model.to_json_string();
        DtmcModel::from_json_str(&round).expect("roundtrip must stay valid");
    }
});
