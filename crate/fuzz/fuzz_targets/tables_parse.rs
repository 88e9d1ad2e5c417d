//! Link-adaptation table files are swappable data; loading must never panic
//! and accepted tables must be safe to use.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pncsim::linkadapt::compute_tbs;
use pncsim::tables::LinkAdaptTables;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(tables) = LinkAdaptTables::from_json_str(text) {
        // accepted tables must support the whole quantize -> MCS -> TBS path
        for gamma_db in [-40.0, -5.0, 0.0, 7.5, 30.0] {
            let cqi = tables.quantize_cqi_db(gamma_db);
            assert!(cqi <= 15);
            if let Some(mcs) = tables.mcs_for_cqi(cqi) {
                for prb in [1u32, 51, 273] {
                    let t = compute_tbs(tables.mcs(mcs), prb, 1, &tables.tbs_small_table)
                        .expect("validated table entries yield positive N_info");
                    assert!(t.tbs_bits >= 24);
                }
            }
            let _ = tables.cqi_region_midpoint_db(cqi);
        }
    }
});
