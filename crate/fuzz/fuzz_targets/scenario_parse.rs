//! Scenario files come from users; parsing and validation must never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pncsim::scenario::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(scenario) = ScenarioConfig::from_json_str(text) {
        // a scenario that validates must re-serialize and load back
        let round = scenario.to_json_string();
        let again = ScenarioConfig::from_json_str(&round).expect("roundtrip must stay valid");
        assert_eq!(again, scenario);
    }
});
