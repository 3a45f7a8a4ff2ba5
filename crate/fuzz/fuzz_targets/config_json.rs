#![no_main]

use koopman_quad::harness::SimConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = SimConfig::from_json(text) {
        // Validated configs must build their terrain without panicking.
        let _ = cfg.scenario.terrain.build();
        let _ = cfg.scenario.velocity_at(cfg.scenario.duration * 0.5);
        SimConfig::from_json(&cfg.to_json()).expect("re-read of written config");
    }
});
