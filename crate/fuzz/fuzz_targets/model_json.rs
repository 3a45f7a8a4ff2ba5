#![no_main]

use koopman_quad::koopman::{model_from_json, model_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = model_from_json(text) {
        // Anything accepted must survive a write and re-read unchanged.
        let again = model_to_json(&model).expect("accepted model serializes");
        let back = model_from_json(&again).expect("re-read of written model");
        assert_eq!(back.a.shape(), model.a.shape());
        assert_eq!(back.mode, model.mode);
    }
});
