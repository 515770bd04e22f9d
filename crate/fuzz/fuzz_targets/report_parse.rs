#![no_main]

use cartan_core::scenario::Report;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        if let Ok(r) = Report::from_json(src) {
            let json = r.to_json();
            let back = Report::from_json(&json).expect("exported reports parse");
            assert_eq!(back.to_json(), json);
            let _ = r.to_text();
        }
    }
});
