#![no_main]

use cartan_core::scenario::parse_scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        if let Ok(s) = parse_scenario(src) {
            for c in &s.checks {
                assert!(c.tol > 0.0 && c.tol.is_finite());
            }
        }
    }
});
