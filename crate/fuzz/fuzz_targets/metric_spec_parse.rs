#![no_main]

use cartan_core::geometry::Metric;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        if let Ok(g) = Metric::from_spec(src) {
            let _ = g.at(&g.chart().center());
        }
    }
});
