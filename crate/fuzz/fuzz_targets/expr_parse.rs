#![no_main]

use cartan_core::expr::Expr;
use cartan_core::jet::Jet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        if let Ok(e) = Expr::parse(src, &["x", "y"]) {
            // evaluation may produce NaN or infinities but must not panic
            let _ = e.eval(&[Jet::variable(0.3, 0), Jet::variable(-1.2, 1)]);
            let _ = e.eval_f64(&[0.0, 0.0]);
        }
    }
});
