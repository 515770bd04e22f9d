use cartan_core::algebra::LieAlgebra;
use cartan_core::cartan::cocurvature;
use cartan_core::catalog;
use cartan_core::development::{develop_straight, induced_affine_map};
use cartan_core::geometry::{field_fn, levi_civita, scalar_form_fit, Metric};
use cartan_core::scenario::{self, parse_scenario, Report, RunOptions};
use cartan_core::transport::{parallel_transport, transport_matrix, BasePath};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 3)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenario_parser_rejects_garbage_without_panicking(src in "\\PC{0,200}") {
        let _ = parse_scenario(&src);
    }

    #[test]
    fn scenario_parser_survives_truncated_bundles(which in 0..scenario::BUNDLED.len(), cut in 0usize..4000) {
        let src = scenario::BUNDLED[which].1;
        let mut end = cut.min(src.len());
        while !src.is_char_boundary(end) {
            end -= 1;
        }
        let _ = parse_scenario(&src[..end]);
    }

    #[test]
    fn metric_specs_parse_or_fail_cleanly(spec in "[a-z_]{0,12}(\\([-0-9., e]{0,12}\\)?)?") {
        let _ = Metric::from_spec(&spec);
    }

    #[test]
    fn report_parser_rejects_garbage_without_panicking(src in "\\PC{0,200}") {
        let _ = Report::from_json(&src);
    }

    #[test]
    fn brackets_are_antisymmetric(which in 0usize..4, x in vec3(), y in vec3()) {
        let g = match which {
            0 => LieAlgebra::so3(),
            1 => LieAlgebra::heisenberg(),
            2 => LieAlgebra::abelian(3),
            _ => LieAlgebra::affine_line(),
        };
        let d = g.dim();
        let xy = g.bracket(&x[..d], &y[..d]).unwrap();
        let yx = g.bracket(&y[..d], &x[..d]).unwrap();
        prop_assert!(xy.iter().zip(&yx).all(|(a, b)| (a + b).abs() <= 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cocurvature_is_trilinear(x in vec3(), y in vec3(), v in vec3(), k in -3.0..3.0f64) {
        // a connection that is not Cartan, so the values are not all zero
        let m = catalog::load("sphere2").unwrap();
        let c = m.action.chart().with_connection(field_fn(|p| {
            (0..18).map(|i| &p[i % 2] * (0.1 * i as f64) + 0.05).collect()
        })).unwrap();
        let at = m.base_point.clone();
        let base = cocurvature(&c, &x, &y, &v, &at).unwrap();
        let kx: Vec<f64> = x.iter().map(|a| k * a).collect();
        let kv: Vec<f64> = v.iter().map(|a| k * a).collect();
        let want: Vec<f64> = base.iter().map(|a| k * a).collect();
        prop_assert!(close(&cocurvature(&c, &kx, &y, &v, &at).unwrap(), &want, 1e-9));
        prop_assert!(close(&cocurvature(&c, &x, &y, &kv, &at).unwrap(), &want, 1e-9));
        let swapped: Vec<f64> = cocurvature(&c, &y, &x, &v, &at).unwrap().iter().map(|a| -a).collect();
        prop_assert!(close(&swapped, &base, 1e-9));
    }

    #[test]
    fn transport_is_linear(u in vec3(), w in vec3(), k in -3.0..3.0f64, t in prop::collection::vec(0.0..1.0f64, 4)) {
        let m = catalog::load("heisenberg").unwrap();
        let b = &m.sample_box;
        let lerp = |i: usize, s: f64| b.lower()[i] + s * (b.upper()[i] - b.lower()[i]);
        let path = BasePath::polyline(0, &[
            m.base_point.clone(),
            vec![lerp(0, t[0]), lerp(1, t[1]), lerp(2, t[2])],
            vec![lerp(0, t[3]), lerp(1, t[0]), lerp(2, t[1])],
        ]).unwrap();
        let g = &m.glued;
        let combo: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a + k * b).collect();
        let lhs = parallel_transport(g, &path, &combo).unwrap();
        let pu = parallel_transport(g, &path, &u).unwrap();
        let pw = parallel_transport(g, &path, &w).unwrap();
        let rhs: Vec<f64> = pu.iter().zip(&pw).map(|(a, b)| a + k * b).collect();
        prop_assert!(close(&lhs, &rhs, 1e-8));
    }

    #[test]
    fn reversed_path_inverts_transport(which in 0usize..3, t in prop::collection::vec(0.0..1.0f64, 4)) {
        let name = ["sphere2", "hyperbolic2", "affine_line_group"][which];
        let m = catalog::load(name).unwrap();
        let b = &m.sample_box;
        let pt = |s: f64, r: f64| vec![b.lower()[0] + s * (b.upper()[0] - b.lower()[0]), b.lower()[1] + r * (b.upper()[1] - b.lower()[1])];
        let path = BasePath::polyline(0, &[m.base_point.clone(), pt(t[0], t[1]), pt(t[2], t[3])]).unwrap();
        let fwd = transport_matrix(&m.glued, &path).unwrap();
        let back = transport_matrix(&m.glued, &path.reversed()).unwrap();
        let n = fwd.nrows();
        prop_assert!((back * fwd - DMatrix::<f64>::identity(n, n)).amax() <= 1e-7);
    }

    #[test]
    fn scaled_sphere_has_reciprocal_curvature(k in 0.2..5.0f64, s in 0.0..1.0f64, r in 0.0..1.0f64) {
        let g = Metric::sphere(2).unwrap().scaled(k).unwrap();
        let (lo, hi) = g.chart().sample_region();
        let p = vec![lo[0] + s * (hi[0] - lo[0]), lo[1] + r * (hi[1] - lo[1])];
        let fit = scalar_form_fit(&levi_civita(&g), &g, &p).unwrap();
        prop_assert!((fit.s - 1.0 / k).abs() <= 1e-6 / k, "k = {k}: s = {}", fit.s);
    }

    #[test]
    fn induced_maps_compose(k1 in -1.0..1.0f64, k2 in -1.0..1.0f64, p in -0.4..0.4f64) {
        let m = catalog::load("counterexample_s1").unwrap();
        let (a, h, m0) = (&m.action, &m.homogeneous, &m.base_point);
        let e1 = catalog::circle_deck(k1).unwrap();
        let e2 = catalog::circle_deck(k2).unwrap();
        let whole = induced_affine_map(a, h, &e1.compose(&e2).unwrap(), m0).unwrap();
        let parts = induced_affine_map(a, h, &e1, m0).unwrap()
            .compose(h, &induced_affine_map(a, h, &e2, m0).unwrap()).unwrap();
        let x = develop_straight(a, h, m0, &[m0[0] + p]).unwrap();
        let d = h.coset_distance(&whole.apply(h, &x).unwrap(), &parts.apply(h, &x).unwrap()).unwrap();
        prop_assert!(d <= 1e-6, "distance {d}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn reports_round_trip(seed in any::<u64>(), tol_scale in 0.5..4.0f64) {
        let s = scenario::bundled("inline_circle").unwrap();
        let opts = RunOptions { seed: Some(seed), tol_scale, timings: false };
        let json = scenario::run(&s, &opts).unwrap().to_json();
        let back = Report::from_json(&json).unwrap();
        prop_assert_eq!(back.to_json(), json);
    }
}
