//! Bundled example models, each assembled from the pieces the checks need:
//! an action algebroid with its homogeneous model for development, a glued
//! algebroid for transport and completeness, and optional metric, Riemannian
//! chart and dual pair.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::algebra::{
    affine_line_realization, heisenberg_realization, so3_realization, translation_realization, AlgebraMap, LieAlgebra, MatrixRealization,
    Subalgebra, DEFAULT_TOL,
};
use crate::algebroid::{infinitesimalize, make_action_algebroid, ActionAlgebroid, GluedAlgebroid, Overlap};
use crate::development::{Closure, EquivariantMap, HomogeneousModel};
use crate::error::{Error, Result};
use crate::geometry::{field_fn, inverse_stereographic, stereographic, Chart, Metric, Shape, SmoothField};
use crate::jet::{self, Jet};
use crate::models::{abelian_pair, affine_pair, build_riemannian_cartan, heisenberg_pair, DualPair, RiemannianCartanChart};
use crate::transport::{BasePath, Seed};

pub const CATALOG: [&str; 6] = [
    "counterexample_s1",
    "flat_torus",
    "sphere2",
    "hyperbolic2",
    "affine_line_group",
    "heisenberg",
];

const GLUE_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct CatalogModel {
    pub name: &'static str,
    pub summary: &'static str,
    /// Action algebroid over a single chart, used for development and the
    /// Cartan checks.
    pub action: ActionAlgebroid,
    /// `#[X, Y] = sign·[#X, #Y]` for this action.
    pub action_sign: f64,
    pub homogeneous: HomogeneousModel,
    /// Development base point in the action chart.
    pub base_point: Vec<f64>,
    /// Box inside the action chart where development samples are drawn.
    pub sample_box: Chart,
    pub glued: GluedAlgebroid,
    /// Loops generating the monodromy, in the glued algebroid.
    pub loops: Vec<BasePath>,
    pub seeds: Vec<Seed>,
    /// Equivariant maps of the action chart with their twists.
    pub symmetries: Vec<EquivariantMap>,
    pub metric: Option<Metric>,
    pub riemannian: Option<RiemannianCartanChart>,
    pub dual_pair: Option<DualPair>,
}

pub fn describe(name: &str) -> Result<&'static str> {
    Ok(match name {
        "counterexample_s1" => "circle with the line action e^{-θ}∂θ glued by a deck transformation with twist e^{2π}",
        "flat_torus" => "translations of the plane glued into the square torus",
        "sphere2" => "rotations of the 2-sphere in stereographic coordinates; round metric",
        "hyperbolic2" => "Möbius action of sl(2) on the upper half-plane; hyperbolic metric",
        "affine_line_group" => "group of maps x ↦ ax + b acting on itself; canonical dual pair",
        "heisenberg" => "3-dimensional Heisenberg group acting on itself; canonical dual pair",
        _ => return Err(Error::UnknownCatalog(name.to_string())),
    })
}

pub fn load(name: &str) -> Result<CatalogModel> {
    match name {
        "counterexample_s1" => counterexample(),
        "flat_torus" => flat_torus(),
        "sphere2" => sphere2(),
        "hyperbolic2" => hyperbolic2(),
        "affine_line_group" => affine_line_group(),
        "heisenberg" => heisenberg(),
        _ => Err(Error::UnknownCatalog(name.to_string())),
    }
}

fn line_action() -> Result<ActionAlgebroid> {
    let f = SmoothField::from_fn(Chart::whole(1), Shape::Matrix { rows: 1, cols: 1 }, |x| vec![(-&x[0]).exp()]);
    make_action_algebroid(&LieAlgebra::abelian(1), &f)
}

/// The two arcs covering the circle and their overlaps: the identity on
/// `(π−½, π+½)` and `θ ↦ θ + 2π` with twist `e^{2π}` near `θ = 0`.
pub fn circle_atlas() -> Result<(Vec<Chart>, Vec<Overlap>)> {
    let boxes = vec![
        Chart::new(vec![-0.5], vec![PI + 0.5])?,
        Chart::new(vec![PI - 0.5], vec![2.0 * PI + 0.5])?,
    ];
    let a = Chart::new(vec![PI - 0.5], vec![PI + 0.5])?;
    let b0 = Chart::new(vec![-0.5], vec![0.5])?;
    let b1 = Chart::new(vec![2.0 * PI - 0.5], vec![2.0 * PI + 0.5])?;
    let ab = Overlap::translation(0, 1, a.clone(), vec![0.0], DMatrix::from_element(1, 1, 1.0));
    let ba = ab.reversed(a)?;
    let b01 = Overlap::translation(0, 1, b0, vec![2.0 * PI], DMatrix::from_element(1, 1, (2.0 * PI).exp()));
    let b10 = b01.reversed(b1)?;
    Ok((boxes, vec![ab, ba, b01, b10]))
}

/// Once around the circle with θ decreasing, from θ = 1 back to θ = 1.
pub fn circle_loop() -> Result<BasePath> {
    Ok(BasePath::polyline(0, &[vec![1.0], vec![0.0]])?
        .then(BasePath::polyline(1, &[vec![2.0 * PI], vec![PI]])?)
        .then(BasePath::polyline(0, &[vec![PI], vec![1.0]])?))
}

/// `θ ↦ θ + 2πk` with twist `e^{2πk}`.
pub fn circle_deck(k: f64) -> Result<EquivariantMap> {
    let s = 2.0 * PI * k;
    let a = LieAlgebra::abelian(1);
    Ok(EquivariantMap::new(
        field_fn(move |x| vec![&x[0] + s]),
        AlgebraMap::new(a.clone(), a, DMatrix::from_element(1, 1, s.exp()))?,
    ))
}

fn counterexample() -> Result<CatalogModel> {
    let action = line_action()?;
    let (boxes, overlaps) = circle_atlas()?;
    let glued = infinitesimalize(&action, &boxes, overlaps, GLUE_TOL)?;
    Ok(CatalogModel {
        name: "counterexample_s1",
        summary: describe("counterexample_s1")?,
        homogeneous: HomogeneousModel::group(translation_realization(1))?.with_orbit_point(vec![0.0, 1.0]),
        action,
        action_sign: -1.0,
        base_point: vec![0.0],
        sample_box: Chart::new(vec![-0.5], vec![2.0 * PI + 0.5])?,
        glued,
        loops: vec![circle_loop()?],
        seeds: vec![Seed {
            chart: 0,
            m: vec![0.0],
            x: vec![1.0],
        }],
        symmetries: vec![circle_deck(1.0)?],
        metric: Some(Metric::euclidean(1)?),
        riemannian: None,
        dual_pair: None,
    })
}

fn translations(n: usize) -> Result<ActionAlgebroid> {
    let mut id = vec![0.0; n * n];
    for i in 0..n {
        id[i * n + i] = 1.0;
    }
    let f = SmoothField::constant(Chart::whole(n), Shape::Matrix { rows: n, cols: n }, id);
    make_action_algebroid(&LieAlgebra::abelian(n), &f)
}

pub const TORUS_HALF_WIDTH: f64 = 0.4;

/// Four square boxes covering the unit torus, glued by integer translations.
pub fn torus_atlas() -> Result<(Vec<Chart>, Vec<Overlap>)> {
    let w = TORUS_HALF_WIDTH;
    let centres = [[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [0.5, 0.5]];
    let boxes = centres
        .iter()
        .map(|c| Chart::new(vec![c[0] - w, c[1] - w], vec![c[0] + w, c[1] + w]))
        .collect::<Result<Vec<_>>>()?;
    let mut overlaps = Vec::new();
    for (i, ci) in centres.iter().enumerate() {
        for (j, cj) in centres.iter().enumerate() {
            for kx in -1..=1 {
                for ky in -1..=1 {
                    if i == j && kx == 0 && ky == 0 {
                        continue;
                    }
                    let k = [kx as f64, ky as f64];
                    // box_i ∩ (box_j − k), in chart i coordinates
                    let lo: Vec<f64> = (0..2).map(|a| (ci[a] - w).max(cj[a] - w - k[a])).collect();
                    let hi: Vec<f64> = (0..2).map(|a| (ci[a] + w).min(cj[a] + w - k[a])).collect();
                    if (0..2).all(|a| hi[a] - lo[a] > 1e-9) {
                        overlaps.push(Overlap::translation(i, j, Chart::new(lo, hi)?, k.to_vec(), DMatrix::identity(2, 2)));
                    }
                }
            }
        }
    }
    Ok((boxes, overlaps))
}

/// The two generating loops of the torus, based at the origin of chart 0.
pub fn torus_loops() -> Result<Vec<BasePath>> {
    let mut out = Vec::new();
    for axis in 0..2 {
        let at = |v: f64| {
            let mut p = vec![0.0, 0.0];
            p[axis] = v;
            p
        };
        // chart 0 → chart 1 (x) or chart 2 (y), then back to chart 0 shifted by −1
        let mid = if axis == 0 { 1 } else { 2 };
        out.push(
            BasePath::polyline(0, &[at(0.0), at(0.3)])?
                .then(BasePath::polyline(mid, &[at(0.3), at(0.8)])?)
                .then(BasePath::polyline(0, &[at(-0.2), at(0.0)])?),
        );
    }
    Ok(out)
}

fn flat_torus() -> Result<CatalogModel> {
    let action = translations(2)?;
    let (boxes, overlaps) = torus_atlas()?;
    let glued = infinitesimalize(&action, &boxes, overlaps, GLUE_TOL)?;
    let a2 = LieAlgebra::abelian(2);
    let shift = |k: [f64; 2]| -> Result<EquivariantMap> {
        Ok(EquivariantMap::new(
            field_fn(move |x| vec![&x[0] + k[0], &x[1] + k[1]]),
            AlgebraMap::identity(&a2),
        ))
    };
    Ok(CatalogModel {
        name: "flat_torus",
        summary: describe("flat_torus")?,
        homogeneous: HomogeneousModel::group(translation_realization(2))?.with_orbit_point(vec![0.0, 0.0, 1.0]),
        action,
        action_sign: -1.0,
        base_point: vec![0.0, 0.0],
        sample_box: Chart::cube(2, -1.0, 1.0)?,
        glued,
        loops: torus_loops()?,
        seeds: vec![Seed {
            chart: 0,
            m: vec![0.0, 0.0],
            x: vec![1.0, 0.3],
        }],
        symmetries: vec![shift([1.0, 0.0])?, shift([0.0, 1.0])?],
        metric: Some(Metric::euclidean(2)?),
        riemannian: Some(build_riemannian_cartan(&Metric::euclidean(2)?)?),
        dual_pair: Some(abelian_pair(2)?),
    })
}

/// Rotations of `S²` pulled back by stereographic projection: column `i` is
/// the image of `e_i × P`.
pub fn sphere_rotations() -> Result<ActionAlgebroid> {
    let chart = Chart::cube(2, -50.0, 50.0)?.with_sample_region(vec![-1.5; 2], vec![1.5; 2])?;
    let f = SmoothField::from_fn(chart, Shape::Matrix { rows: 2, cols: 3 }, |x| {
        let p = inverse_stereographic(x);
        let mut out = vec![Jet::constant(0.0); 6];
        for i in 0..3 {
            let mut e = [0.0; 3];
            e[i] = 1.0;
            let v = [
                e[1] * &p[2] - e[2] * &p[1],
                e[2] * &p[0] - e[0] * &p[2],
                e[0] * &p[1] - e[1] * &p[0],
            ];
            let d = jet::directional(stereographic, &p, &v);
            for k in 0..2 {
                out[k * 3 + i] = d[k].clone();
            }
        }
        out
    });
    make_action_algebroid(&LieAlgebra::so3(), &f)
}

/// `G₀ = SO(3)`, `H₀` the rotations fixing the point over `m0`.
pub fn sphere_model(m0: &[f64]) -> Result<HomogeneousModel> {
    let p0 = jet::values(&inverse_stereographic(&jet::consts(m0)));
    let h0 = Subalgebra::new(LieAlgebra::so3(), vec![p0.clone()], 1e-9)?;
    Ok(
        HomogeneousModel::new(so3_realization(), h0, Closure::AssertedClosed)?.with_readout(move |g| {
            let q = g * DVector::from_column_slice(&p0);
            jet::values(&stereographic(&jet::consts(q.as_slice())))
        }),
    )
}

fn sphere2() -> Result<CatalogModel> {
    let action = sphere_rotations()?;
    let m0 = vec![0.2, -0.1];
    let rot = so3_realization().exp(&[0.0, 0.0, 0.6], 1.0)?;
    let rr: Vec<f64> = rot.transpose().as_slice().to_vec();
    let base = field_fn(move |x| stereographic(&jet::mat_vec(&jet::consts(&rr), &inverse_stereographic(x), 3, 3)));
    let sym = EquivariantMap::new(base, AlgebraMap::new(LieAlgebra::so3(), LieAlgebra::so3(), rot)?);
    let metric = Metric::sphere(2)?;
    Ok(CatalogModel {
        name: "sphere2",
        summary: describe("sphere2")?,
        homogeneous: sphere_model(&m0)?,
        glued: GluedAlgebroid::single(action.chart().clone()),
        action,
        action_sign: -1.0,
        base_point: m0,
        sample_box: Chart::cube(2, -1.0, 1.0)?,
        loops: vec![],
        // rotation about the polar axis: circles about the origin
        seeds: vec![Seed {
            chart: 0,
            m: vec![0.5, 0.0],
            x: vec![0.0, 0.0, 1.0],
        }],
        symmetries: vec![sym],
        riemannian: Some(build_riemannian_cartan(&metric)?),
        metric: Some(metric),
        dual_pair: None,
    })
}

/// `sl(2)` with basis `E = [[0,1],[0,0]]`, `H = ½[[1,0],[0,−1]]`, `F = [[0,0],[−1,0]]`,
/// acting by `z ↦ (az+b)/(cz+d)`; fundamental fields `∂z`, `z∂z`, `z²∂z`.
pub fn sl2_realization() -> Result<MatrixRealization> {
    let gens = vec![
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.5]),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -1.0, 0.0]),
    ];
    let alg = LieAlgebra::from_brackets(3, &[(0, 1, 0, -1.0), (0, 2, 1, -2.0), (1, 2, 2, -1.0)])?.with_labels(vec![
        "E".into(),
        "H".into(),
        "F".into(),
    ]);
    MatrixRealization::new(alg, gens, DEFAULT_TOL)
}

pub fn upper_half_plane() -> Result<Chart> {
    Chart::new(vec![-1e3, 0.0], vec![1e3, 1e6])?.with_sample_region(vec![-1.5, 0.5], vec![1.5, 2.0])
}

pub fn mobius_action() -> Result<ActionAlgebroid> {
    let real = sl2_realization()?;
    let f = SmoothField::from_fn(upper_half_plane()?, Shape::Matrix { rows: 2, cols: 3 }, |z| {
        let (x, y) = (&z[0], &z[1]);
        vec![
            Jet::constant(1.0),
            x.clone(),
            x * x - y * y,
            Jet::constant(0.0),
            y.clone(),
            2.0 * x * y,
        ]
    });
    make_action_algebroid(real.algebra(), &f)
}

fn mobius(g: &DMatrix<f64>, x: f64, y: f64) -> Vec<f64> {
    // (a z + b)/(c z + d) for z = x + iy
    let (a, b, c, d) = (g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]);
    let (nr, ni) = (a * x + b, a * y);
    let (dr, di) = (c * x + d, c * y);
    let den = dr * dr + di * di;
    vec![(nr * dr + ni * di) / den, (ni * dr - nr * di) / den]
}

fn hyperbolic2() -> Result<CatalogModel> {
    let real = sl2_realization()?;
    let action = mobius_action()?;
    // the stabilizer of i is generated by E + F
    let h0 = Subalgebra::new(real.algebra().clone(), vec![vec![1.0, 0.0, 1.0]], 1e-9)?;
    let homogeneous = HomogeneousModel::new(real.clone(), h0, Closure::AssertedClosed)?.with_readout(|g| mobius(g, 0.0, 1.0));
    // z ↦ 2z is Möbius for diag(√2, 1/√2); its twist is Ad
    let g = DMatrix::from_row_slice(2, 2, &[2f64.sqrt(), 0.0, 0.0, 0.5f64.sqrt()]);
    let (ad, _) = real.adjoint(&g)?;
    let sym = EquivariantMap::new(
        field_fn(|z| vec![2.0 * &z[0], 2.0 * &z[1]]),
        AlgebraMap::new(real.algebra().clone(), real.algebra().clone(), ad)?,
    );
    let metric = Metric::hyperbolic(2)?;
    Ok(CatalogModel {
        name: "hyperbolic2",
        summary: describe("hyperbolic2")?,
        homogeneous,
        glued: GluedAlgebroid::single(action.chart().clone()),
        action,
        action_sign: -1.0,
        base_point: vec![0.0, 1.0],
        sample_box: Chart::new(vec![-1.0, 0.5], vec![1.0, 2.0])?,
        loops: vec![],
        // the elliptic generator E + F turns points about i
        seeds: vec![Seed {
            chart: 0,
            m: vec![0.3, 1.5],
            x: vec![1.0, 0.0, 1.0],
        }],
        symmetries: vec![sym],
        riemannian: Some(build_riemannian_cartan(&metric)?),
        metric: Some(metric),
        dual_pair: None,
    })
}

/// Left multiplication by the realized element `h`, whose twist is `Ad_h`.
/// `elem` builds the group matrix (row-major) from chart coordinates and
/// `coords` reads them back.
fn left_translation(
    real: &MatrixRealization,
    h: DMatrix<f64>,
    elem: fn(&[Jet]) -> Vec<Jet>,
    coords: fn(&[Jet]) -> Vec<Jet>,
) -> Result<EquivariantMap> {
    let n = h.nrows();
    let (ad, _) = real.adjoint(&h)?;
    let hv: Vec<f64> = h.transpose().as_slice().to_vec();
    let base = field_fn(move |x| coords(&jet::mat_mul(&jet::consts(&hv), &elem(x), n, n, n)));
    Ok(EquivariantMap::new(
        base,
        AlgebraMap::new(real.algebra().clone(), real.algebra().clone(), ad)?,
    ))
}

fn affine_jet_coords(m: &[Jet]) -> Vec<Jet> {
    vec![m[0].clone(), m[1].clone()]
}

fn heisenberg_jet_coords(m: &[Jet]) -> Vec<Jet> {
    vec![m[1].clone(), m[5].clone(), m[2].clone()]
}

fn affine_elem(x: &[Jet]) -> Vec<Jet> {
    vec![x[0].clone(), x[1].clone(), Jet::constant(0.0), Jet::constant(1.0)]
}

fn heisenberg_elem(x: &[Jet]) -> Vec<Jet> {
    let (o, l) = (Jet::constant(0.0), Jet::constant(1.0));
    vec![
        l.clone(),
        x[0].clone(),
        x[2].clone(),
        o.clone(),
        l.clone(),
        x[1].clone(),
        o.clone(),
        o,
        l,
    ]
}

fn affine_coords(g: &DMatrix<f64>) -> Vec<f64> {
    vec![g[(0, 0)], g[(0, 1)]]
}

fn heisenberg_coords(g: &DMatrix<f64>) -> Vec<f64> {
    vec![g[(0, 1)], g[(1, 2)], g[(0, 2)]]
}

fn affine_line_group() -> Result<CatalogModel> {
    let real = affine_line_realization();
    // right-invariant fields a∂a + b∂b, ∂b generate left multiplication
    let chart = Chart::new(vec![0.0, -1e9], vec![1e9, 1e9])?.with_sample_region(vec![0.4, -2.0], vec![3.0, 2.0])?;
    let f = SmoothField::from_fn(chart, Shape::Matrix { rows: 2, cols: 2 }, |x| {
        vec![x[0].clone(), Jet::constant(0.0), x[1].clone(), Jet::constant(1.0)]
    });
    let action = make_action_algebroid(real.algebra(), &f)?;
    let h = DMatrix::from_row_slice(2, 2, &[1.5, -0.4, 0.0, 1.0]);
    let sym = left_translation(&real, h, affine_elem, affine_jet_coords)?;
    let metric = left_invariant_metric(2, action.chart().base().clone(), |x| {
        let a2 = (&x[0] * &x[0]).recip();
        vec![a2.clone(), Jet::constant(0.0), Jet::constant(0.0), a2]
    })?;
    Ok(CatalogModel {
        name: "affine_line_group",
        summary: describe("affine_line_group")?,
        homogeneous: HomogeneousModel::group(real)?.with_readout(affine_coords),
        glued: GluedAlgebroid::single(action.chart().clone()),
        action,
        action_sign: -1.0,
        base_point: vec![1.0, 0.0],
        sample_box: Chart::new(vec![0.5, -1.5], vec![2.5, 1.5])?,
        loops: vec![],
        seeds: vec![Seed {
            chart: 0,
            m: vec![1.0, 0.0],
            x: vec![0.0, 1.0],
        }],
        symmetries: vec![sym],
        metric: Some(metric),
        riemannian: None,
        dual_pair: Some(affine_pair()),
    })
}

fn heisenberg() -> Result<CatalogModel> {
    let real = heisenberg_realization();
    // right-invariant fields ∂x + y∂z, ∂y, ∂z
    let chart = Chart::whole(3).with_sample_region(vec![-1.5; 3], vec![1.5; 3])?;
    let f = SmoothField::from_fn(chart, Shape::Matrix { rows: 3, cols: 3 }, |x| {
        let (o, l) = (Jet::constant(0.0), Jet::constant(1.0));
        vec![
            l.clone(),
            o.clone(),
            o.clone(),
            o.clone(),
            l.clone(),
            o,
            x[1].clone(),
            Jet::constant(0.0),
            l,
        ]
    });
    let action = make_action_algebroid(real.algebra(), &f)?;
    let h = DMatrix::from_row_slice(3, 3, &[1.0, 0.7, -0.2, 0.0, 1.0, 0.4, 0.0, 0.0, 1.0]);
    let sym = left_translation(&real, h, heisenberg_elem, heisenberg_jet_coords)?;
    // left-invariant coframe dx, dy, dz − x dy
    let metric = left_invariant_metric(3, action.chart().base().clone(), |v| {
        let (o, l) = (Jet::constant(0.0), Jet::constant(1.0));
        let x = &v[0];
        vec![l.clone(), o.clone(), o.clone(), o.clone(), 1.0 + x * x, -x, o, -x, l]
    })?;
    Ok(CatalogModel {
        name: "heisenberg",
        summary: describe("heisenberg")?,
        homogeneous: HomogeneousModel::group(real)?.with_readout(heisenberg_coords),
        glued: GluedAlgebroid::single(action.chart().clone()),
        action,
        action_sign: -1.0,
        base_point: vec![0.0, 0.0, 0.0],
        sample_box: Chart::cube(3, -1.0, 1.0)?,
        loops: vec![],
        seeds: vec![Seed {
            chart: 0,
            m: vec![0.0, 0.0, 0.0],
            x: vec![1.0, 0.0, 0.0],
        }],
        symmetries: vec![sym],
        metric: Some(metric),
        riemannian: None,
        dual_pair: Some(heisenberg_pair()),
    })
}

fn left_invariant_metric(n: usize, chart: Chart, f: impl Fn(&[Jet]) -> Vec<Jet> + Send + Sync + 'static) -> Result<Metric> {
    Metric::new("left-invariant", SmoothField::from_fn(chart, Shape::Matrix { rows: n, cols: n }, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::{check_action_homomorphism, check_cocycle};
    use crate::development::{check_equivariant_twist, develop_straight, equivariance_diagram_check};
    use crate::transport::{invariant_metric_check, monodromy};

    #[test]
    fn every_catalog_model_loads() {
        for name in CATALOG {
            let m = load(name).unwrap();
            assert_eq!(m.name, name);
            assert!(!describe(name).unwrap().is_empty());
        }
        assert!(matches!(load("klein_bottle"), Err(Error::UnknownCatalog(_))));
    }

    #[test]
    fn actions_are_homomorphisms_with_recorded_sign() {
        for name in CATALOG {
            let m = load(name).unwrap();
            let s = m.sample_box.halton_points(6);
            let rep = check_action_homomorphism(&m.action, &s, m.action_sign, 1e-9).unwrap();
            assert!(rep.pass, "{name}: {}", rep.max_residual);
        }
    }

    #[test]
    fn symmetries_are_equivariant_and_developments_read_back() {
        for name in CATALOG {
            let m = load(name).unwrap();
            let s = m.sample_box.halton_points(5);
            for e in &m.symmetries {
                let rep = check_equivariant_twist(&m.action, e, &s, 1e-8).unwrap();
                assert!(rep.pass, "{name}: {}", rep.max_residual);
                let d = equivariance_diagram_check(&m.action, &m.homogeneous, e, &m.base_point, &s, 1e-5).unwrap();
                assert!(d.pass, "{name}: diagram {}", d.max_residual);
            }
            // with a readout in the same coordinates, development recovers the point
            if name != "counterexample_s1" {
                let p = &s[2];
                let c = develop_straight(&m.action, &m.homogeneous, &m.base_point, p).unwrap();
                let back = m.homogeneous.readout(&c).unwrap();
                let want: Vec<f64> = if name == "flat_torus" {
                    p.iter().zip(&m.base_point).map(|(a, b)| a - b).collect()
                } else {
                    p.clone()
                };
                let err = back.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-7, "{name}: {back:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn atlases_satisfy_the_cocycle_condition() {
        let (_, o) = torus_atlas().unwrap();
        assert!(check_cocycle(&o, 1e-12).pass);
        let (_, o) = circle_atlas().unwrap();
        assert!(check_cocycle(&o, 1e-12).pass);
        let t = load("flat_torus").unwrap();
        for l in &t.loops {
            let mono = monodromy(&t.glued, l).unwrap();
            assert!((mono.matrix - DMatrix::identity(2, 2)).amax() < 1e-12);
        }
    }

    #[test]
    fn invariant_metrics_on_catalog_models() {
        for name in ["flat_torus", "sphere2", "hyperbolic2", "affine_line_group", "heisenberg"] {
            let m = load(name).unwrap();
            let s = m.sample_box.halton_points(6);
            let rep = invariant_metric_check(m.action.chart(), m.metric.as_ref().unwrap(), &s, 1e-7).unwrap();
            assert!(rep.pass, "{name}: {}", rep.max_residual);
        }
        let c = load("counterexample_s1").unwrap();
        let rep = invariant_metric_check(&c.glued.charts()[0], c.metric.as_ref().unwrap(), &[vec![0.5], vec![1.5]], 1e-7).unwrap();
        assert!(!rep.pass);
    }
}
