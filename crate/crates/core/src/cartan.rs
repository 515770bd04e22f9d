//! Associated connections, torsion, cocurvature and curvature of a chart
//! connection, together with Cartan/flatness certification.
//!
//! Every pointwise tensor here is evaluated with extensions that are
//! constant in the chart trivialization; tensoriality makes the result
//! independent of that choice (a test cross-checks this).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::algebra::LieAlgebra;
use crate::algebroid::{constant_section, AlgebroidChart};
use crate::error::{Error, Result};
use crate::geometry::{field_fn, vf_bracket, FieldFn};
use crate::jet::{self, Jet};
use crate::report::TensorReport;

pub const CARTAN_TOL: f64 = 1e-7;
pub const CARTAN_SAMPLES: usize = 50;

fn anchor_of(c: &AlgebroidChart, s: &FieldFn) -> FieldFn {
    let c = c.clone();
    let s = s.clone();
    field_fn(move |x| c.apply_anchor(x, &s(x)))
}

fn covariant_of(c: &AlgebroidChart, v: &FieldFn, s: &FieldFn) -> FieldFn {
    let c = c.clone();
    let (v, s) = (v.clone(), s.clone());
    field_fn(move |x| c.covariant(&v(x), &s, x))
}

fn bracket_of(c: &AlgebroidChart, s1: &FieldFn, s2: &FieldFn) -> FieldFn {
    let c = c.clone();
    let (s1, s2) = (s1.clone(), s2.clone());
    field_fn(move |x| c.bracket_jet(&s1, &s2, x))
}

/// `∇̄_X V = #∇_V X + [#X, V]` on jets.
pub fn nabla_bar_tm_jet(c: &AlgebroidChart, s: &FieldFn, v: &FieldFn, x: &[Jet]) -> Vec<Jet> {
    let nv = c.covariant(&v(x), s, x);
    let a = c.apply_anchor(x, &nv);
    let b = vf_bracket(&anchor_of(c, s), v, x);
    a.iter().zip(&b).map(|(p, q)| p + q).collect()
}

/// `∇̄_X Y = ∇_{#Y} X + [X, Y]` on jets.
pub fn nabla_bar_g_jet(c: &AlgebroidChart, s1: &FieldFn, s2: &FieldFn, x: &[Jet]) -> Vec<Jet> {
    let ay = c.apply_anchor(x, &s2(x));
    let a = c.covariant(&ay, s1, x);
    let b = c.bracket_jet(s1, s2, x);
    a.iter().zip(&b).map(|(p, q)| p + q).collect()
}

fn checked(m: &[f64], v: Vec<Jet>, what: &str) -> Result<Vec<f64>> {
    let out = jet::values(&v);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{what} at {m:?}")));
    }
    Ok(out)
}

pub fn nabla_bar_tm(c: &AlgebroidChart, s: &FieldFn, v: &FieldFn, m: &[f64]) -> Result<Vec<f64>> {
    c.base().check(m)?;
    checked(m, nabla_bar_tm_jet(c, s, v, &jet::consts(m)), "associated TM connection")
}

pub fn nabla_bar_g(c: &AlgebroidChart, s1: &FieldFn, s2: &FieldFn, m: &[f64]) -> Result<Vec<f64>> {
    c.base().check(m)?;
    checked(m, nabla_bar_g_jet(c, s1, s2, &jet::consts(m)), "associated fiber connection")
}

/// `∇̄_X Y − ∇̄_Y X − [X, Y]` for constant extensions of `x`, `y`; should
/// reproduce the stored torsion.
pub fn torsion_bar(c: &AlgebroidChart, x: &[f64], y: &[f64], m: &[f64]) -> Result<Vec<f64>> {
    c.base().check(m)?;
    let p = jet::consts(m);
    let sx = constant_section(x.to_vec());
    let sy = constant_section(y.to_vec());
    let a = nabla_bar_g_jet(c, &sx, &sy, &p);
    let b = nabla_bar_g_jet(c, &sy, &sx, &p);
    let br = c.bracket_jet(&sx, &sy, &p);
    let out = a.iter().zip(&b).zip(&br).map(|((a, b), k)| a - b - k).collect();
    checked(m, out, "torsion")
}

/// Cocurvature on arbitrary sections and vector field, on jets.
pub fn cocurvature_jet(c: &AlgebroidChart, sx: &FieldFn, sy: &FieldFn, v: &FieldFn, p: &[Jet]) -> Vec<Jet> {
    let xy = bracket_of(c, sx, sy);
    let t1 = c.covariant(&v(p), &xy, p);
    let nvx = covariant_of(c, v, sx);
    let nvy = covariant_of(c, v, sy);
    let t2 = c.bracket_jet(&nvx, sy, p);
    let t3 = c.bracket_jet(sx, &nvy, p);
    let bx = nabla_bar_tm_jet(c, sx, v, p);
    let by = nabla_bar_tm_jet(c, sy, v, p);
    let t4 = c.covariant(&bx, sy, p);
    let t5 = c.covariant(&by, sx, p);
    (0..c.rank()).map(|k| &t1[k] - &t2[k] - &t3[k] + &t4[k] - &t5[k]).collect()
}

/// `∇_V[X,Y] − [∇_V X, Y] − [X, ∇_V Y] + ∇_{∇̄_X V} Y − ∇_{∇̄_Y V} X`.
pub fn cocurvature(c: &AlgebroidChart, x: &[f64], y: &[f64], v: &[f64], m: &[f64]) -> Result<Vec<f64>> {
    c.base().check(m)?;
    let sx = constant_section(x.to_vec());
    let sy = constant_section(y.to_vec());
    let vf = constant_section(v.to_vec());
    checked(m, cocurvature_jet(c, &sx, &sy, &vf, &jet::consts(m)), "cocurvature")
}

/// `R(U, V) X = ∇_U ∇_V X − ∇_V ∇_U X` (constant `U`, `V` commute).
pub fn curvature_conn(c: &AlgebroidChart, u: &[f64], v: &[f64], x: &[f64], m: &[f64]) -> Result<Vec<f64>> {
    c.base().check(m)?;
    let p = jet::consts(m);
    let sx = constant_section(x.to_vec());
    let uf = constant_section(u.to_vec());
    let vf = constant_section(v.to_vec());
    let a = c.covariant(&uf(&p), &covariant_of(c, &vf, &sx), &p);
    let b = c.covariant(&vf(&p), &covariant_of(c, &uf, &sx), &p);
    checked(m, a.iter().zip(&b).map(|(a, b)| a - b).collect(), "curvature")
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Max cocurvature norm over samples and frame triples `(e_a, e_b, ∂_i)`.
pub fn is_cartan(c: &AlgebroidChart, samples: &[Vec<f64>], tol: f64) -> Result<TensorReport> {
    let (n, r) = (c.dim(), c.rank());
    let mut per = Vec::with_capacity(samples.len());
    for m in samples {
        let mut worst = 0.0f64;
        for a in 0..r {
            for b in (a + 1)..r {
                for i in 0..n {
                    let v = cocurvature(c, &unit(r, a), &unit(r, b), &unit(n, i), m)?;
                    worst = worst.max(norm(&v));
                }
            }
        }
        per.push(worst);
    }
    Ok(TensorReport::from_samples("is_cartan", samples.to_vec(), per, tol))
}

/// Max curvature norm over samples and frame triples `(∂_i, ∂_j, e_a)`.
pub fn is_flat(c: &AlgebroidChart, samples: &[Vec<f64>], tol: f64) -> Result<TensorReport> {
    let (n, r) = (c.dim(), c.rank());
    let mut per = Vec::with_capacity(samples.len());
    for m in samples {
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                for a in 0..r {
                    let v = curvature_conn(c, &unit(n, i), &unit(n, j), &unit(r, a), m)?;
                    worst = worst.max(norm(&v));
                }
            }
        }
        per.push(worst);
    }
    Ok(TensorReport::from_samples("is_flat", samples.to_vec(), per, tol))
}

/// The Lie algebra of parallel sections, read off the torsion at `m0`.
pub fn fiber_bracket_at(c: &AlgebroidChart, m0: &[f64]) -> Result<LieAlgebra> {
    let t = c.torsion_at(m0)?;
    LieAlgebra::with_tolerance(c.rank(), t, 1e-6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphismReport {
    pub anchor: TensorReport,
    pub torsion: TensorReport,
    pub connection: TensorReport,
    /// Anchors and torsions respected; the connection residual is reported
    /// alongside as the caller's obligation.
    pub pass: bool,
}

/// `fiber` is an `r₂×r₁` matrix field (row-major) over `C1`; `base` maps
/// `C1` coordinates to `C2` coordinates.
pub fn check_morphism(
    c1: &AlgebroidChart,
    c2: &AlgebroidChart,
    fiber: &FieldFn,
    base: &FieldFn,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<MorphismReport> {
    let (n1, r1) = (c1.dim(), c1.rank());
    let (n2, r2) = (c2.dim(), c2.rank());
    let mut pa = Vec::new();
    let mut pt = Vec::new();
    let mut pc = Vec::new();
    for m in samples {
        c1.base().check(m)?;
        let x = jet::consts(m);
        let q = jet::values(&base(&x));
        if !c2.base().contains(&q) {
            return Err(Error::OutsideChart { point: q });
        }
        let y = jet::consts(&q);
        let phi = fiber(&x);
        if phi.len() != r1 * r2 {
            return Err(Error::DimensionMismatch {
                expected: r1 * r2,
                found: phi.len(),
            });
        }
        let grad = jet::gradient(|z| base(z), &x);
        let dphi: Vec<Jet> = (0..n2)
            .flat_map(|i| (0..n1).map(move |j| (i, j)))
            .map(|(i, j)| grad[j][i].clone())
            .collect();

        let lhs = jet::mat_mul(&c2.anchor_jet(&y), &phi, n2, r2, r1);
        let rhs = jet::mat_mul(&dphi, &c1.anchor_jet(&x), n2, n1, r1);
        pa.push(diff(&lhs, &rhs));

        let t1 = c1.torsion_jet(&x);
        let t2 = c2.torsion_jet(&y);
        let mut wt = 0.0f64;
        for a in 0..r1 {
            for b in (a + 1)..r1 {
                let ea = jet::consts(&unit(r1, a));
                let eb = jet::consts(&unit(r1, b));
                let l = jet::mat_vec(&phi, &crate::algebroid::torsion_apply(&t1, &ea, &eb, r1), r2, r1);
                let pa_ = jet::mat_vec(&phi, &ea, r2, r1);
                let pb_ = jet::mat_vec(&phi, &eb, r2, r1);
                let rr = crate::algebroid::torsion_apply(&t2, &pa_, &pb_, r2);
                wt = wt.max(diff(&l, &rr));
            }
        }
        pt.push(wt);

        // Φ ∇¹_v X = ∇²_{Dφ v} (Φ X) for constant X
        let mut wc = 0.0f64;
        for i in 0..n1 {
            let v = jet::consts(&unit(n1, i));
            let dphi_v = jet::directional(|z| fiber(z), &x, &v);
            let g1 = c1.conn_matrix(&x, &v);
            let dv = jet::consts(&jet::values(&jet::mat_vec(&dphi, &v, n2, n1)));
            let g2 = c2.conn_matrix(&y, &dv);
            // D_vΦ + Γ²Φ − ΦΓ¹ as an r₂×r₁ matrix
            let a = jet::mat_mul(&g2, &phi, r2, r2, r1);
            let b = jet::mat_mul(&phi, &g1, r2, r1, r1);
            let m: Vec<Jet> = (0..r2 * r1).map(|k| &dphi_v[k] + &a[k] - &b[k]).collect();
            wc = wc.max(jet::values(&m).iter().fold(0.0f64, |s, v| s.max(v.abs())));
        }
        pc.push(wc);
    }
    let anchor = TensorReport::from_samples("morphism_anchor", samples.to_vec(), pa, tol);
    let torsion = TensorReport::from_samples("morphism_torsion", samples.to_vec(), pt, tol);
    let connection = TensorReport::from_samples("morphism_connection", samples.to_vec(), pc, tol);
    let pass = anchor.pass && torsion.pass;
    Ok(MorphismReport {
        anchor,
        torsion,
        connection,
        pass,
    })
}

fn diff(a: &[Jet], b: &[Jet]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.value() - y.value()).abs()).fold(0.0, f64::max)
}

/// Identity fiber map for `check_morphism`.
pub fn identity_fiber(r: usize) -> FieldFn {
    let id = DMatrix::<f64>::identity(r, r);
    let v: Vec<f64> = id.as_slice().to_vec();
    field_fn(move |_| jet::consts(&v))
}

/// Identity base map.
pub fn identity_base() -> FieldFn {
    field_fn(|x| x.to_vec())
}
