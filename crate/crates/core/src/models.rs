//! Riemannian metrics as transitive algebroids `TM ⊕ h` with their canonical
//! Cartan connection, constant-curvature classification, and dual pairs of
//! connections on `TM` (local Lie groups).
//!
//! Fiber coordinates of `TM ⊕ h` at `x`: the first `n` are the coordinate
//! vectors `∂_i`, the remaining `n(n−1)/2` the σ-skew endomorphisms
//! `φ_pq = R⁻¹ S_pq R` for `p < q` (lexicographic), where `σ = RᵀR` is the
//! upper Cholesky factorization and `S_pq = e_p e_qᵀ − e_q e_pᵀ`. An
//! endomorphism `A` has coordinates `(R A R⁻¹)_pq`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::algebra::LieAlgebra;
use crate::algebroid::AlgebroidChart;
use crate::cartan::{curvature_conn, fiber_bracket_at, is_flat};
use crate::error::{Error, Result};
use crate::geometry::{field_fn, levi_civita, scalar_form_fit, vf_bracket, Chart, FieldFn, Metric, TMConnection};
use crate::jet::{self, Jet};
use crate::report::{Residual, TensorReport};
use crate::sampling;

/// Below this `|s|` a fitted curvature counts as zero.
pub const FLAT_S_TOL: f64 = 1e-6;
/// Extra points at which classification confirms flatness.
pub const CLASSIFY_PROBES: usize = 4;

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|p| ((p + 1)..n).map(move |q| (p, q))).collect()
}

/// Cholesky factor, its inverse and the skew frame at `x`.
struct Frame {
    r: Vec<Jet>,
    rinv: Vec<Jet>,
    phis: Vec<Vec<Jet>>,
}

fn frame(sigma: &FieldFn, n: usize, x: &[Jet]) -> Option<Frame> {
    let r = jet::cholesky_upper(&sigma(x), n)?;
    let rinv = jet::mat_inverse(&r, n)?;
    let phis = pairs(n)
        .into_iter()
        .map(|(p, q)| {
            // R⁻¹ S_pq R: column p of R⁻¹ times row q of R, minus the swap
            let mut m = vec![Jet::constant(0.0); n * n];
            for k in 0..n {
                for l in 0..n {
                    m[k * n + l] = &rinv[k * n + p] * &r[q * n + l] - &rinv[k * n + q] * &r[p * n + l];
                }
            }
            m
        })
        .collect();
    Some(Frame { r, rinv, phis })
}

fn frame_fn(sigma: &FieldFn, n: usize, c: usize) -> FieldFn {
    let sigma = sigma.clone();
    field_fn(move |x| match frame(&sigma, n, x) {
        Some(f) => f.phis[c].clone(),
        None => vec![Jet::constant(f64::NAN); n * n],
    })
}

fn h_coords(f: &Frame, a: &[Jet], n: usize) -> Vec<Jet> {
    let m = jet::mat_mul(&jet::mat_mul(&f.r, a, n, n, n), &f.rinv, n, n, n);
    pairs(n).into_iter().map(|(p, q)| m[p * n + q].clone()).collect()
}

fn commutator(a: &[Jet], b: &[Jet], n: usize) -> Vec<Jet> {
    let ab = jet::mat_mul(a, b, n, n, n);
    let ba = jet::mat_mul(b, a, n, n, n);
    ab.iter().zip(&ba).map(|(x, y)| x - y).collect()
}

/// `(Γ_v)^k_l = Σ_i v^i Γ^k_{il}`.
fn gamma_along(g: &[Jet], v: &[Jet], n: usize) -> Vec<Jet> {
    let mut out = vec![Jet::constant(0.0); n * n];
    for k in 0..n {
        for l in 0..n {
            for i in 0..n {
                out[k * n + l] += &v[i] * &g[(k * n + i) * n + l];
            }
        }
    }
    out
}

/// The endomorphism `R(∂_i, ∂_j)`.
fn riemann_endo(rm: &[Jet], i: usize, j: usize, n: usize) -> Vec<Jet> {
    let mut out = vec![Jet::constant(0.0); n * n];
    for k in 0..n {
        for l in 0..n {
            out[k * n + l] = rm[((k * n + l) * n + i) * n + j].clone();
        }
    }
    out
}

/// `∇^LC_v φ = D_v φ + [Γ_v, φ]` for an endomorphism field.
fn lc_endo_derivative(lc: &TMConnection, phi: &FieldFn, v: &[Jet], x: &[Jet], n: usize) -> Vec<Jet> {
    let d = jet::directional(|y| phi(y), x, v);
    let gv = gamma_along(&lc.christoffel_jet(x), v, n);
    let c = commutator(&gv, &phi(x), n);
    d.iter().zip(&c).map(|(a, b)| a + b).collect()
}

fn unit_jets(n: usize, i: usize) -> Vec<Jet> {
    let mut v = vec![Jet::constant(0.0); n];
    v[i] = Jet::constant(1.0);
    v
}

/// `TM ⊕ h` for a metric, with the canonical Cartan connection
/// `∇_U(V ⊕ φ) = (∇_U V + φU) ⊕ (∇_U φ + R(U, V))`.
#[derive(Debug, Clone)]
pub struct RiemannianCartanChart {
    metric: Metric,
    lc: TMConnection,
    chart: AlgebroidChart,
}

pub fn build_riemannian_cartan(sigma: &Metric) -> Result<RiemannianCartanChart> {
    let base = sigma.chart().clone();
    let (lo, hi) = base.sample_region();
    let probe: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    sigma.at(&probe)?;
    let n = sigma.dim();
    let h = n * (n - 1) / 2;
    let r = n + h;
    let lc = levi_civita(sigma);
    let g = sigma.field().func().clone();

    let anchor = field_fn(move |_| {
        let mut a = vec![Jet::constant(0.0); n * r];
        for i in 0..n {
            a[i * r + i] = Jet::constant(1.0);
        }
        a
    });

    let frames: Vec<FieldFn> = (0..h).map(|c| frame_fn(&g, n, c)).collect();
    let conn = {
        let (lc, g) = (lc.clone(), g.clone());
        field_fn(move |x| {
            let nan = || vec![Jet::constant(f64::NAN); n * r * r];
            let Some(f) = frame(&g, n, x) else { return nan() };
            let gam = lc.christoffel_jet(x);
            let rm = lc.riemann_jet(x);
            let mut out = vec![Jet::constant(0.0); n * r * r];
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        out[(i * r + j) * r + k] = gam[(k * n + i) * n + j].clone();
                    }
                    for (c, v) in h_coords(&f, &riemann_endo(&rm, i, j, n), n).into_iter().enumerate() {
                        out[(i * r + j) * r + n + c] = v;
                    }
                }
                for (c, phi) in frames.iter().enumerate() {
                    let a = n + c;
                    for k in 0..n {
                        out[(i * r + a) * r + k] = f.phis[c][k * n + i].clone();
                    }
                    let d = lc_endo_derivative(&lc, phi, &unit_jets(n, i), x, n);
                    for (c2, v) in h_coords(&f, &d, n).into_iter().enumerate() {
                        out[(i * r + a) * r + n + c2] = v;
                    }
                }
            }
            out
        })
    };

    let torsion = {
        let (lc, g) = (lc.clone(), g.clone());
        field_fn(move |x| {
            let Some(f) = frame(&g, n, x) else {
                return vec![Jet::constant(f64::NAN); r * r * r];
            };
            let rm = lc.riemann_jet(x);
            let mut t = vec![Jet::constant(0.0); r * r * r];
            for i in 0..n {
                for j in 0..n {
                    // T(∂_i, ∂_j) = 0 ⊕ −R(∂_i, ∂_j)
                    for (c, v) in h_coords(&f, &riemann_endo(&rm, i, j, n), n).into_iter().enumerate() {
                        t[(i * r + j) * r + n + c] = -v;
                    }
                }
                for c in 0..h {
                    // T(∂_i, φ) = −φ∂_i ⊕ 0
                    for k in 0..n {
                        let v = f.phis[c][k * n + i].clone();
                        t[(i * r + n + c) * r + k] = -&v;
                        t[((n + c) * r + i) * r + k] = v;
                    }
                }
            }
            for c1 in 0..h {
                for c2 in 0..h {
                    let br = commutator(&f.phis[c1], &f.phis[c2], n);
                    for (c, v) in h_coords(&f, &br, n).into_iter().enumerate() {
                        t[((n + c1) * r + n + c2) * r + n + c] = v;
                    }
                }
            }
            t
        })
    };

    let chart = AlgebroidChart::new(format!("TM+h over {}", sigma.name()), base, r, anchor, conn, torsion)?;
    Ok(RiemannianCartanChart {
        metric: sigma.clone(),
        lc,
        chart,
    })
}

impl RiemannianCartanChart {
    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn chart(&self) -> &AlgebroidChart {
        &self.chart
    }

    pub fn levi_civita(&self) -> &TMConnection {
        &self.lc
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn h_dim(&self) -> usize {
        let n = self.dim();
        n * (n - 1) / 2
    }

    /// Index pairs `(p, q)` labelling the h-coordinates.
    pub fn h_labels(&self) -> Vec<(usize, usize)> {
        pairs(self.dim())
    }

    fn frame_at(&self, m: &[f64]) -> Result<Frame> {
        self.chart.base().check(m)?;
        frame(self.metric.field().func(), self.dim(), &jet::consts(m)).ok_or(Error::NotPositiveDefinite { point: m.to_vec() })
    }

    /// The skew frame `φ_pq(m)` as matrices.
    pub fn h_frame(&self, m: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let n = self.dim();
        let f = self.frame_at(m)?;
        Ok(f.phis.iter().map(|p| DMatrix::from_row_slice(n, n, &jet::values(p))).collect())
    }

    /// h-coordinates of a σ-skew endomorphism at `m`.
    pub fn h_coordinates(&self, m: &[f64], a: &DMatrix<f64>) -> Result<Vec<f64>> {
        let n = self.dim();
        let f = self.frame_at(m)?;
        let rows: Vec<f64> = a.transpose().as_slice().to_vec();
        Ok(jet::values(&h_coords(&f, &jet::consts(&rows), n)))
    }

    /// The endomorphism with the given h-coordinates at `m`.
    pub fn endomorphism(&self, m: &[f64], coords: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let fr = self.h_frame(m)?;
        Ok(fr.iter().zip(coords).fold(DMatrix::zeros(n, n), |acc, (p, c)| acc + p * *c))
    }

    /// Largest `|σ(φV, W) + σ(V, φW)|` over the skew frame and coordinate vectors.
    pub fn skew_residual(&self, m: &[f64]) -> Result<f64> {
        let s = self.metric.at(m)?;
        Ok(self
            .h_frame(m)?
            .iter()
            .map(|p| (p.transpose() * &s + &s * p).amax())
            .fold(0.0, f64::max))
    }
}

/// The curvature of the Cartan connection against its closed form
/// `R(U₁, U₂)(V ⊕ φ) = 0 ⊕ −((∇_V R^LC) + φ·R^LC)(U₁, U₂)` with
/// `φ·R(U₁,U₂) = [φ, R(U₁,U₂)] − R(φU₁, U₂) − R(U₁, φU₂)`.
pub fn curvature_formula_check(rc: &RiemannianCartanChart, samples: &[Vec<f64>], tol: f64) -> Result<TensorReport> {
    let n = rc.dim();
    let r = rc.chart.rank();
    let mut per = Vec::with_capacity(samples.len());
    for m in samples {
        let rhs = curvature_closed_form(rc, m)?;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                for a in 0..r {
                    let lhs = curvature_conn(&rc.chart, &unit(n, i), &unit(n, j), &unit(r, a), m)?;
                    let want = &rhs[(i * n + j) * r + a];
                    for (x, y) in lhs.iter().zip(want) {
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
        per.push(worst);
    }
    Ok(TensorReport::from_samples("curvature_formula", samples.to_vec(), per, tol))
}

/// Closed-form curvature values indexed by `(i·n + j)·r + a` (only `i < j` filled).
fn curvature_closed_form(rc: &RiemannianCartanChart, m: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = rc.dim();
    let h = rc.h_dim();
    let r = n + h;
    rc.chart.base().check(m)?;
    let x = jet::consts(m);
    let rm = jet::values(&rc.lc.riemann_jet(&x));
    let gam = jet::values(&rc.lc.christoffel_jet(&x));
    let drm: Vec<Vec<f64>> = (0..n)
        .map(|p| jet::values(&jet::partial(|y| rc.lc.riemann_jet(y), &x, p)))
        .collect();
    let rid = |k: usize, l: usize, i: usize, j: usize| ((k * n + l) * n + i) * n + j;
    let gid = |k: usize, i: usize, j: usize| (k * n + i) * n + j;
    // (∇_p R)^k_{lij}
    let nabla_r = |p: usize, k: usize, l: usize, i: usize, j: usize| {
        let mut v = drm[p][rid(k, l, i, j)];
        for q in 0..n {
            v += gam[gid(k, p, q)] * rm[rid(q, l, i, j)];
            v -= gam[gid(q, p, l)] * rm[rid(k, q, i, j)];
            v -= gam[gid(q, p, i)] * rm[rid(k, l, q, j)];
            v -= gam[gid(q, p, j)] * rm[rid(k, l, i, q)];
        }
        v
    };
    // R(u, v) as a matrix
    let r_of = |u: &[f64], v: &[f64]| {
        DMatrix::from_fn(n, n, |k, l| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += rm[rid(k, l, i, j)] * u[i] * v[j];
                }
            }
            s
        })
    };
    let frames = rc.h_frame(m)?;
    let mut out = vec![vec![0.0; r]; n * n * r];
    for i in 0..n {
        for j in (i + 1)..n {
            let (ui, uj) = (unit(n, i), unit(n, j));
            let rij = r_of(&ui, &uj);
            for a in 0..r {
                let endo = if a < n {
                    DMatrix::from_fn(n, n, |k, l| nabla_r(a, k, l, i, j))
                } else {
                    let phi = &frames[a - n];
                    let pu1: Vec<f64> = (phi * nalgebra::DVector::from_column_slice(&ui)).iter().copied().collect();
                    let pu2: Vec<f64> = (phi * nalgebra::DVector::from_column_slice(&uj)).iter().copied().collect();
                    phi * &rij - &rij * phi - r_of(&pu1, &uj) - r_of(&ui, &pu2)
                };
                let coords = rc.h_coordinates(m, &(-endo))?;
                let v = &mut out[(i * n + j) * r + a];
                v[n..].copy_from_slice(&coords);
            }
        }
    }
    Ok(out)
}

/// The bracket of the chart against the displayed formula
/// `[V₁⊕φ₁, V₂⊕φ₂] = [V₁,V₂] ⊕ ([φ₁,φ₂] + ∇_{V₁}φ₂ − ∇_{V₂}φ₁ + R(V₁,V₂))`,
/// on the adapted frame and on sections with random affine coefficients.
pub fn bracket_formula_check(rc: &RiemannianCartanChart, samples: &[Vec<f64>], seed: u64, tol: f64) -> Result<TensorReport> {
    let n = rc.dim();
    let h = rc.h_dim();
    let r = n + h;
    let mut sections: Vec<Vec<f64>> = (0..r)
        .map(|a| {
            let mut v = vec![0.0; r * (n + 1)];
            v[a * (n + 1)] = 1.0;
            v
        })
        .collect();
    sections.extend(sampling::random_vectors(r * (n + 1), 6, seed));
    let mut per = Vec::with_capacity(samples.len());
    for m in samples {
        rc.chart.base().check(m)?;
        let x = jet::consts(m);
        let mut worst = 0.0f64;
        for s1 in 0..sections.len() {
            for s2 in (s1 + 1)..sections.len() {
                let a = affine_section(&sections[s1], n, r);
                let b = affine_section(&sections[s2], n, r);
                let lhs = jet::values(&rc.chart.bracket_jet(&a, &b, &x));
                let rhs = jet::values(&bracket_closed_form(rc, &a, &b, &x));
                worst = worst.max(lhs.iter().zip(&rhs).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
            }
        }
        per.push(worst);
    }
    Ok(TensorReport::from_samples("bracket_formula", samples.to_vec(), per, tol))
}

/// Section with components `c₀ + Σ c_i x^i` per fiber coordinate.
fn affine_section(coef: &[f64], n: usize, r: usize) -> FieldFn {
    let coef = coef.to_vec();
    field_fn(move |x| {
        (0..r)
            .map(|a| {
                let c = &coef[a * (n + 1)..(a + 1) * (n + 1)];
                let mut v = Jet::constant(c[0]);
                for i in 0..n {
                    v += &x[i] * c[i + 1];
                }
                v
            })
            .collect()
    })
}

fn bracket_closed_form(rc: &RiemannianCartanChart, a: &FieldFn, b: &FieldFn, x: &[Jet]) -> Vec<Jet> {
    let n = rc.dim();
    let h = rc.h_dim();
    let g = rc.metric.field().func().clone();
    let split = |s: &FieldFn| -> (FieldFn, FieldFn) {
        let (s1, s2, g) = (s.clone(), s.clone(), g.clone());
        let v = field_fn(move |y| s1(y)[..n].to_vec());
        let phi = field_fn(move |y| {
            let sv = s2(y);
            let Some(f) = frame(&g, n, y) else {
                return vec![Jet::constant(f64::NAN); n * n];
            };
            let mut e = vec![Jet::constant(0.0); n * n];
            for c in 0..h {
                for (ek, fk) in e.iter_mut().zip(&f.phis[c]) {
                    *ek += &sv[n + c] * fk;
                }
            }
            e
        });
        (v, phi)
    };
    let (v1, p1) = split(a);
    let (v2, p2) = split(b);
    let tm = vf_bracket(&v1, &v2, x);
    let (v1x, v2x) = (v1(x), v2(x));
    let rm = rc.lc.riemann_jet(x);
    let mut e = commutator(&p1(x), &p2(x), n);
    let d2 = lc_endo_derivative(&rc.lc, &p2, &v1x, x, n);
    let d1 = lc_endo_derivative(&rc.lc, &p1, &v2x, x, n);
    for k in 0..n {
        for l in 0..n {
            let mut rv = Jet::constant(0.0);
            for i in 0..n {
                for j in 0..n {
                    rv += &rm[((k * n + l) * n + i) * n + j] * &v1x[i] * &v2x[j];
                }
            }
            e[k * n + l] += &d2[k * n + l] - &d1[k * n + l] + rv;
        }
    }
    let Some(f) = frame(&g, n, x) else {
        return vec![Jet::constant(f64::NAN); n + h];
    };
    tm.into_iter().chain(h_coords(&f, &e, n)).collect()
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureTag {
    Euclidean,
    Spherical,
    Hyperbolic,
}

impl CurvatureTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurvatureTag::Euclidean => "euclidean",
            CurvatureTag::Spherical => "spherical",
            CurvatureTag::Hyperbolic => "hyperbolic",
        }
    }
}

/// Counts of positive, negative and zero eigenvalues of a Killing form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub tag: CurvatureTag,
    /// `o(n)⋉ℝⁿ`, `o(n+1)` or `o(n,1)`.
    pub model: String,
    pub s: f64,
    pub fit_residual: f64,
    /// Largest deviation between the extracted and the model structure constants.
    pub structure_residual: f64,
    pub killing_signature: Signature,
    /// The Killing form has the signature expected of `model`.
    pub signature_matches: bool,
    pub algebra: LieAlgebra,
}

/// Structure constants of `g₀` for constant curvature `s`, in the adapted
/// basis at `m0`: `T(V₁⊕φ₁, V₂⊕φ₂) = (φ₁V₂ − φ₂V₁) ⊕ ([φ₁,φ₂] − s(σ(V₂)⊗V₁ − σ(V₁)⊗V₂))`.
pub fn model_bracket(rc: &RiemannianCartanChart, m0: &[f64], s: f64) -> Result<LieAlgebra> {
    let n = rc.dim();
    let h = rc.h_dim();
    let r = n + h;
    let sig = rc.metric.at(m0)?;
    let fr = rc.h_frame(m0)?;
    let mut c = vec![0.0; r * r * r];
    for i in 0..n {
        for j in 0..n {
            let m = DMatrix::from_fn(n, n, |k, l| {
                let a = if k == i { sig[(j, l)] } else { 0.0 };
                let b = if k == j { sig[(i, l)] } else { 0.0 };
                -s * (a - b)
            });
            let co = rc.h_coordinates(m0, &m)?;
            for (q, v) in co.into_iter().enumerate() {
                c[(i * r + j) * r + n + q] = v;
            }
        }
        for (q, phi) in fr.iter().enumerate() {
            for k in 0..n {
                c[(i * r + n + q) * r + k] = -phi[(k, i)];
                c[((n + q) * r + i) * r + k] = phi[(k, i)];
            }
        }
    }
    for (q1, a) in fr.iter().enumerate() {
        for (q2, b) in fr.iter().enumerate() {
            let co = rc.h_coordinates(m0, &(a * b - b * a))?;
            for (q, v) in co.into_iter().enumerate() {
                c[((n + q1) * r + n + q2) * r + n + q] = v;
            }
        }
    }
    crate::algebra::antisymmetrize(r, &mut c);
    LieAlgebra::antisymmetric(r, c)
}

fn killing_signature(a: &LieAlgebra) -> Signature {
    let k = a.killing_form();
    let ev = SymmetricEigen::new(k).eigenvalues;
    let scale = ev.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let cut = 1e-8 * scale;
    Signature {
        positive: ev.iter().filter(|v| **v > cut).count(),
        negative: ev.iter().filter(|v| **v < -cut).count(),
        zero: ev.iter().filter(|v| v.abs() <= cut).count(),
    }
}

/// Fit `s` at `m0`, read the bracket of parallel sections from the torsion at
/// `m0`, and compare it with [`model_bracket`].
pub fn classify_constant_curvature(rc: &RiemannianCartanChart, m0: &[f64], tol: f64) -> Result<Classification> {
    let n = rc.dim();
    // in dimension 2 every curvature tensor has the scalar form pointwise, so
    // constancy is certified by flatness of the Cartan connection instead
    let mut probe = vec![m0.to_vec()];
    probe.extend(rc.chart.base().halton_points(CLASSIFY_PROBES));
    let flat = is_flat(&rc.chart, &probe, tol)?;
    if !flat.pass {
        return Err(Error::Inconsistent(format!(
            "Cartan connection is not flat (curvature {:e}); the curvature is not constant",
            flat.max_residual
        )));
    }
    let fit = scalar_form_fit(&rc.lc, &rc.metric, m0)?;
    let scale = fit.s.abs().max(1.0);
    if fit.residual > tol * scale {
        return Err(Error::Inconsistent(format!(
            "curvature at {m0:?} is not of constant-curvature form (residual {:e})",
            fit.residual
        )));
    }
    let algebra = fiber_bracket_at(&rc.chart, m0)?;
    let model = model_bracket(rc, m0, fit.s)?;
    let structure_residual = algebra.distance(&model);
    if !(structure_residual <= tol * scale) {
        return Err(Error::Inconsistent(format!(
            "extracted bracket differs from the model bracket by {structure_residual:e}"
        )));
    }
    let tag = if fit.s.abs() <= FLAT_S_TOL {
        CurvatureTag::Euclidean
    } else if fit.s > 0.0 {
        CurvatureTag::Spherical
    } else {
        CurvatureTag::Hyperbolic
    };
    let h = n * (n - 1) / 2;
    let sig = killing_signature(&algebra);
    let name = match tag {
        CurvatureTag::Euclidean => format!("o({n})⋉R^{n}"),
        CurvatureTag::Spherical => format!("o({})", n + 1),
        CurvatureTag::Hyperbolic => format!("o({n},1)"),
    };
    // translations are null for the Killing form of o(n)⋉ℝⁿ; o(n,1) has
    // n positive directions (the boosts)
    let signature_matches = match tag {
        CurvatureTag::Euclidean => sig.positive == 0 && sig.zero >= n,
        CurvatureTag::Spherical => sig.negative == n + h,
        CurvatureTag::Hyperbolic => (sig.positive, sig.negative) == (n, h),
    };
    Ok(Classification {
        tag,
        model: name,
        s: fit.s,
        fit_residual: fit.residual,
        structure_residual,
        killing_signature: sig,
        signature_matches,
        algebra,
    })
}

// ---------------------------------------------------------------------------
// dual pairs

/// Connections `∇`, `∇̄` on `TM` over one chart.
#[derive(Debug, Clone)]
pub struct DualPair {
    nabla: TMConnection,
    nabla_bar: TMConnection,
}

impl DualPair {
    pub fn new(nabla: TMConnection, nabla_bar: TMConnection) -> Result<Self> {
        if nabla.dim() != nabla_bar.dim() {
            return Err(Error::DimensionMismatch {
                expected: nabla.dim(),
                found: nabla_bar.dim(),
            });
        }
        Ok(DualPair { nabla, nabla_bar })
    }

    /// `∇` together with its dual `∇̄_X Y = ∇_Y X + [X, Y]`.
    pub fn from_connection(nabla: TMConnection) -> Self {
        let nabla_bar = nabla.dual();
        DualPair { nabla, nabla_bar }
    }

    pub fn nabla(&self) -> &TMConnection {
        &self.nabla
    }

    pub fn nabla_bar(&self) -> &TMConnection {
        &self.nabla_bar
    }

    pub fn chart(&self) -> &Chart {
        self.nabla.chart()
    }

    pub fn dim(&self) -> usize {
        self.nabla.dim()
    }
}

/// Number of random quadratic vector fields used by [`check_dual_pair`].
pub const DUAL_PAIR_FIELDS: usize = 20;
const POLY_SEED: u64 = 0x5eed;

fn quadratic_field(coef: &[f64], n: usize) -> FieldFn {
    let coef = coef.to_vec();
    field_fn(move |x| {
        let per = 1 + n + n * (n + 1) / 2;
        (0..n)
            .map(|k| {
                let c = &coef[k * per..(k + 1) * per];
                let mut v = Jet::constant(c[0]);
                for i in 0..n {
                    v += &x[i] * c[1 + i];
                }
                let mut idx = 1 + n;
                for i in 0..n {
                    for j in i..n {
                        v += &x[i] * &x[j] * c[idx];
                        idx += 1;
                    }
                }
                v
            })
            .collect()
    })
}

/// `∇̄_X Y − ∇_Y X − [X, Y]` over coordinate fields and random quadratic fields.
pub fn check_dual_pair(p: &DualPair, samples: &[Vec<f64>], tol: f64) -> Result<TensorReport> {
    let n = p.dim();
    let per_field = n * (1 + n + n * (n + 1) / 2);
    let mut fields: Vec<FieldFn> = (0..n)
        .map(|i| {
            let u = jet::consts(&unit(n, i));
            field_fn(move |_| u.clone())
        })
        .collect();
    let coords = fields.len();
    fields.extend(
        sampling::random_vectors(per_field, DUAL_PAIR_FIELDS, POLY_SEED)
            .iter()
            .map(|c| quadratic_field(&c.iter().map(|v| 0.5 * v).collect::<Vec<_>>(), n)),
    );
    let mut per = Vec::with_capacity(samples.len());
    for m in samples {
        p.chart().check(m)?;
        let x = jet::consts(m);
        let mut worst = 0.0f64;
        let mut pairs_to_check: Vec<(usize, usize)> = (0..coords).flat_map(|i| (0..coords).map(move |j| (i, j))).collect();
        pairs_to_check.extend((0..DUAL_PAIR_FIELDS / 2).map(|k| (coords + 2 * k, coords + 2 * k + 1)));
        for (a, b) in pairs_to_check {
            let (xf, yf) = (&fields[a], &fields[b]);
            let l = p.nabla_bar.covariant(&xf(&x), yf, &x);
            let r = p.nabla.covariant(&yf(&x), xf, &x);
            let br = vf_bracket(xf, yf, &x);
            for k in 0..n {
                worst = worst.max((l[k].value() - r[k].value() - br[k].value()).abs());
            }
        }
        per.push(worst);
    }
    Ok(TensorReport::from_samples("dual_pair", samples.to_vec(), per, tol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalLieGroupReport {
    pub nabla_flat: TensorReport,
    pub nabla_bar_flat: TensorReport,
    /// `∇̄ T̄` over the samples.
    pub torsion_parallel: TensorReport,
    /// `[X, Y] = T̄(X, Y)` on `T_{m0}M`, in coordinate vectors.
    pub bracket: LieAlgebra,
    pub jacobi: Residual,
    /// First failing stage, if any: `flatness`, `parallel_torsion` or `jacobi`.
    pub failed_stage: Option<String>,
    pub pass: bool,
}

fn flatness(c: &TMConnection, samples: &[Vec<f64>], tol: f64, op: &str) -> Result<TensorReport> {
    let mut per = Vec::with_capacity(samples.len());
    for m in samples {
        per.push(c.riemann(m)?.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }
    Ok(TensorReport::from_samples(op, samples.to_vec(), per, tol))
}

/// Components `(∇̄_p T̄)^k_{ij}` at `x`, indexed `((p·n + k)·n + i)·n + j`.
fn torsion_derivative(c: &TMConnection, x: &[Jet]) -> Vec<f64> {
    let n = c.dim();
    let t = jet::values(&c.torsion_jet(x));
    let g = jet::values(&c.christoffel_jet(x));
    let id = |k: usize, i: usize, j: usize| (k * n + i) * n + j;
    let mut out = vec![0.0; n * n * n * n];
    for p in 0..n {
        let dt = jet::values(&jet::partial(|y| c.torsion_jet(y), x, p));
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut v = dt[id(k, i, j)];
                    for q in 0..n {
                        v += g[id(k, p, q)] * t[id(q, i, j)];
                        v -= g[id(q, p, i)] * t[id(k, q, j)];
                        v -= g[id(q, p, j)] * t[id(k, i, q)];
                    }
                    out[((p * n + k) * n + i) * n + j] = v;
                }
            }
        }
    }
    out
}

/// Both connections flat, `T̄` parallel for `∇̄`, and `T̄|_{m0}` a Lie bracket.
pub fn local_lie_group_check(p: &DualPair, samples: &[Vec<f64>], m0: &[f64], tol: f64) -> Result<LocalLieGroupReport> {
    let n = p.dim();
    let nabla_flat = flatness(&p.nabla, samples, tol, "nabla_flat")?;
    let nabla_bar_flat = flatness(&p.nabla_bar, samples, tol, "nabla_bar_flat")?;
    let mut per = Vec::with_capacity(samples.len());
    for m in samples {
        p.chart().check(m)?;
        let d = torsion_derivative(&p.nabla_bar, &jet::consts(m));
        per.push(d.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }
    let torsion_parallel = TensorReport::from_samples("torsion_parallel", samples.to_vec(), per, tol);
    p.chart().check(m0)?;
    let t = jet::values(&p.nabla_bar.torsion_jet(&jet::consts(m0)));
    let mut c = vec![0.0; n * n * n];
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                c[(i * n + j) * n + k] = t[(k * n + i) * n + j];
            }
        }
    }
    crate::algebra::antisymmetrize(n, &mut c);
    let bracket = LieAlgebra::antisymmetric(n, c)?;
    let jacobi = bracket.check_jacobi(tol);
    let failed_stage = if !(nabla_flat.pass && nabla_bar_flat.pass) {
        Some("flatness".to_string())
    } else if !torsion_parallel.pass {
        Some("parallel_torsion".to_string())
    } else if !jacobi.pass {
        Some("jacobi".to_string())
    } else {
        None
    };
    Ok(LocalLieGroupReport {
        pass: failed_stage.is_none(),
        nabla_flat,
        nabla_bar_flat,
        torsion_parallel,
        bracket,
        jacobi,
        failed_stage,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstructionReport {
    pub point: Vec<f64>,
    /// `w_i = tr T̄(∂_i, ·)`.
    pub w: Vec<f64>,
    /// Largest `|∂_i w_j − ∂_j w_i|`.
    pub dw: Residual,
}

fn obstruction_jet(c: &TMConnection, x: &[Jet]) -> Vec<Jet> {
    let n = c.dim();
    let t = c.torsion_jet(x);
    (0..n).map(|i| (0..n).map(|j| t[(j * n + i) * n + j].clone()).sum()).collect()
}

/// The one-form `w(U) = tr T̄(U, ·)` at `m` and its exterior derivative.
pub fn obstruction_form(p: &DualPair, m: &[f64], tol: f64) -> Result<ObstructionReport> {
    let n = p.dim();
    p.chart().check(m)?;
    let x = jet::consts(m);
    let w = jet::values(&obstruction_jet(&p.nabla_bar, &x));
    let grad: Vec<Vec<f64>> = (0..n)
        .map(|i| jet::values(&jet::partial(|y| obstruction_jet(&p.nabla_bar, y), &x, i)))
        .collect();
    let mut dw = 0.0f64;
    for (i, row) in grad.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            dw = dw.max((v - grad[j][i]).abs());
        }
    }
    if w.iter().any(|v| !v.is_finite()) || !dw.is_finite() {
        return Err(Error::NonFinite(format!("obstruction form at {m:?}")));
    }
    Ok(ObstructionReport {
        point: m.to_vec(),
        w,
        dw: Residual::new(dw, tol),
    })
}

/// Frame matrix field from column vector fields.
fn frame_from_columns(n: usize, cols: impl Fn(&[Jet]) -> Vec<Vec<Jet>> + Send + Sync + 'static) -> FieldFn {
    field_fn(move |x| {
        let c = cols(x);
        let mut f = vec![Jet::constant(0.0); n * n];
        for (a, col) in c.iter().enumerate() {
            for k in 0..n {
                f[k * n + a] = col[k].clone();
            }
        }
        f
    })
}

/// Chart `(a, b)`, `a > 0`, on the group of maps `x ↦ ax + b`.
pub fn affine_group_chart() -> Chart {
    Chart::new(vec![0.2, -3.0], vec![5.0, 3.0])
        .and_then(|c| c.with_sample_region(vec![0.4, -2.0], vec![3.0, 2.0]))
        .expect("affine group chart")
}

pub fn heisenberg_chart() -> Chart {
    Chart::cube(3, -3.0, 3.0)
        .and_then(|c| c.with_sample_region(vec![-1.5; 3], vec![1.5; 3]))
        .expect("heisenberg chart")
}

/// Right-invariant fields `a∂a + b∂b`, `∂b` on the affine group.
pub fn affine_right_frame() -> FieldFn {
    frame_from_columns(2, |x| {
        vec![vec![x[0].clone(), x[1].clone()], vec![Jet::constant(0.0), Jet::constant(1.0)]]
    })
}

/// Left-invariant fields `a∂a`, `a∂b`.
pub fn affine_left_frame() -> FieldFn {
    frame_from_columns(2, |x| {
        vec![vec![x[0].clone(), Jet::constant(0.0)], vec![Jet::constant(0.0), x[0].clone()]]
    })
}

/// Right-invariant fields `∂x + y∂z`, `∂y`, `∂z` for `(x,y,z)(x',y',z') = (x+x', y+y', z+z'+xy')`.
pub fn heisenberg_right_frame() -> FieldFn {
    let (o, l) = (Jet::constant(0.0), Jet::constant(1.0));
    frame_from_columns(3, move |x| {
        vec![
            vec![l.clone(), o.clone(), x[1].clone()],
            vec![o.clone(), l.clone(), o.clone()],
            vec![o.clone(), o.clone(), l.clone()],
        ]
    })
}

/// Left-invariant fields `∂x`, `∂y + x∂z`, `∂z`.
pub fn heisenberg_left_frame() -> FieldFn {
    let (o, l) = (Jet::constant(0.0), Jet::constant(1.0));
    frame_from_columns(3, move |x| {
        vec![
            vec![l.clone(), o.clone(), o.clone()],
            vec![o.clone(), l.clone(), x[0].clone()],
            vec![o.clone(), o.clone(), l.clone()],
        ]
    })
}

/// The canonical pair on a group: `∇` makes right-invariant fields parallel,
/// its dual makes left-invariant fields parallel.
pub fn group_pair(chart: Chart, right_frame: FieldFn) -> DualPair {
    DualPair::from_connection(TMConnection::from_frame(chart, right_frame))
}

pub fn affine_pair() -> DualPair {
    group_pair(affine_group_chart(), affine_right_frame())
}

pub fn heisenberg_pair() -> DualPair {
    group_pair(heisenberg_chart(), heisenberg_right_frame())
}

pub fn abelian_pair(n: usize) -> Result<DualPair> {
    let chart = Chart::cube(n, -2.0, 2.0)?;
    Ok(DualPair::from_connection(TMConnection::flat(chart)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cartan::is_cartan;

    fn samples(c: &Chart, k: usize) -> Vec<Vec<f64>> {
        c.halton_points(k)
    }

    #[test]
    fn euclidean_chart_is_block_diagonal() {
        let rc = build_riemannian_cartan(&Metric::euclidean(2).unwrap()).unwrap();
        assert_eq!(rc.chart().rank(), 3);
        let m = [0.3, -0.4];
        let conn = rc.chart().conn_at(&m).unwrap();
        let r = 3;
        // ∇ e_j has no h-part, ∇ φ has no h-part; φ(∂_i) is the only coupling
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(conn[(i * r + j) * r + 2], 0.0);
            }
            assert_eq!(conn[(i * r + 2) * r + 2], 0.0);
        }
        assert!(rc.skew_residual(&m).unwrap() < 1e-12);
        let s = samples(rc.chart().base(), 6);
        assert!(is_flat(rc.chart(), &s, 1e-12).unwrap().pass);
        let c = classify_constant_curvature(&rc, &m, 1e-6).unwrap();
        assert_eq!(c.tag, CurvatureTag::Euclidean);
        assert!(c.signature_matches, "{:?}", c.killing_signature);
    }

    #[test]
    fn sphere_is_flat_and_classified() {
        let rc = build_riemannian_cartan(&Metric::sphere(2).unwrap()).unwrap();
        let s = samples(rc.chart().base(), 8);
        let c = is_cartan(rc.chart(), &s, 1e-7).unwrap();
        assert!(c.pass, "{}", c.max_residual);
        let f = is_flat(rc.chart(), &s, 1e-7).unwrap();
        assert!(f.pass, "{}", f.max_residual);
        for m in &s {
            assert!(rc.skew_residual(m).unwrap() < 1e-9);
        }
        let cl = classify_constant_curvature(&rc, &[0.4, -0.2], 1e-6).unwrap();
        assert_eq!(cl.tag, CurvatureTag::Spherical);
        assert!((cl.s - 1.0).abs() < 1e-6);
        assert_eq!(cl.model, "o(3)");
        assert!(cl.signature_matches);
        // the extracted bracket is so(3) up to a change of basis: Killing form negative definite
        assert!(cl.algebra.check_jacobi(1e-9).pass);
    }

    #[test]
    fn hyperbolic_classification_and_scaling() {
        let rc = build_riemannian_cartan(&Metric::hyperbolic(2).unwrap()).unwrap();
        let s = samples(rc.chart().base(), 6);
        assert!(is_flat(rc.chart(), &s, 1e-7).unwrap().pass);
        let cl = classify_constant_curvature(&rc, &[0.3, 1.2], 1e-6).unwrap();
        assert_eq!(cl.tag, CurvatureTag::Hyperbolic);
        assert!((cl.s + 1.0).abs() < 1e-6);
        assert!(cl.signature_matches, "{:?}", cl.killing_signature);

        let big = build_riemannian_cartan(&Metric::sphere(2).unwrap().scaled(4.0).unwrap()).unwrap();
        let cl = classify_constant_curvature(&big, &[0.1, 0.2], 1e-6).unwrap();
        assert!((cl.s - 0.25).abs() < 1e-6, "{}", cl.s);
    }

    #[test]
    fn ellipsoid_is_cartan_but_not_flat() {
        let rc = build_riemannian_cartan(&Metric::ellipsoid(1.0, 1.0, 1.3).unwrap()).unwrap();
        let s = samples(rc.chart().base(), 5);
        let c = is_cartan(rc.chart(), &s, 1e-6).unwrap();
        assert!(c.pass, "{}", c.max_residual);
        let f = is_flat(rc.chart(), &s, 1e-6).unwrap();
        assert!(!f.pass);
        assert!(f.max_residual > 1e-3);
        assert!(classify_constant_curvature(&rc, &[1.0, 0.5], 1e-6).is_err());
    }

    #[test]
    fn curvature_matches_closed_form() {
        for metric in [
            Metric::euclidean(2).unwrap(),
            Metric::sphere(2).unwrap(),
            Metric::ellipsoid(1.0, 1.0, 1.3).unwrap(),
        ] {
            let rc = build_riemannian_cartan(&metric).unwrap();
            let s = samples(rc.chart().base(), 5);
            let rep = curvature_formula_check(&rc, &s, 1e-6).unwrap();
            assert!(rep.pass, "{}: {}", metric.name(), rep.max_residual);
        }
    }

    #[test]
    fn bracket_matches_displayed_formula() {
        for metric in [
            Metric::euclidean(2).unwrap(),
            Metric::sphere(2).unwrap(),
            Metric::hyperbolic(2).unwrap(),
        ] {
            let rc = build_riemannian_cartan(&metric).unwrap();
            let s = samples(rc.chart().base(), 4);
            let rep = bracket_formula_check(&rc, &s, 3, 1e-6).unwrap();
            assert!(rep.pass, "{}: {}", metric.name(), rep.max_residual);
        }
    }

    #[test]
    fn three_dimensional_sphere() {
        let rc = build_riemannian_cartan(&Metric::sphere(3).unwrap()).unwrap();
        assert_eq!(rc.chart().rank(), 6);
        let cl = classify_constant_curvature(&rc, &[0.2, 0.1, -0.3], 1e-6).unwrap();
        assert_eq!(cl.model, "o(4)");
        assert!(cl.signature_matches);
    }

    #[test]
    fn dual_pairs() {
        let a = affine_pair();
        let s = samples(a.chart(), 6);
        assert!(check_dual_pair(&a, &s, 1e-8).unwrap().pass);
        // ∇̄ replaced by ∇ breaks the identity wherever the torsion is nonzero
        let bad = DualPair::new(a.nabla().clone(), a.nabla().clone()).unwrap();
        assert!(!check_dual_pair(&bad, &s, 1e-8).unwrap().pass);
        // the dual is the left-trivialization connection
        let left = TMConnection::from_frame(affine_group_chart(), affine_left_frame());
        for m in &s {
            let x = a.nabla_bar().christoffel(m).unwrap();
            let y = left.christoffel(m).unwrap();
            assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-12));
        }
        let e = abelian_pair(2).unwrap();
        assert_eq!(check_dual_pair(&e, &samples(e.chart(), 3), 0.0).unwrap().max_residual, 0.0);
    }

    #[test]
    fn local_lie_groups() {
        let a = affine_pair();
        let s = samples(a.chart(), 6);
        let rep = local_lie_group_check(&a, &s, &[1.0, 0.0], 1e-8).unwrap();
        assert!(rep.pass, "{rep:?}");
        // at the identity the coordinate vectors are the invariant ones: [e₀, e₁] = ±e₁
        assert!((rep.bracket.c(0, 1, 1).abs() - 1.0).abs() < 1e-12);
        assert_eq!(rep.bracket.c(0, 1, 0), 0.0);

        let h = heisenberg_pair();
        let rep = local_lie_group_check(&h, &samples(h.chart(), 6), &[0.0; 3], 1e-8).unwrap();
        assert!(rep.pass);
        let rep = local_lie_group_check(
            &abelian_pair(3).unwrap(),
            &samples(&Chart::cube(3, -1.0, 1.0).unwrap(), 4),
            &[0.0; 3],
            1e-12,
        )
        .unwrap();
        assert!(rep.pass && rep.bracket.is_abelian(0.0));

        let sphere = DualPair::from_connection(levi_civita(&Metric::sphere(2).unwrap()));
        let rep = local_lie_group_check(&sphere, &samples(sphere.chart(), 4), &[0.0, 0.0], 1e-8).unwrap();
        assert_eq!(rep.failed_stage.as_deref(), Some("flatness"));
    }

    #[test]
    fn obstruction_forms() {
        let a = affine_pair();
        for m in samples(a.chart(), 5) {
            let w = obstruction_form(&a, &m, 1e-7).unwrap();
            assert!(w.dw.pass);
            // w = ∓da/a
            assert!((w.w[0].abs() - 1.0 / m[0]).abs() < 1e-10 && w.w[1].abs() < 1e-12, "{:?}", w.w);
        }
        let h = heisenberg_pair();
        for m in samples(h.chart(), 5) {
            let w = obstruction_form(&h, &m, 1e-7).unwrap();
            assert!(w.w.iter().all(|v| v.abs() <= 1e-9) && w.dw.pass);
        }
        let w = obstruction_form(&abelian_pair(2).unwrap(), &[0.1, 0.2], 1e-7).unwrap();
        assert_eq!(w.w, vec![0.0, 0.0]);
    }
}
