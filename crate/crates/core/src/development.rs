//! Development of a locally homogeneous structure into a model `G₀/H₀`:
//! equivariance with twist, the development map, induced affine maps and
//! atlas reconstruction.
//!
//! The development lifts a base path through the anchor (minimum-norm
//! solution) to a curve `ξ_t` in `g₀` and solves `ġ = s·Ξ_t g`, `g(0) = I`,
//! where `Ξ_t` is the realized matrix of `ξ_t` and `s` is the model's flow
//! sign. With `s = +1` and an action whose fields are the fundamental fields
//! of a left action, `g(t)·o` traces the path when `o` is the orbit point of
//! the base point.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::{gram_schmidt, log_by_roots, log_matrix, sqrtm, AlgebraMap, MatrixRealization, Subalgebra};
use crate::algebroid::{max_diff, ActionAlgebroid, GluedAlgebroid};
use crate::cartan::{is_cartan, is_flat, CARTAN_TOL};
use crate::error::{Error, Result};
use crate::geometry::FieldFn;
use crate::jet::{self, Jet};
use crate::ode::{self, OdeOptions};
use crate::report::TensorReport;
use crate::transport::{segment, BasePath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    AssertedClosed,
    AssertedNonclosed,
    Unknown,
}

pub type Readout = Arc<dyn Fn(&DMatrix<f64>) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub struct HomogeneousModel {
    realization: MatrixRealization,
    h0: Subalgebra,
    closure: Closure,
    coset_tol: f64,
    flow_sign: f64,
    complement: Vec<DVector<f64>>,
    readout: Option<Readout>,
}

impl fmt::Debug for HomogeneousModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HomogeneousModel")
            .field("dim", &self.realization.algebra().dim())
            .field("h0", &self.h0.dim())
            .field("closure", &self.closure)
            .field("coset_tol", &self.coset_tol)
            .field("flow_sign", &self.flow_sign)
            .finish_non_exhaustive()
    }
}

pub const COSET_TOL: f64 = 1e-6;

impl HomogeneousModel {
    pub fn new(realization: MatrixRealization, h0: Subalgebra, closure: Closure) -> Result<Self> {
        if h0.parent().distance(realization.algebra()) > 1e-9 {
            return Err(Error::Inconsistent("h0 is not a subalgebra of the realized algebra".into()));
        }
        let r = realization.algebra().dim();
        let mut vecs: Vec<DVector<f64>> = h0.orthonormal_basis().to_vec();
        let k = vecs.len();
        for i in 0..r {
            let mut e = DVector::zeros(r);
            e[i] = 1.0;
            vecs.push(e);
        }
        let complement = gram_schmidt(&vecs, 1e-9).split_off(k);
        Ok(HomogeneousModel {
            realization,
            h0,
            closure,
            coset_tol: COSET_TOL,
            flow_sign: 1.0,
            complement,
            readout: None,
        })
    }

    /// `H₀ = {e}`.
    pub fn group(realization: MatrixRealization) -> Result<Self> {
        let h0 = Subalgebra::zero(realization.algebra().clone());
        Self::new(realization, h0, Closure::AssertedClosed)
    }

    pub fn with_readout(mut self, f: impl Fn(&DMatrix<f64>) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.readout = Some(Arc::new(f));
        self
    }

    /// Readout `g ↦ g·o` for a homogeneous orbit point (last coordinate
    /// normalized to 1 and dropped).
    pub fn with_orbit_point(self, o: Vec<f64>) -> Self {
        let o = DVector::from_vec(o);
        self.with_readout(move |g| {
            let p = g * &o;
            let n = p.len();
            let w = p[n - 1];
            (0..n - 1).map(|i| p[i] / w).collect()
        })
    }

    pub fn with_flow_sign(mut self, s: f64) -> Self {
        self.flow_sign = s.signum();
        self
    }

    pub fn with_coset_tol(mut self, tol: f64) -> Self {
        self.coset_tol = tol;
        self
    }

    pub fn realization(&self) -> &MatrixRealization {
        &self.realization
    }

    pub fn h0(&self) -> &Subalgebra {
        &self.h0
    }

    pub fn closure(&self) -> Closure {
        self.closure
    }

    pub fn coset_tol(&self) -> f64 {
        self.coset_tol
    }

    pub fn flow_sign(&self) -> f64 {
        self.flow_sign
    }

    /// Orthonormal basis of the orthogonal complement of `h₀`.
    pub fn complement(&self) -> &[DVector<f64>] {
        &self.complement
    }

    pub fn readout(&self, c: &Coset) -> Option<Vec<f64>> {
        self.readout.as_ref().map(|f| f(&c.g))
    }

    /// Coordinates of `log(g)` along the complement of `h₀`.
    fn complement_coords(&self, g: &DMatrix<f64>) -> Result<DVector<f64>> {
        let l = match log_matrix(g) {
            Ok(l) => l,
            Err(_) => log_by_roots(g)?,
        };
        let (coords, resid) = self.realization.project(&l);
        if resid > 1e-6 {
            return Err(Error::NotInSpan { residual: resid });
        }
        let v = DVector::from_vec(coords);
        Ok(DVector::from_iterator(
            self.complement.len(),
            self.complement.iter().map(|e| e.dot(&v)),
        ))
    }

    /// `|proj_{h₀⊥} log(a⁻¹ b)|`; zero when `aH₀ = bH₀` near the identity.
    pub fn coset_distance(&self, a: &Coset, b: &Coset) -> Result<f64> {
        let ainv =
            a.g.clone()
                .try_inverse()
                .ok_or_else(|| Error::Singular("coset representative".into()))?;
        Ok(self.complement_coords(&(ainv * &b.g))?.norm())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coset {
    pub g: DMatrix<f64>,
}

impl Coset {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        if !g.is_square() || g.clone().try_inverse().is_none() {
            return Err(Error::Singular("coset representative".into()));
        }
        Ok(Coset { g })
    }

    pub fn identity(n: usize) -> Self {
        Coset {
            g: DMatrix::identity(n, n),
        }
    }
}

/// Base map with a twist `μ`; equivariance is checked, not assumed.
#[derive(Clone)]
pub struct EquivariantMap {
    pub base_map: FieldFn,
    pub twist: AlgebraMap,
}

impl fmt::Debug for EquivariantMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EquivariantMap")
            .field("twist", &self.twist.matrix)
            .finish_non_exhaustive()
    }
}

impl EquivariantMap {
    pub fn new(base_map: FieldFn, twist: AlgebraMap) -> Self {
        EquivariantMap { base_map, twist }
    }

    pub fn identity(a: &ActionAlgebroid) -> Self {
        EquivariantMap {
            base_map: crate::geometry::field_fn(|x| x.to_vec()),
            twist: AlgebraMap::identity(a.algebra()),
        }
    }

    pub fn map_point(&self, p: &[f64]) -> Vec<f64> {
        jet::values(&(self.base_map)(&jet::consts(p)))
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &EquivariantMap) -> Result<EquivariantMap> {
        let outer = self.base_map.clone();
        let first = inner.base_map.clone();
        Ok(EquivariantMap {
            base_map: crate::geometry::field_fn(move |x| outer(&first(x))),
            twist: self.twist.compose(&inner.twist)?,
        })
    }
}

/// `max |Dφ(m)·ξ†(m) − (μξ)†(φ(m))|` over basis `ξ` and samples.
pub fn check_equivariant_twist(a: &ActionAlgebroid, e: &EquivariantMap, samples: &[Vec<f64>], tol: f64) -> Result<TensorReport> {
    let c = a.chart();
    let (n, r) = (c.dim(), c.rank());
    let mu: Vec<Jet> = jet::consts(e.twist.matrix.transpose().as_slice());
    let mut per = Vec::with_capacity(samples.len());
    for p in samples {
        c.base().check(p)?;
        let x = jet::consts(p);
        let q = e.map_point(p);
        if !c.base().contains(&q) {
            return Err(Error::OutsideChart { point: q });
        }
        let y = jet::consts(&q);
        let ax = c.anchor_jet(&x);
        let ay = c.anchor_jet(&y);
        let amu = jet::values(&jet::mat_mul(&ay, &mu, n, r, r));
        let mut worst = 0.0f64;
        for i in 0..r {
            let col: Vec<Jet> = (0..n).map(|k| ax[k * r + i].clone()).collect();
            let push = jet::values(&jet::directional(|z| (e.base_map)(z), &x, &col));
            for k in 0..n {
                worst = worst.max((push[k] - amu[k * r + i]).abs());
            }
        }
        per.push(worst);
    }
    Ok(TensorReport::from_samples("equivariant_twist", samples.to_vec(), per, tol))
}

fn dev_opts() -> OdeOptions {
    // developments can grow legitimately (e.g. exponentially on the line);
    // blow-up detection is for geodesics
    OdeOptions {
        atol: 1e-11,
        rtol: 1e-11,
        blowup: 1e100,
        ..Default::default()
    }
}

/// Minimum-norm lift of `ṁ` through the anchor at `m`.
fn lift(a: &ActionAlgebroid, m: &[f64], mdot: &[f64]) -> Result<DVector<f64>> {
    let am = a.chart().anchor_at(m)?;
    let n = am.nrows();
    let svd = am.svd(true, true);
    let smin = svd.singular_values.iter().take(n).fold(f64::INFINITY, |s, v| s.min(*v));
    if svd.singular_values.len() < n || !(smin > 1e-10) {
        return Err(Error::RankDeficient {
            sigma: smin.min(0.0).max(smin),
        });
    }
    svd.solve(&DVector::from_column_slice(mdot), 1e-14)
        .map_err(|e| Error::Singular(e.to_string()))
}

/// Develop along a path in the action chart (leg chart indices are ignored).
pub fn develop_point(a: &ActionAlgebroid, h: &HomogeneousModel, path: &BasePath) -> Result<Coset> {
    let real = h.realization();
    if real.algebra().dim() != a.chart().rank() {
        return Err(Error::DimensionMismatch {
            expected: a.chart().rank(),
            found: real.algebra().dim(),
        });
    }
    let nn = real.matrix_dim();
    let mut g = DMatrix::<f64>::identity(nn, nn);
    let sign = h.flow_sign();
    for leg in path.legs() {
        let cv = leg.curve.clone();
        let y0: Vec<f64> = g.transpose().as_slice().to_vec();
        let traj = ode::integrate(
            |s, y| {
                let sj = Jet::variable(s, 0);
                let p = cv(&sj);
                let m: Vec<f64> = p.iter().map(Jet::value).collect();
                let v: Vec<f64> = p.iter().map(|q| q.coef(1)).collect();
                let xi = lift(a, &m, &v)?;
                let big = real.element(xi.as_slice()) * sign;
                let gm = DMatrix::from_row_slice(nn, nn, y);
                Ok((big * gm).transpose().as_slice().to_vec())
            },
            0.0,
            &y0,
            1.0,
            &dev_opts(),
        );
        let y = traj.into_final()?;
        g = DMatrix::from_row_slice(nn, nn, &y);
    }
    Coset::new(g)
}

/// Develop along the straight segment `m0 → m`.
pub fn develop_straight(a: &ActionAlgebroid, h: &HomogeneousModel, m0: &[f64], m: &[f64]) -> Result<Coset> {
    develop_point(a, h, &BasePath::in_chart(0, segment(m0.to_vec(), m.to_vec())))
}

pub fn path_independence_check(a: &ActionAlgebroid, h: &HomogeneousModel, p1: &BasePath, p2: &BasePath) -> Result<crate::report::Residual> {
    let e1 = p1.end().1;
    let e2 = p2.end().1;
    if max_diff(&e1, &e2) > 1e-9 || max_diff(&p1.start().1, &p2.start().1) > 1e-9 {
        return Err(Error::Invalid("paths must share endpoints".into()));
    }
    let g1 = develop_point(a, h, p1)?;
    let g2 = develop_point(a, h, p2)?;
    Ok(crate::report::Residual::new(h.coset_distance(&g1, &g2)?, h.coset_tol()))
}

/// Jacobian of `m ↦ D(m)` at `m`, in complement coordinates (central
/// differences of `log(D(m)⁻¹ D(m ± h e_j))`).
pub fn develop_jacobian(a: &ActionAlgebroid, h: &HomogeneousModel, m0: &[f64], m: &[f64], step: f64) -> Result<DMatrix<f64>> {
    let n = m.len();
    let k = h.complement().len();
    let d = develop_straight(a, h, m0, m)?;
    let mut jac = DMatrix::zeros(k, n);
    for j in 0..n {
        let mut plus = m.to_vec();
        let mut minus = m.to_vec();
        plus[j] += step;
        minus[j] -= step;
        let dp = develop_straight(a, h, m0, &plus)?;
        let dm = develop_straight(a, h, m0, &minus)?;
        let dinv = d.g.clone().try_inverse().ok_or_else(|| Error::Singular("development".into()))?;
        let cp = h.complement_coords(&(&dinv * &dp.g))?;
        let cm = h.complement_coords(&(&dinv * &dm.g))?;
        jac.set_column(j, &((cp - cm) / (2.0 * step)));
    }
    Ok(jac)
}

/// `μ̂(g) = exp(μ log g)` by inverse scaling and squaring.
pub fn mu_hat(real: &MatrixRealization, mu: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let nn = g.nrows();
    let id = DMatrix::<f64>::identity(nn, nn);
    let mut a = g.clone();
    let mut k = 0;
    while (&a - &id).norm() > 0.25 {
        if k >= 40 {
            return Err(Error::LogOutsideRegion { radius: (&a - &id).norm() });
        }
        a = sqrtm(&a)?;
        k += 1;
    }
    let l = real.log(&a, 1e-6)?;
    let xi = mu * DVector::from_vec(l.coords);
    let mut out = real.exp(xi.as_slice(), 1.0)?;
    for _ in 0..k {
        out = &out * &out;
    }
    Ok(out)
}

/// `gH₀ ↦ μ̂(g)·q·H₀`.
#[derive(Debug, Clone)]
pub struct InducedMap {
    pub twist: DMatrix<f64>,
    pub q: Coset,
    /// `μ(h₀) ⊂ Ad_q h₀`, measured on an orthonormal basis of `h₀`.
    pub lemma_b_residual: f64,
}

impl InducedMap {
    pub fn new(h: &HomogeneousModel, twist: DMatrix<f64>, q: Coset) -> Result<Self> {
        let real = h.realization();
        let (ad, _) = real.adjoint(&q.g)?;
        let image: Vec<DVector<f64>> = h.h0().orthonormal_basis().iter().map(|b| &ad * b).collect();
        let image = gram_schmidt(&image, 1e-12);
        let mut resid = 0.0f64;
        for b in h.h0().orthonormal_basis() {
            let mut v = &twist * b;
            for u in &image {
                v -= u * u.dot(&v);
            }
            resid = resid.max(v.norm());
        }
        if !(resid <= h.coset_tol()) {
            return Err(Error::Inconsistent(format!(
                "twist does not carry h0 to Ad_q h0 (residual {resid:e})"
            )));
        }
        Ok(InducedMap {
            twist,
            q,
            lemma_b_residual: resid,
        })
    }

    pub fn identity(h: &HomogeneousModel) -> Self {
        let r = h.realization().algebra().dim();
        InducedMap {
            twist: DMatrix::identity(r, r),
            q: Coset::identity(h.realization().matrix_dim()),
            lemma_b_residual: 0.0,
        }
    }

    pub fn apply(&self, h: &HomogeneousModel, c: &Coset) -> Result<Coset> {
        Coset::new(mu_hat(h.realization(), &self.twist, &c.g)? * &self.q.g)
    }

    /// `self ∘ inner`: twist `μ₁μ₂`, base element `μ̂₁(q₂)·q₁`.
    pub fn compose(&self, h: &HomogeneousModel, inner: &InducedMap) -> Result<InducedMap> {
        let q = mu_hat(h.realization(), &self.twist, &inner.q.g)? * &self.q.g;
        InducedMap::new(h, &self.twist * &inner.twist, Coset::new(q)?)
    }
}

/// The map induced by `e`, with `q = D(φ(m₀))` developed along the straight
/// segment from `m₀`.
pub fn induced_affine_map(a: &ActionAlgebroid, h: &HomogeneousModel, e: &EquivariantMap, m0: &[f64]) -> Result<InducedMap> {
    let q = develop_straight(a, h, m0, &e.map_point(m0))?;
    InducedMap::new(h, e.twist.matrix.clone(), q)
}

/// Coset distance between `D(φ(m))` and `φ_{G₀/H₀}(D(m))` at samples.
pub fn equivariance_diagram_check(
    a: &ActionAlgebroid,
    h: &HomogeneousModel,
    e: &EquivariantMap,
    m0: &[f64],
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<TensorReport> {
    let ind = induced_affine_map(a, h, e, m0)?;
    let mut per = Vec::with_capacity(samples.len());
    for m in samples {
        let lhs = develop_straight(a, h, m0, &e.map_point(m))?;
        let rhs = ind.apply(h, &develop_straight(a, h, m0, m)?)?;
        per.push(h.coset_distance(&lhs, &rhs)?);
    }
    Ok(TensorReport::from_samples("equivariance_diagram", samples.to_vec(), per, tol))
}

// ---------------------------------------------------------------------------
// closure

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ClosureVerdict {
    Closed { reason: String },
    NonclosedWitness { frequencies: Vec<f64>, ratio: f64 },
    Undecided { reason: String },
}

pub const RELATION_BOUND: u64 = 1_000_000;
pub const RELATION_TOL: f64 = 1e-10;

/// Integer relation `q·x − p ≈ 0` with `q ≤ bound` and `|q·x − p| ≤ tol`,
/// searched along the continued-fraction convergents (which minimize the
/// residual for their denominator size).
pub fn rational_approximation(x: f64, bound: u64, tol: f64) -> Option<(i64, u64)> {
    let (mut h0, mut h1) = (1i128, x.floor() as i128);
    let (mut k0, mut k1) = (0i128, 1i128);
    let mut frac = x - x.floor();
    loop {
        if (k1 as f64 * x - h1 as f64).abs() <= tol {
            return Some((h1 as i64, k1 as u64));
        }
        if frac.abs() < 1e-15 {
            return None;
        }
        let inv = 1.0 / frac;
        let a = inv.floor() as i128;
        frac = inv - inv.floor();
        let h2 = a * h1 + h0;
        let k2 = a * k1 + k0;
        if k2 as u64 > bound {
            return None;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
    }
}

pub fn geometric_closure_probe(h: &HomogeneousModel) -> ClosureVerdict {
    match h.closure() {
        Closure::AssertedClosed => return ClosureVerdict::Closed { reason: "asserted".into() },
        Closure::AssertedNonclosed => {
            return ClosureVerdict::NonclosedWitness {
                frequencies: vec![],
                ratio: f64::NAN,
            }
        }
        Closure::Unknown => {}
    }
    if h.h0().dim() == 0 {
        return ClosureVerdict::Closed { reason: "h0 = {0}".into() };
    }
    if h.h0().dim() > 1 {
        return ClosureVerdict::Undecided {
            reason: "only one-dimensional h0 is probed".into(),
        };
    }
    let eta = &h.h0().orthonormal_basis()[0];
    let x = h.realization().element(eta.as_slice());
    // compact one-parameter subgroups: skew-symmetric realization
    if (&x + x.transpose()).amax() > 1e-12 {
        return ClosureVerdict::Undecided {
            reason: "generator is not in a compact torus of the realization".into(),
        };
    }
    let mut freqs: Vec<f64> = x.complex_eigenvalues().iter().map(|z| z.im.abs()).filter(|w| *w > 1e-12).collect();
    freqs.sort_by(f64::total_cmp);
    freqs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let Some(&w0) = freqs.first() else {
        return ClosureVerdict::Closed {
            reason: "trivial one-parameter group".into(),
        };
    };
    for &w in &freqs[1..] {
        if rational_approximation(w / w0, RELATION_BOUND, RELATION_TOL).is_none() {
            return ClosureVerdict::NonclosedWitness {
                frequencies: freqs.clone(),
                ratio: w / w0,
            };
        }
    }
    ClosureVerdict::Closed {
        reason: "commensurable frequencies".into(),
    }
}

// ---------------------------------------------------------------------------
// atlas reconstruction

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSample {
    pub point: Vec<f64>,
    pub coset: Vec<f64>,
    pub readout: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevelopedChart {
    pub index: usize,
    pub base_point: Vec<f64>,
    pub samples: Vec<ChartSample>,
    /// Smallest `|det|` of the development Jacobian over the samples (only
    /// when `dim g₀/h₀` equals the base dimension).
    pub min_abs_det: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub twist: Vec<Vec<f64>>,
    /// Base element `q` of `gH₀ ↦ μ̂(g)·q·H₀`, row by row.
    pub q: Vec<Vec<f64>>,
    /// Max coset distance between `ψ_j∘φ` and the induced map applied to
    /// `ψ_i` over the overlap samples.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasReport {
    pub charts: Vec<DevelopedChart>,
    pub transitions: Vec<Transition>,
    pub closure: ClosureVerdict,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtlasSpec {
    /// Development base point per chart; chart centres when `None`.
    pub base_points: Option<Vec<Vec<f64>>>,
    pub samples_per_chart: usize,
    pub tol: f64,
}

impl Default for AtlasSpec {
    fn default() -> Self {
        AtlasSpec {
            base_points: None,
            samples_per_chart: 5,
            tol: 1e-6,
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub const MIN_JACOBIAN: f64 = 1e-6;

/// Numeric charts `ψ_i` by development from each chart's base point, and
/// the transition data of every overlap.
pub fn reconstruct_atlas(g: &GluedAlgebroid, h: &HomogeneousModel, spec: &AtlasSpec) -> Result<AtlasReport> {
    let closure = geometric_closure_probe(h);
    if let ClosureVerdict::NonclosedWitness { .. } = closure {
        return Err(Error::Invalid("h0 is not closed; the model space is not a manifold".into()));
    }
    let mut actions = Vec::new();
    let mut bases = Vec::new();
    for (i, c) in g.charts().iter().enumerate() {
        let s = c.base().halton_points(8);
        let flat = is_flat(c, &s, CARTAN_TOL)?;
        let cartan = is_cartan(c, &s, CARTAN_TOL)?;
        if !flat.pass {
            return Err(Error::FlatnessViolation {
                residual: flat.max_residual,
            });
        }
        if !cartan.pass {
            return Err(Error::Inconsistent(format!("chart {i} is not Cartan ({:e})", cartan.max_residual)));
        }
        actions.push(ActionAlgebroid::from_chart(c, 1e-9)?);
        let b = match &spec.base_points {
            Some(bp) => bp
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("no base point for chart {i}")))?,
            None => c.base().center(),
        };
        c.base().check(&b)?;
        bases.push(b);
    }
    let square = h.complement().len() == g.dim();
    let mut charts = Vec::new();
    for (i, c) in g.charts().iter().enumerate() {
        let mut samples = Vec::new();
        let mut min_det: Option<f64> = None;
        for p in c.base().halton_points(spec.samples_per_chart) {
            let d = develop_straight(&actions[i], h, &bases[i], &p)?;
            if square {
                let j = develop_jacobian(&actions[i], h, &bases[i], &p, 1e-5)?;
                let det = j.determinant().abs();
                if !(det >= MIN_JACOBIAN) {
                    return Err(Error::RankDeficient { sigma: det });
                }
                min_det = Some(min_det.map_or(det, |m| m.min(det)));
            }
            samples.push(ChartSample {
                point: p,
                coset: d.g.transpose().as_slice().to_vec(),
                readout: h.readout(&d),
            });
        }
        charts.push(DevelopedChart {
            index: i,
            base_point: bases[i].clone(),
            samples,
            min_abs_det: min_det,
        });
    }
    let mut transitions = Vec::new();
    let mut pass = true;
    for o in g.overlaps() {
        let (i, j) = (o.from, o.to);
        let pts = o.region.halton_points(spec.samples_per_chart.max(3));
        let mut q_ref: Option<Coset> = None;
        let mut resid = 0.0f64;
        for p in &pts {
            let gi = develop_straight(&actions[i], h, &bases[i], p)?;
            let gj = develop_straight(&actions[j], h, &bases[j], &o.map_point(p))?;
            let mg = mu_hat(h.realization(), &o.fiber, &gi.g)?;
            let mginv = mg.try_inverse().ok_or_else(|| Error::Singular("twisted development".into()))?;
            let q = Coset::new(mginv * &gj.g)?;
            match &q_ref {
                None => q_ref = Some(q),
                Some(q0) => {
                    let ind = InducedMap {
                        twist: o.fiber.clone(),
                        q: q0.clone(),
                        lemma_b_residual: 0.0,
                    };
                    resid = resid.max(h.coset_distance(&ind.apply(h, &gi)?, &gj)?);
                }
            }
        }
        let q = q_ref.expect("at least one overlap sample");
        InducedMap::new(h, o.fiber.clone(), q.clone())?;
        if !(resid <= spec.tol) {
            pass = false;
        }
        transitions.push(Transition {
            from: i,
            to: j,
            twist: rows(&o.fiber),
            q: rows(&q.g),
            residual: resid,
        });
    }
    Ok(AtlasReport {
        charts,
        transitions,
        closure,
        tol: spec.tol,
        pass,
    })
}
