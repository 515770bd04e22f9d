//! Transitive Lie algebroids presented on charts by an anchor, a linear
//! connection and a torsion tensor; action algebroids; gluing along overlaps.
//!
//! Layouts (all row-major, `n` = base dimension, `r` = rank):
//! anchor `a[i·r + a]`; connection `Γ[(i·r + a)·r + b]` meaning
//! `∇_{∂_i} e_a = Γ^b_{ia} e_b`; torsion `T[(a·r + b)·r + c]`, the `c`
//! component of `T(e_a, e_b)`.

use std::fmt;

use nalgebra::DMatrix;

use crate::algebra::LieAlgebra;
use crate::error::{Error, Result};
use crate::geometry::{field_fn, vf_bracket, Chart, FieldFn, Shape, SmoothField};
use crate::jet::{self, Jet};
use crate::report::TensorReport;
use crate::sampling;

#[derive(Clone)]
pub struct AlgebroidChart {
    name: String,
    base: Chart,
    rank: usize,
    anchor: FieldFn,
    conn: FieldFn,
    torsion: FieldFn,
}

impl fmt::Debug for AlgebroidChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AlgebroidChart")
            .field("name", &self.name)
            .field("base", &self.base)
            .field("rank", &self.rank)
            .finish_non_exhaustive()
    }
}

impl AlgebroidChart {
    /// Field lengths are checked at the centre of the sampling region.
    pub fn new(name: impl Into<String>, base: Chart, rank: usize, anchor: FieldFn, conn: FieldFn, torsion: FieldFn) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Invalid("algebroid rank must be positive".into()));
        }
        let n = base.dim();
        let c = base.center();
        let x = jet::consts(&c);
        for (what, len, want) in [
            ("anchor", anchor(&x).len(), n * rank),
            ("connection", conn(&x).len(), n * rank * rank),
            ("torsion", torsion(&x).len(), rank * rank * rank),
        ] {
            if len != want {
                return Err(Error::Invalid(format!("{what} field has {len} entries, expected {want}")));
            }
        }
        Ok(AlgebroidChart {
            name: name.into(),
            base,
            rank,
            anchor,
            conn,
            torsion,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base(&self) -> &Chart {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn anchor_fn(&self) -> &FieldFn {
        &self.anchor
    }

    pub fn conn_fn(&self) -> &FieldFn {
        &self.conn
    }

    pub fn anchor_jet(&self, x: &[Jet]) -> Vec<Jet> {
        (self.anchor)(x)
    }

    pub fn conn_jet(&self, x: &[Jet]) -> Vec<Jet> {
        (self.conn)(x)
    }

    /// The stored torsion, made exactly antisymmetric.
    pub fn torsion_jet(&self, x: &[Jet]) -> Vec<Jet> {
        let r = self.rank;
        let t = (self.torsion)(x);
        let mut out = vec![Jet::constant(0.0); r * r * r];
        for a in 0..r {
            for b in 0..r {
                for c in 0..r {
                    out[(a * r + b) * r + c] = 0.5 * (&t[(a * r + b) * r + c] - &t[(b * r + a) * r + c]);
                }
            }
        }
        out
    }

    pub fn anchor_at(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.base.check(p)?;
        let v = jet::values(&self.anchor_jet(&jet::consts(p)));
        finite(&v, "anchor", p)?;
        Ok(DMatrix::from_row_slice(self.dim(), self.rank, &v))
    }

    pub fn torsion_at(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.base.check(p)?;
        let v = jet::values(&self.torsion_jet(&jet::consts(p)));
        finite(&v, "torsion", p)?;
        Ok(v)
    }

    pub fn conn_at(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.base.check(p)?;
        let v = jet::values(&self.conn_jet(&jet::consts(p)));
        finite(&v, "connection", p)?;
        Ok(v)
    }

    /// `#X` at `x` for a fiber vector `X`.
    pub fn apply_anchor(&self, x: &[Jet], fiber: &[Jet]) -> Vec<Jet> {
        jet::mat_vec(&self.anchor_jet(x), fiber, self.dim(), self.rank)
    }

    /// `Γ_v` as an `r×r` matrix acting on fiber vectors: `(Γ_v)[b][a] = Σ_i v^i Γ^b_{ia}`.
    pub fn conn_matrix(&self, x: &[Jet], v: &[Jet]) -> Vec<Jet> {
        conn_matrix(&self.conn_jet(x), v, self.dim(), self.rank)
    }

    /// `∇_v s` at `x`.
    pub fn covariant(&self, v: &[Jet], s: &FieldFn, x: &[Jet]) -> Vec<Jet> {
        let r = self.rank;
        let sx = s(x);
        let mut out = jet::directional(|y| s(y), x, v);
        let g = self.conn_matrix(x, v);
        let gs = jet::mat_vec(&g, &sx, r, r);
        for (o, t) in out.iter_mut().zip(gs) {
            *o += t;
        }
        out
    }

    pub fn torsion_apply(&self, x: &[Jet], u: &[Jet], w: &[Jet]) -> Vec<Jet> {
        torsion_apply(&self.torsion_jet(x), u, w, self.rank)
    }

    /// `[X, Y] = ∇_{#X} Y − ∇_{#Y} X + T(X, Y)`.
    pub fn bracket_jet(&self, s1: &FieldFn, s2: &FieldFn, x: &[Jet]) -> Vec<Jet> {
        let xv = s1(x);
        let yv = s2(x);
        let ax = self.apply_anchor(x, &xv);
        let ay = self.apply_anchor(x, &yv);
        let a = self.covariant(&ax, s2, x);
        let b = self.covariant(&ay, s1, x);
        let t = self.torsion_apply(x, &xv, &yv);
        a.iter().zip(&b).zip(&t).map(|((p, q), s)| p - q + s).collect()
    }

    /// Replace the connection by `Γ + δΓ`; used to build perturbed examples.
    pub fn with_connection(&self, conn: FieldFn) -> Result<Self> {
        AlgebroidChart::new(
            self.name.clone(),
            self.base.clone(),
            self.rank,
            self.anchor.clone(),
            conn,
            self.torsion.clone(),
        )
    }

    pub fn with_torsion(&self, torsion: FieldFn) -> Result<Self> {
        AlgebroidChart::new(
            self.name.clone(),
            self.base.clone(),
            self.rank,
            self.anchor.clone(),
            self.conn.clone(),
            torsion,
        )
    }

    pub fn with_base(&self, base: Chart) -> Result<Self> {
        AlgebroidChart::new(
            self.name.clone(),
            base,
            self.rank,
            self.anchor.clone(),
            self.conn.clone(),
            self.torsion.clone(),
        )
    }
}

fn finite(v: &[f64], what: &str, p: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at {p:?}")))
    }
}

pub(crate) fn conn_matrix(conn: &[Jet], v: &[Jet], n: usize, r: usize) -> Vec<Jet> {
    let mut g = vec![Jet::constant(0.0); r * r];
    for i in 0..n {
        if v[i].coefs().iter().all(|c| *c == 0.0) {
            continue;
        }
        for a in 0..r {
            for b in 0..r {
                g[b * r + a] += &v[i] * &conn[(i * r + a) * r + b];
            }
        }
    }
    g
}

pub(crate) fn torsion_apply(t: &[Jet], u: &[Jet], w: &[Jet], r: usize) -> Vec<Jet> {
    let mut out = vec![Jet::constant(0.0); r];
    for a in 0..r {
        for b in 0..r {
            let uw = &u[a] * &w[b];
            if uw.coefs().iter().all(|c| *c == 0.0) {
                continue;
            }
            for (c, o) in out.iter_mut().enumerate() {
                *o += &uw * &t[(a * r + b) * r + c];
            }
        }
    }
    out
}

/// The section with constant components `v` in the chart trivialization.
pub fn constant_section(v: Vec<f64>) -> FieldFn {
    field_fn(move |_| jet::consts(&v))
}

pub fn basis_section(r: usize, a: usize) -> FieldFn {
    let mut v = vec![0.0; r];
    v[a] = 1.0;
    constant_section(v)
}

/// `f · X` for a scalar field `f` and a section `X`.
pub fn scaled_section(f: FieldFn, s: FieldFn) -> FieldFn {
    field_fn(move |x| {
        let k = f(x)[0].clone();
        s(x).into_iter().map(|v| v * &k).collect()
    })
}

pub fn section_bracket(c: &AlgebroidChart, s1: &FieldFn, s2: &FieldFn, m: &[f64]) -> Result<Vec<f64>> {
    c.base().check(m)?;
    let v = jet::values(&c.bracket_jet(s1, s2, &jet::consts(m)));
    finite(&v, "bracket", m)?;
    Ok(v)
}

/// Max over basis pairs and samples of `|#[e_a, e_b] − sign·[#e_a, #e_b]|`
/// for constant-frame sections.
pub fn check_anchor_homomorphism(c: &AlgebroidChart, samples: &[Vec<f64>], sign: f64, tol: f64) -> Result<TensorReport> {
    let r = c.rank();
    let n = c.dim();
    let mut per = Vec::with_capacity(samples.len());
    for p in samples {
        c.base().check(p)?;
        let x = jet::consts(p);
        let mut worst = 0.0f64;
        for a in 0..r {
            for b in (a + 1)..r {
                let ea = basis_section(r, a);
                let eb = basis_section(r, b);
                let br = c.bracket_jet(&ea, &eb, &x);
                let lhs = jet::values(&c.apply_anchor(&x, &br));
                let ca = anchor_column(c, a);
                let cb = anchor_column(c, b);
                let rhs = jet::values(&vf_bracket(&ca, &cb, &x));
                for i in 0..n {
                    worst = worst.max((lhs[i] - sign * rhs[i]).abs());
                }
            }
        }
        per.push(worst);
    }
    Ok(TensorReport::from_samples("anchor_homomorphism", samples.to_vec(), per, tol))
}

fn anchor_column(c: &AlgebroidChart, a: usize) -> FieldFn {
    let f = c.anchor_fn().clone();
    let (n, r) = (c.dim(), c.rank());
    field_fn(move |x| {
        let m = f(x);
        (0..n).map(|i| m[i * r + a].clone()).collect()
    })
}

// ---------------------------------------------------------------------------
// action algebroids

/// `g₀ × M` with the anchor `ξ ↦ ξ†`, connection `Γ ≡ 0` and torsion the
/// fiberwise bracket of `g₀`.
#[derive(Debug, Clone)]
pub struct ActionAlgebroid {
    algebra: LieAlgebra,
    chart: AlgebroidChart,
}

impl ActionAlgebroid {
    pub fn algebra(&self) -> &LieAlgebra {
        &self.algebra
    }

    pub fn chart(&self) -> &AlgebroidChart {
        &self.chart
    }

    /// `ξ†` for basis element `i`, as a vector field.
    pub fn generator_field(&self, i: usize) -> FieldFn {
        anchor_column(&self.chart, i)
    }

    /// Recognize a chart with vanishing connection and constant torsion as
    /// an action algebroid (checked on the overlap sample set).
    pub fn from_chart(chart: &AlgebroidChart, tol: f64) -> Result<Self> {
        let c0 = chart.torsion_at(&chart.base().center())?;
        for p in chart.base().halton_points(sampling::OVERLAP_SAMPLES) {
            let g = chart.conn_at(&p)?;
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !(gmax <= tol) {
                return Err(Error::Inconsistent(format!("connection does not vanish at {p:?} ({gmax:e})")));
            }
            let t = chart.torsion_at(&p)?;
            let d = max_diff(&t, &c0);
            if !(d <= tol) {
                return Err(Error::Inconsistent(format!("torsion is not constant at {p:?} ({d:e})")));
            }
        }
        let algebra = LieAlgebra::with_tolerance(chart.rank(), c0, tol.max(1e-9))?;
        Ok(ActionAlgebroid {
            algebra,
            chart: chart.clone(),
        })
    }

    /// Same action restricted to a smaller chart.
    pub fn restricted(&self, base: Chart) -> Result<Self> {
        Ok(ActionAlgebroid {
            algebra: self.algebra.clone(),
            chart: self.chart.with_base(base)?,
        })
    }
}

/// `action` is the `n×r` matrix field whose column `i` is `e_i†`.
pub fn make_action_algebroid(g0: &LieAlgebra, action: &SmoothField) -> Result<ActionAlgebroid> {
    let base = action.chart().clone();
    let n = base.dim();
    let r = g0.dim();
    if action.shape() != (Shape::Matrix { rows: n, cols: r }) {
        return Err(Error::Invalid(format!("action must be an {n}×{r} matrix field")));
    }
    for p in base.halton_points(sampling::OVERLAP_SAMPLES) {
        action.eval(&p)?;
    }
    let c: Vec<f64> = g0.structure_constants().to_vec();
    let torsion = field_fn(move |_| jet::consts(&c));
    let conn = field_fn(move |_| vec![Jet::constant(0.0); n * r * r]);
    let chart = AlgebroidChart::new(format!("action({})", r), base, r, action.func().clone(), conn, torsion)?;
    Ok(ActionAlgebroid {
        algebra: g0.clone(),
        chart,
    })
}

/// Max over basis pairs and samples of `|([e_i, e_j])† − sign·[e_i†, e_j†]|`.
pub fn check_action_homomorphism(a: &ActionAlgebroid, samples: &[Vec<f64>], sign: f64, tol: f64) -> Result<TensorReport> {
    let r = a.algebra.dim();
    let n = a.chart.dim();
    let mut per = Vec::with_capacity(samples.len());
    for p in samples {
        a.chart.base().check(p)?;
        let x = jet::consts(p);
        let am = a.chart.anchor_jet(&x);
        let mut worst = 0.0f64;
        for i in 0..r {
            for j in (i + 1)..r {
                let cij: Vec<Jet> = (0..r).map(|k| Jet::constant(a.algebra.c(i, j, k))).collect();
                let lhs = jet::values(&jet::mat_vec(&am, &cij, n, r));
                let rhs = jet::values(&vf_bracket(&a.generator_field(i), &a.generator_field(j), &x));
                for k in 0..n {
                    worst = worst.max((lhs[k] - sign * rhs[k]).abs());
                }
            }
        }
        per.push(worst);
    }
    Ok(TensorReport::from_samples("action_homomorphism", samples.to_vec(), per, tol))
}

// ---------------------------------------------------------------------------
// gluing

/// Transition from chart `from` to chart `to` on the box `region` (in
/// `from` coordinates): base map `φ` and constant fiber map `μ`, so that a
/// fiber vector `X` over `m` corresponds to `μX` over `φ(m)`.
#[derive(Clone)]
pub struct Overlap {
    pub from: usize,
    pub to: usize,
    pub region: Chart,
    pub base_map: FieldFn,
    pub inverse: FieldFn,
    pub fiber: DMatrix<f64>,
}

impl fmt::Debug for Overlap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Overlap")
            .field("from", &self.from)
            .field("to", &self.to)
            .field("region", &self.region)
            .field("fiber", &self.fiber)
            .finish_non_exhaustive()
    }
}

impl Overlap {
    pub fn map_point(&self, p: &[f64]) -> Vec<f64> {
        jet::values(&(self.base_map)(&jet::consts(p)))
    }

    pub fn unmap_point(&self, p: &[f64]) -> Vec<f64> {
        jet::values(&(self.inverse)(&jet::consts(p)))
    }

    /// The same overlap read in the opposite direction.
    pub fn reversed(&self, to_region: Chart) -> Result<Overlap> {
        let inv = self
            .fiber
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("overlap fiber map".into()))?;
        Ok(Overlap {
            from: self.to,
            to: self.from,
            region: to_region,
            base_map: self.inverse.clone(),
            inverse: self.base_map.clone(),
            fiber: inv,
        })
    }

    /// Translation `m ↦ m + shift` with fiber map `fiber`.
    pub fn translation(from: usize, to: usize, region: Chart, shift: Vec<f64>, fiber: DMatrix<f64>) -> Overlap {
        let back: Vec<f64> = shift.iter().map(|v| -v).collect();
        Overlap {
            from,
            to,
            region,
            base_map: field_fn(move |x| x.iter().zip(&shift).map(|(a, s)| a + *s).collect()),
            inverse: field_fn(move |x| x.iter().zip(&back).map(|(a, s)| a + *s).collect()),
            fiber,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GluedAlgebroid {
    charts: Vec<AlgebroidChart>,
    overlaps: Vec<Overlap>,
}

#[derive(Debug, Clone)]
pub struct OverlapReport {
    pub index: usize,
    pub anchor: f64,
    pub connection: f64,
    pub torsion: f64,
    pub inverse: f64,
}

impl OverlapReport {
    pub fn max(&self) -> f64 {
        self.anchor.max(self.connection).max(self.torsion).max(self.inverse)
    }
}

impl GluedAlgebroid {
    pub fn new(charts: Vec<AlgebroidChart>, overlaps: Vec<Overlap>) -> Result<Self> {
        let Some(first) = charts.first() else {
            return Err(Error::Invalid("glued algebroid needs at least one chart".into()));
        };
        let (n, r) = (first.dim(), first.rank());
        for c in &charts {
            if c.dim() != n || c.rank() != r {
                return Err(Error::Invalid("all charts must share dimension and rank".into()));
            }
        }
        for o in &overlaps {
            if o.from >= charts.len() || o.to >= charts.len() {
                return Err(Error::Invalid(format!("overlap {}→{} refers to a missing chart", o.from, o.to)));
            }
            if o.fiber.nrows() != r || o.fiber.ncols() != r {
                return Err(Error::DimensionMismatch {
                    expected: r * r,
                    found: o.fiber.len(),
                });
            }
            if o.region.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: o.region.dim(),
                });
            }
        }
        Ok(GluedAlgebroid { charts, overlaps })
    }

    pub fn single(chart: AlgebroidChart) -> Self {
        GluedAlgebroid {
            charts: vec![chart],
            overlaps: vec![],
        }
    }

    pub fn charts(&self) -> &[AlgebroidChart] {
        &self.charts
    }

    pub fn overlaps(&self) -> &[Overlap] {
        &self.overlaps
    }

    pub fn rank(&self) -> usize {
        self.charts[0].rank()
    }

    pub fn dim(&self) -> usize {
        self.charts[0].dim()
    }

    /// An overlap from `from` to `to` whose region contains `p`.
    pub fn find_overlap(&self, from: usize, to: usize, p: &[f64]) -> Option<&Overlap> {
        self.overlaps.iter().find(|o| o.from == from && o.to == to && o.region.contains(p))
    }

    /// Intertwining residuals on a fixed 17-point Halton set per overlap.
    pub fn overlap_reports(&self) -> Result<Vec<OverlapReport>> {
        let mut out = Vec::new();
        for (idx, o) in self.overlaps.iter().enumerate() {
            let ci = &self.charts[o.from];
            let cj = &self.charts[o.to];
            let (n, r) = (ci.dim(), ci.rank());
            let mu: Vec<Jet> = jet::consts(o.fiber.as_slice()); // column-major
            let mu = jet::transpose(&mu, r, r); // row-major
            let mut rep = OverlapReport {
                index: idx,
                anchor: 0.0,
                connection: 0.0,
                torsion: 0.0,
                inverse: 0.0,
            };
            for p in o.region.halton_points(sampling::OVERLAP_SAMPLES) {
                ci.base().check(&p)?;
                let x = jet::consts(&p);
                let y = (o.base_map)(&x);
                let q = jet::values(&y);
                cj.base().check(&q)?;
                let back = jet::values(&(o.inverse)(&y));
                rep.inverse = rep.inverse.max(max_diff(&back, &p));
                let dphi = jet::transpose(&flatten(&jet::gradient(|z| (o.base_map)(z), &x)), n, n);
                let yq = jet::consts(&q);
                // a_j(φ(m)) μ = Dφ a_i(m)
                let lhs = jet::mat_mul(&cj.anchor_jet(&yq), &mu, n, r, r);
                let rhs = jet::mat_mul(&dphi, &ci.anchor_jet(&x), n, n, r);
                rep.anchor = rep.anchor.max(max_diff(&jet::values(&lhs), &jet::values(&rhs)));
                // μ Γ^i_v = Γ^j_{Dφ v} μ
                for k in 0..n {
                    let mut v = vec![Jet::constant(0.0); n];
                    v[k] = Jet::constant(1.0);
                    let gi = ci.conn_matrix(&x, &v);
                    let dv = jet::mat_vec(&dphi, &v, n, n);
                    let gj = cj.conn_matrix(&yq, &jet::consts(&jet::values(&dv)));
                    let l = jet::mat_mul(&mu, &gi, r, r, r);
                    let rr = jet::mat_mul(&gj, &mu, r, r, r);
                    rep.connection = rep.connection.max(max_diff(&jet::values(&l), &jet::values(&rr)));
                }
                // μ T_i(x, y) = T_j(μx, μy)
                let ti = ci.torsion_jet(&x);
                let tj = cj.torsion_jet(&yq);
                for a in 0..r {
                    for b in (a + 1)..r {
                        let ea = unit(r, a);
                        let eb = unit(r, b);
                        let l = jet::mat_vec(&mu, &torsion_apply(&ti, &ea, &eb, r), r, r);
                        let mua = jet::mat_vec(&mu, &ea, r, r);
                        let mub = jet::mat_vec(&mu, &eb, r, r);
                        let rr = torsion_apply(&tj, &mua, &mub, r);
                        rep.torsion = rep.torsion.max(max_diff(&jet::values(&l), &jet::values(&rr)));
                    }
                }
            }
            out.push(rep);
        }
        Ok(out)
    }
}

fn unit(r: usize, a: usize) -> Vec<Jet> {
    let mut v = vec![Jet::constant(0.0); r];
    v[a] = Jet::constant(1.0);
    v
}

fn flatten(rows: &[Vec<Jet>]) -> Vec<Jet> {
    rows.iter().flat_map(|r| r.iter().cloned()).collect()
}

pub(crate) fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v) })
}

#[derive(Debug, Clone)]
pub struct CocycleReport {
    pub identity_residual: f64,
    pub composition_residual: f64,
    pub triples_checked: usize,
    pub tol: f64,
    pub pass: bool,
}

/// `g_ii = I` (an overlap followed by its reverse is the identity) and
/// `g_kj g_ji = g_ki` on every triple overlap, for fiber maps and base maps.
pub fn check_cocycle(overlaps: &[Overlap], tol: f64) -> CocycleReport {
    let mut ident = 0.0f64;
    let mut comp = 0.0f64;
    let mut triples = 0;
    for (a, o1) in overlaps.iter().enumerate() {
        let p = o1.region.center();
        if o1.from == o1.to {
            let r = o1.fiber.nrows();
            ident = ident.max((&o1.fiber - DMatrix::<f64>::identity(r, r)).amax());
        }
        let q = o1.map_point(&p);
        for (b, o2) in overlaps.iter().enumerate() {
            if a == b || o2.from != o1.to || !o2.region.contains(&q) {
                continue;
            }
            let z = o2.map_point(&q);
            if o2.to == o1.from {
                // round trip back to the starting chart
                let r = o1.fiber.nrows();
                ident = ident.max((&o2.fiber * &o1.fiber - DMatrix::<f64>::identity(r, r)).amax());
                ident = ident.max(max_diff(&z, &p));
                continue;
            }
            for o3 in overlaps
                .iter()
                .filter(|o3| o3.from == o1.from && o3.to == o2.to && o3.region.contains(&p))
            {
                let z3 = o3.map_point(&p);
                if max_diff(&z3, &z) > 1e-6 {
                    // a different sheet of the same chart pair
                    continue;
                }
                triples += 1;
                comp = comp.max((&o2.fiber * &o1.fiber - &o3.fiber).amax());
                comp = comp.max(max_diff(&z3, &z));
            }
        }
    }
    CocycleReport {
        identity_residual: ident,
        composition_residual: comp,
        triples_checked: triples,
        tol,
        pass: ident <= tol && comp <= tol,
    }
}

/// Glue restrictions of one action algebroid over chart boxes of the model
/// space along equivariant transitions.
pub fn infinitesimalize(model: &ActionAlgebroid, boxes: &[Chart], transitions: Vec<Overlap>, tol: f64) -> Result<GluedAlgebroid> {
    let rep = check_cocycle(&transitions, tol);
    if !rep.pass {
        return Err(Error::Inconsistent(format!(
            "cocycle violated (identity {:e}, composition {:e})",
            rep.identity_residual, rep.composition_residual
        )));
    }
    let charts = boxes
        .iter()
        .map(|b| model.restricted(b.clone()).map(|a| a.chart().clone()))
        .collect::<Result<Vec<_>>>()?;
    let glued = GluedAlgebroid::new(charts, transitions)?;
    for r in glued.overlap_reports()? {
        if !(r.max() <= tol) {
            return Err(Error::Inconsistent(format!(
                "overlap {} is not intertwined (residual {:e})",
                r.index,
                r.max()
            )));
        }
    }
    Ok(glued)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::so3_realization;

    fn translations(n: usize) -> ActionAlgebroid {
        let mut id = vec![0.0; n * n];
        for i in 0..n {
            id[i * n + i] = 1.0;
        }
        let f = SmoothField::constant(Chart::whole(n), Shape::Matrix { rows: n, cols: n }, id);
        make_action_algebroid(&LieAlgebra::abelian(n), &f).unwrap()
    }

    /// `ξ†(m) = ξ × m`: column `i` is `e_i × m`.
    fn rotations() -> ActionAlgebroid {
        let f = SmoothField::from_fn(Chart::whole(3), Shape::Matrix { rows: 3, cols: 3 }, |m| {
            let mut a = vec![Jet::constant(0.0); 9];
            for i in 0..3 {
                let mut e = [0.0; 3];
                e[i] = 1.0;
                let col = [
                    e[1] * &m[2] - e[2] * &m[1],
                    e[2] * &m[0] - e[0] * &m[2],
                    e[0] * &m[1] - e[1] * &m[0],
                ];
                for (row, v) in col.into_iter().enumerate() {
                    a[row * 3 + i] = v;
                }
            }
            a
        });
        make_action_algebroid(&LieAlgebra::so3(), &f).unwrap()
    }

    fn counterexample_line() -> ActionAlgebroid {
        let f = SmoothField::from_fn(Chart::whole(1), Shape::Matrix { rows: 1, cols: 1 }, |x| vec![(-&x[0]).exp()]);
        make_action_algebroid(&LieAlgebra::abelian(1), &f).unwrap()
    }

    fn samples(n: usize) -> Vec<Vec<f64>> {
        crate::sampling::random_points(&vec![-2.0; n], &vec![2.0; n], 20, 0.0, 42)
    }

    #[test]
    fn action_algebroid_examples() {
        let t = translations(3);
        let a = t.chart().anchor_at(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a, DMatrix::identity(3, 3));
        assert!(t.chart().torsion_at(&[0.0; 3]).unwrap().iter().all(|v| *v == 0.0));

        let r = rotations();
        let m = [0.3, -0.5, 1.1];
        let a = r.chart().anchor_at(&m).unwrap();
        // oracle: generator matrices applied to m
        let g = so3_realization();
        for i in 0..3 {
            let col = &g.generators()[i] * nalgebra::DVector::from_column_slice(&m);
            for k in 0..3 {
                assert!((a[(k, i)] - col[k]).abs() < 1e-15);
            }
        }
        let t = r.chart().torsion_at(&m).unwrap();
        assert_eq!(t[(0 * 3 + 1) * 3 + 2], 1.0);

        let c = counterexample_line();
        assert!((c.chart().anchor_at(&[0.4]).unwrap()[(0, 0)] - (-0.4f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn homomorphism_signs() {
        let s = samples(3);
        assert_eq!(
            check_action_homomorphism(&translations(3), &s, 1.0, 1e-12).unwrap().max_residual,
            0.0
        );
        let r = rotations();
        let minus = check_action_homomorphism(&r, &s, -1.0, 1e-8).unwrap();
        let plus = check_action_homomorphism(&r, &s, 1.0, 1e-8).unwrap();
        assert!(minus.pass, "{}", minus.max_residual);
        assert!(!plus.pass);
        assert!(check_anchor_homomorphism(r.chart(), &s, -1.0, 1e-8).unwrap().pass);

        // e₁† = x∂x, e₂† = ∂x with abelian g₀: [e₁†, e₂†] = −∂x ≠ 0
        let f = SmoothField::from_fn(Chart::whole(1), Shape::Matrix { rows: 1, cols: 2 }, |x| {
            vec![x[0].clone(), Jet::constant(1.0)]
        });
        let bad = make_action_algebroid(&LieAlgebra::abelian(2), &f).unwrap();
        let s1 = samples(1);
        assert!(!check_action_homomorphism(&bad, &s1, 1.0, 1e-8).unwrap().pass);
        assert!(!check_action_homomorphism(&bad, &s1, -1.0, 1e-8).unwrap().pass);
    }

    #[test]
    fn perturbed_torsion_breaks_anchor_homomorphism() {
        let r = rotations();
        let pert = r
            .chart()
            .with_torsion(field_fn(|x| {
                let mut t = jet::consts(LieAlgebra::so3().structure_constants());
                t[(0 * 3 + 1) * 3 + 2] += 0.3 * x[0].sin();
                t[(1 * 3 + 0) * 3 + 2] -= 0.3 * x[0].sin();
                t
            }))
            .unwrap();
        let s = samples(3);
        assert!(!check_anchor_homomorphism(&pert, &s, -1.0, 1e-8).unwrap().pass);
    }

    #[test]
    fn brackets_of_sections() {
        let r = rotations();
        let c = r.chart();
        let m = [0.4, 0.2, -0.7];
        let x = constant_section(vec![1.0, 2.0, 0.5]);
        let y = constant_section(vec![-0.3, 0.0, 1.0]);
        let b = section_bracket(c, &x, &y, &m).unwrap();
        let expect = LieAlgebra::so3().bracket(&[1.0, 2.0, 0.5], &[-0.3, 0.0, 1.0]).unwrap();
        assert!(max_diff(&b, &expect) < 1e-15);
        assert!(section_bracket(c, &x, &x, &m).unwrap().iter().all(|v| *v == 0.0));

        // Leibniz: [fY, Y] = −(#Y f) Y
        let t = translations(2);
        let f = field_fn(|x| vec![&x[0] * &x[0] + x[1].sin()]);
        let yv = vec![0.7, -1.1];
        let ys = constant_section(yv.clone());
        let fy = scaled_section(f.clone(), ys.clone());
        let p = [0.3, 0.9];
        let b = section_bracket(t.chart(), &fy, &ys, &p).unwrap();
        let yf = 2.0 * p[0] * yv[0] + p[1].cos() * yv[1];
        for k in 0..2 {
            assert!((b[k] + yf * yv[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn bracket_is_antisymmetric_and_satisfies_jacobi() {
        let t = counterexample_line();
        let c = t.chart();
        let s1 = field_fn(|x| vec![&x[0] * &x[0] + 1.0]);
        let s2 = field_fn(|x| vec![x[0].powi(3) - &x[0]]);
        let s3 = field_fn(|x| vec![2.0 * &x[0] + 0.5]);
        let br = |a: FieldFn, b: FieldFn| -> FieldFn {
            let c = c.clone();
            field_fn(move |x| c.bracket_jet(&a, &b, x))
        };
        for p in samples(1) {
            let ab = section_bracket(c, &s1, &s2, &p).unwrap();
            let ba = section_bracket(c, &s2, &s1, &p).unwrap();
            assert_eq!(ab[0], -ba[0]);
            let j = section_bracket(c, &br(s1.clone(), s2.clone()), &s3, &p).unwrap()[0]
                + section_bracket(c, &br(s2.clone(), s3.clone()), &s1, &p).unwrap()[0]
                + section_bracket(c, &br(s3.clone(), s1.clone()), &s2, &p).unwrap()[0];
            assert!(j.abs() < 1e-6, "{j}");
        }
    }

    fn circle_boxes() -> Vec<Chart> {
        use std::f64::consts::PI;
        vec![
            Chart::new(vec![-0.5], vec![PI + 0.5]).unwrap(),
            Chart::new(vec![PI - 0.5], vec![2.0 * PI + 0.5]).unwrap(),
        ]
    }

    fn circle_transitions(scale: f64) -> Vec<Overlap> {
        use std::f64::consts::PI;
        let e = (2.0 * PI).exp() * scale;
        let a = Chart::new(vec![PI - 0.5], vec![PI + 0.5]).unwrap();
        let b0 = Chart::new(vec![-0.5], vec![0.5]).unwrap();
        let b1 = Chart::new(vec![2.0 * PI - 0.5], vec![2.0 * PI + 0.5]).unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        let ab = Overlap::translation(0, 1, a.clone(), vec![0.0], one.clone());
        let ba = ab.reversed(a).unwrap();
        let b01 = Overlap::translation(0, 1, b0, vec![2.0 * PI], DMatrix::from_element(1, 1, e));
        let b10 = b01.reversed(b1).unwrap();
        vec![ab, ba, b01, b10]
    }

    #[test]
    fn circle_is_glued_consistently() {
        let g = infinitesimalize(&counterexample_line(), &circle_boxes(), circle_transitions(1.0), 1e-7).unwrap();
        for r in g.overlap_reports().unwrap() {
            assert!(r.max() <= 1e-7, "{r:?}");
        }
        // a wrong fiber scale breaks the anchor intertwining
        let bad = infinitesimalize(&counterexample_line(), &circle_boxes(), circle_transitions(1.01), 1e-7);
        assert!(bad.is_err());
    }

    #[test]
    fn cocycle_examples() {
        let id = DMatrix::<f64>::identity(2, 2);
        let region = Chart::cube(2, -1.0, 1.0).unwrap();
        let mk = |f: usize, t: usize, m: DMatrix<f64>| Overlap::translation(f, t, region.clone(), vec![0.0, 0.0], m);
        let good = vec![mk(0, 1, id.clone()), mk(1, 2, id.clone()), mk(0, 2, id.clone())];
        let rep = check_cocycle(&good, 1e-12);
        assert!(rep.pass && rep.triples_checked == 1);

        let mut p = id.clone();
        p[(0, 1)] = 0.25;
        let bad = vec![mk(0, 1, id.clone()), mk(1, 2, id.clone()), mk(0, 2, p)];
        let rep = check_cocycle(&bad, 1e-9);
        assert!(!rep.pass);
        assert!((rep.composition_residual - 0.25).abs() < 1e-15);
    }
}
