//! Parallel transport, parallel frames, monodromy, geodesics and the probes
//! built on them.

use std::fmt::{self, Write as _};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraMap, Subalgebra};
use crate::algebroid::{max_diff, AlgebroidChart, GluedAlgebroid};
use crate::cartan::{fiber_bracket_at, nabla_bar_tm_jet};
use crate::error::{Error, Result};
use crate::geometry::{field_fn, Chart, FieldFn, Metric, SmoothField};
use crate::jet::{self, Jet};
use crate::ode::{self, OdeOptions, Status};
use crate::report::TensorReport;
use crate::sampling;

/// Parametrized curve `s ↦ m(s)`, `s ∈ [0, 1]`, evaluated on jets so the
/// velocity comes for free.
pub type Curve = Arc<dyn Fn(&Jet) -> Vec<Jet> + Send + Sync>;

pub fn curve(f: impl Fn(&Jet) -> Vec<Jet> + Send + Sync + 'static) -> Curve {
    Arc::new(f)
}

pub fn segment(a: Vec<f64>, b: Vec<f64>) -> Curve {
    curve(move |s| a.iter().zip(&b).map(|(p, q)| s * (q - p) + *p).collect())
}

/// Circle arc in the `(i, j)` coordinate plane of an `n`-dimensional chart.
pub fn arc(n: usize, plane: (usize, usize), center: Vec<f64>, radius: f64, start: f64, sweep: f64) -> Curve {
    curve(move |s| {
        let th = s * sweep + start;
        let mut p = jet::consts(&center);
        p[plane.0] = &p[plane.0] + radius * th.cos();
        p[plane.1] = &p[plane.1] + radius * th.sin();
        debug_assert_eq!(p.len(), n);
        p
    })
}

fn point_velocity(c: &Curve, s: f64) -> (Vec<f64>, Vec<f64>) {
    let sj = Jet::variable(s, 0);
    let p = c(&sj);
    (p.iter().map(Jet::value).collect(), p.iter().map(|v| v.coef(1)).collect())
}

#[derive(Clone)]
pub struct Leg {
    pub chart: usize,
    pub curve: Curve,
}

impl fmt::Debug for Leg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, _) = point_velocity(&self.curve, 0.0);
        let (b, _) = point_velocity(&self.curve, 1.0);
        write!(f, "Leg(chart {}, {:?} → {:?})", self.chart, a, b)
    }
}

/// Piecewise-smooth path through the charts of an atlas. Consecutive legs in
/// different charts are joined through an overlap containing the junction.
#[derive(Debug, Clone)]
pub struct BasePath {
    legs: Vec<Leg>,
}

impl BasePath {
    pub fn new(legs: Vec<Leg>) -> Result<Self> {
        if legs.is_empty() {
            return Err(Error::Invalid("path needs at least one leg".into()));
        }
        Ok(BasePath { legs })
    }

    pub fn in_chart(chart: usize, c: Curve) -> Self {
        BasePath {
            legs: vec![Leg { chart, curve: c }],
        }
    }

    /// Straight segments through `points`, all in one chart.
    pub fn polyline(chart: usize, points: &[Vec<f64>]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Invalid("polyline needs two points".into()));
        }
        Ok(BasePath {
            legs: points
                .windows(2)
                .map(|w| Leg {
                    chart,
                    curve: segment(w[0].clone(), w[1].clone()),
                })
                .collect(),
        })
    }

    pub fn legs(&self) -> &[Leg] {
        &self.legs
    }

    pub fn then(mut self, other: BasePath) -> Self {
        self.legs.extend(other.legs);
        self
    }

    pub fn reversed(&self) -> Self {
        BasePath {
            legs: self
                .legs
                .iter()
                .rev()
                .map(|l| {
                    let c = l.curve.clone();
                    Leg {
                        chart: l.chart,
                        curve: curve(move |s| c(&(1.0 - s))),
                    }
                })
                .collect(),
        }
    }

    pub fn start(&self) -> (usize, Vec<f64>) {
        let l = &self.legs[0];
        (l.chart, point_velocity(&l.curve, 0.0).0)
    }

    pub fn end(&self) -> (usize, Vec<f64>) {
        let l = self.legs.last().expect("nonempty");
        (l.chart, point_velocity(&l.curve, 1.0).0)
    }
}

const JOIN_TOL: f64 = 1e-6;

fn transport_opts() -> OdeOptions {
    OdeOptions {
        atol: 1e-12,
        rtol: 1e-12,
        ..Default::default()
    }
}

/// Fiber map for the junction from `(from, p)` to `(to, q)`.
fn junction(g: &GluedAlgebroid, from: usize, p: &[f64], to: usize, q: &[f64]) -> Result<DMatrix<f64>> {
    let r = g.rank();
    if from == to {
        if max_diff(p, q) > JOIN_TOL {
            return Err(Error::PathExitsAtlas(format!("path is discontinuous at {p:?} in chart {from}")));
        }
        return Ok(DMatrix::identity(r, r));
    }
    for o in g.overlaps().iter().filter(|o| o.from == from && o.to == to && o.region.contains(p)) {
        if max_diff(&o.map_point(p), q) <= JOIN_TOL {
            return Ok(o.fiber.clone());
        }
    }
    Err(Error::PathExitsAtlas(format!(
        "no overlap from chart {from} at {p:?} to chart {to} at {q:?}"
    )))
}

fn leg_rhs(c: &AlgebroidChart, cv: &Curve, s: f64, y: &[f64], cols: usize) -> Result<Vec<f64>> {
    let r = c.rank();
    let (m, v) = point_velocity(cv, s);
    c.base().check(&m)?;
    let g = jet::values(&c.conn_matrix(&jet::consts(&m), &jet::consts(&v)));
    let mut out = vec![0.0; r * cols];
    for b in 0..r {
        for k in 0..cols {
            let mut acc = 0.0;
            for a in 0..r {
                acc += g[b * r + a] * y[a * cols + k];
            }
            out[b * cols + k] = -acc;
        }
    }
    Ok(out)
}

/// Transport an `r×cols` block (row-major) along the path; returns the block
/// in the trivialization of the final chart.
fn transport_block(g: &GluedAlgebroid, path: &BasePath, y0: Vec<f64>, cols: usize) -> Result<Vec<f64>> {
    let r = g.rank();
    let mut y = y0;
    let mut prev: Option<(usize, Vec<f64>)> = None;
    for leg in path.legs() {
        let c = g
            .charts()
            .get(leg.chart)
            .ok_or_else(|| Error::PathExitsAtlas(format!("chart {} does not exist", leg.chart)))?;
        let (start, _) = point_velocity(&leg.curve, 0.0);
        if let Some((pc, pp)) = &prev {
            let mu = junction(g, *pc, pp, leg.chart, &start)?;
            let ym = DMatrix::from_row_slice(r, cols, &y);
            let z = mu * ym;
            y = z.transpose().as_slice().to_vec();
        }
        let traj = ode::integrate(|s, st| leg_rhs(c, &leg.curve, s, st, cols), 0.0, &y, 1.0, &transport_opts());
        match traj.status {
            Status::Completed => {}
            Status::Escaped { t_star, reason } => {
                return Err(Error::PathExitsAtlas(format!(
                    "leg in chart {} fails near s = {t_star:.3}: {reason}",
                    leg.chart
                )))
            }
            s => return Err(Error::Ode(format!("transport stopped: {s:?}"))),
        }
        y = traj.last().to_vec();
        prev = Some((leg.chart, point_velocity(&leg.curve, 1.0).0));
    }
    Ok(y)
}

pub fn parallel_transport(g: &GluedAlgebroid, path: &BasePath, x0: &[f64]) -> Result<Vec<f64>> {
    if x0.len() != g.rank() {
        return Err(Error::DimensionMismatch {
            expected: g.rank(),
            found: x0.len(),
        });
    }
    transport_block(g, path, x0.to_vec(), 1)
}

/// Matrix of transport along the path, re-expressed in the starting chart
/// when the path ends in a different one.
pub fn transport_matrix(g: &GluedAlgebroid, path: &BasePath) -> Result<DMatrix<f64>> {
    let r = g.rank();
    let id = DMatrix::<f64>::identity(r, r);
    let y = transport_block(g, path, id.as_slice().to_vec(), r)?;
    Ok(DMatrix::from_row_slice(r, r, &y))
}

/// Transport around a closed loop, in the fiber basis at its base point.
pub fn monodromy(g: &GluedAlgebroid, lp: &BasePath) -> Result<AlgebraMap> {
    let (c0, m0) = lp.start();
    let (c1, m1) = lp.end();
    let mut t = transport_matrix(g, lp)?;
    let close = junction(g, c1, &m1, c0, &m0).map_err(|_| Error::Invalid("loop does not close".into()))?;
    t = close * t;
    let alg = fiber_bracket_at(&g.charts()[c0], &m0)?;
    AlgebraMap::new(alg.clone(), alg, t)
}

// ---------------------------------------------------------------------------
// parallel frames

/// `r` parallel sections over a box, equal to the standard basis at `m0`.
/// Values at `m` come from transporting along the coordinate L-path
/// `m0 → (m_1, m0_2, …) → … → m` with jet-valued RK4, so the sections can
/// be differentiated.
#[derive(Debug, Clone)]
pub struct ParallelFrame {
    chart: AlgebroidChart,
    m0: Vec<f64>,
    region: Chart,
    steps: usize,
    path_dependence: f64,
}

pub const FRAME_STEPS: usize = 128;

impl ParallelFrame {
    pub fn new(c: &AlgebroidChart, m0: &[f64], region: Chart, tol: f64) -> Result<Self> {
        Self::with_steps(c, m0, region, FRAME_STEPS, tol)
    }

    pub fn with_steps(c: &AlgebroidChart, m0: &[f64], region: Chart, steps: usize, tol: f64) -> Result<Self> {
        c.base().check(m0)?;
        if !region.contains(m0) {
            return Err(Error::OutsideChart { point: m0.to_vec() });
        }
        let mut f = ParallelFrame {
            chart: c.clone(),
            m0: m0.to_vec(),
            region,
            steps,
            path_dependence: 0.0,
        };
        let n = c.dim();
        let forward: Vec<usize> = (0..n).collect();
        let backward: Vec<usize> = (0..n).rev().collect();
        let mut worst = 0.0f64;
        for p in f.region.halton_points(5) {
            c.base().check(&p)?;
            let x = jet::consts(&p);
            let a = jet::values(&frame_jet(c, &f.m0, &x, &forward, steps));
            let b = jet::values(&frame_jet(c, &f.m0, &x, &backward, steps));
            worst = worst.max(max_diff(&a, &b));
        }
        if !(worst <= tol) {
            return Err(Error::FlatnessViolation { residual: worst });
        }
        f.path_dependence = worst;
        Ok(f)
    }

    pub fn path_dependence(&self) -> f64 {
        self.path_dependence
    }

    pub fn base_point(&self) -> &[f64] {
        &self.m0
    }

    pub fn region(&self) -> &Chart {
        &self.region
    }

    /// Frame matrix on jets, columns are the sections (row-major `r×r`).
    pub fn frame_jet(&self, x: &[Jet]) -> Vec<Jet> {
        let order: Vec<usize> = (0..self.chart.dim()).collect();
        frame_jet(&self.chart, &self.m0, x, &order, self.steps)
    }

    pub fn at(&self, m: &[f64]) -> Result<DMatrix<f64>> {
        if !self.region.contains(m) {
            return Err(Error::OutsideChart { point: m.to_vec() });
        }
        let r = self.chart.rank();
        Ok(DMatrix::from_row_slice(r, r, &jet::values(&self.frame_jet(&jet::consts(m)))))
    }

    pub fn section(&self, a: usize) -> FieldFn {
        let f = self.clone();
        let r = self.chart.rank();
        field_fn(move |x| {
            let m = f.frame_jet(x);
            (0..r).map(|b| m[b * r + a].clone()).collect()
        })
    }

    pub fn sections(&self) -> Vec<FieldFn> {
        (0..self.chart.rank()).map(|a| self.section(a)).collect()
    }
}

fn frame_jet(c: &AlgebroidChart, m0: &[f64], x: &[Jet], order: &[usize], steps: usize) -> Vec<Jet> {
    let r = c.rank();
    let mut y: Vec<Jet> = (0..r * r).map(|k| Jet::constant(if k / r == k % r { 1.0 } else { 0.0 })).collect();
    let mut cur = jet::consts(m0);
    let h = 1.0 / steps as f64;
    for &axis in order {
        let mut target = cur.clone();
        target[axis] = x[axis].clone();
        let vel: Vec<Jet> = target.iter().zip(&cur).map(|(a, b)| a - b).collect();
        if vel.iter().all(|v| v.coefs().iter().all(|c| *c == 0.0)) {
            continue;
        }
        let rhs = |s: f64, y: &[Jet]| -> Vec<Jet> {
            let m: Vec<Jet> = cur.iter().zip(&vel).map(|(a, v)| a + &v.scale(s)).collect();
            let g = c.conn_matrix(&m, &vel);
            jet::mat_mul(&g, y, r, r, r).into_iter().map(|v| -v).collect()
        };
        for k in 0..steps {
            let s = k as f64 * h;
            let k1 = rhs(s, &y);
            let y2: Vec<Jet> = y.iter().zip(&k1).map(|(a, b)| a + &b.scale(0.5 * h)).collect();
            let k2 = rhs(s + 0.5 * h, &y2);
            let y3: Vec<Jet> = y.iter().zip(&k2).map(|(a, b)| a + &b.scale(0.5 * h)).collect();
            let k3 = rhs(s + 0.5 * h, &y3);
            let y4: Vec<Jet> = y.iter().zip(&k3).map(|(a, b)| a + &b.scale(h)).collect();
            let k4 = rhs(s + h, &y4);
            for i in 0..y.len() {
                let inc = &k1[i] + &k2[i].scale(2.0) + k3[i].scale(2.0) + &k4[i];
                y[i] = &y[i] + &inc.scale(h / 6.0);
            }
        }
        cur = target;
    }
    y
}

// ---------------------------------------------------------------------------
// geodesics

/// A `g`-path: base points, fiber vectors and the chart each sample lives in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPath {
    pub t: Vec<f64>,
    pub m: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub chart: Vec<usize>,
}

impl GPath {
    /// Tabular trace with columns `t, chart, m_0.., X_0..`.
    pub fn to_csv(&self) -> String {
        let n = self.m.first().map_or(0, Vec::len);
        let r = self.x.first().map_or(0, Vec::len);
        let mut s = String::from("t,chart");
        for i in 0..n {
            let _ = write!(s, ",m{i}");
        }
        for a in 0..r {
            let _ = write!(s, ",x{a}");
        }
        s.push('\n');
        for k in 0..self.t.len() {
            let _ = write!(s, "{:.17e},{}", self.t[k], self.chart[k]);
            for v in self.m[k].iter().chain(&self.x[k]) {
                let _ = write!(s, ",{v:.17e}");
            }
            s.push('\n');
        }
        s
    }

    /// Max of `|#X_t − ṁ_t|` with `ṁ_t` recovered from the stored state by
    /// the geodesic vector field; zero up to rounding for integrator output.
    pub fn anchor_residual(&self, g: &GluedAlgebroid) -> Result<f64> {
        let mut worst = 0.0f64;
        for k in 0..self.t.len() {
            let c = &g.charts()[self.chart[k]];
            let a = c.anchor_at(&self.m[k])?;
            let v = &a * DVector::from_column_slice(&self.x[k]);
            let (mdot, _) = geodesic_rhs(c, &self.m[k], &self.x[k])?;
            worst = worst.max(max_diff(v.as_slice(), &mdot));
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicResult {
    pub path: GPath,
    pub status: Status,
}

fn geodesic_rhs(c: &AlgebroidChart, m: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    c.base().check(m)?;
    let mj = jet::consts(m);
    let xj = jet::consts(x);
    let mdot = c.apply_anchor(&mj, &xj);
    let g = c.conn_matrix(&mj, &mdot);
    let xdot = jet::mat_vec(&g, &xj, c.rank(), c.rank());
    let mdot = jet::values(&mdot);
    let xdot: Vec<f64> = xdot.iter().map(|v| -v.value()).collect();
    if mdot.iter().chain(&xdot).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("geodesic field at {m:?}")));
    }
    Ok((mdot, xdot))
}

/// Switch to the overlap whose image lies deepest inside its target chart.
fn hop(g: &GluedAlgebroid, chart: usize, m: &[f64], x: &[f64]) -> Option<(usize, Vec<f64>, Vec<f64>)> {
    let mut best: Option<(f64, usize, Vec<f64>, Vec<f64>)> = None;
    for o in g.overlaps().iter().filter(|o| o.from == chart && o.region.contains(m)) {
        let q = o.map_point(m);
        let tc = g.charts()[o.to].base();
        if !tc.contains(&q) {
            continue;
        }
        let depth = q
            .iter()
            .zip(tc.lower().iter().zip(tc.upper()))
            .map(|(v, (lo, hi))| (v - lo).min(hi - v))
            .fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|b| depth > b.0) {
            let y = &o.fiber * DVector::from_column_slice(x);
            best = Some((depth, o.to, q, y.as_slice().to_vec()));
        }
    }
    best.map(|(_, c, q, y)| (c, q, y))
}

/// Integrate `ṁ = #X`, `∇_ṁ X = 0` from `t = 0` to `t1` (either sign),
/// hopping between charts at overlaps.
pub fn geodesic(g: &GluedAlgebroid, chart: usize, m0: &[f64], x0: &[f64], t1: f64, opts: &OdeOptions) -> Result<GeodesicResult> {
    let c0 = g
        .charts()
        .get(chart)
        .ok_or_else(|| Error::Invalid(format!("chart {chart} does not exist")))?;
    c0.base().check(m0)?;
    if x0.len() != g.rank() {
        return Err(Error::DimensionMismatch {
            expected: g.rank(),
            found: x0.len(),
        });
    }
    let n = g.dim();
    let mut opts = *opts;
    if opts.max_step.is_none() {
        opts.max_step = Some(t1.abs() / 64.0);
    }
    let mut path = GPath {
        t: vec![0.0],
        m: vec![m0.to_vec()],
        x: vec![x0.to_vec()],
        chart: vec![chart],
    };
    let mut cur = chart;
    let mut t = 0.0;
    let mut state: Vec<f64> = m0.iter().chain(x0).copied().collect();
    let mut hops = 0usize;
    loop {
        let c = &g.charts()[cur];
        let traj = ode::integrate(
            |_, y| {
                let (a, b) = geodesic_rhs(c, &y[..n], &y[n..])?;
                Ok(a.into_iter().chain(b).collect())
            },
            t,
            &state,
            t1,
            &opts,
        );
        for (tk, yk) in traj.t.iter().zip(&traj.y).skip(1) {
            path.t.push(*tk);
            path.m.push(yk[..n].to_vec());
            path.x.push(yk[n..].to_vec());
            path.chart.push(cur);
        }
        t = traj.t_last();
        state = traj.last().to_vec();
        let status = traj.status.clone();
        if let Status::Escaped { .. } = status {
            if hops < 100_000 {
                if let Some((next, q, y)) = hop(g, cur, &state[..n], &state[n..]) {
                    hops += 1;
                    cur = next;
                    state = q.into_iter().chain(y).collect();
                    path.t.push(t);
                    path.m.push(state[..n].to_vec());
                    path.x.push(state[n..].to_vec());
                    path.chart.push(cur);
                    continue;
                }
            }
        }
        return Ok(GeodesicResult { path, status });
    }
}

// ---------------------------------------------------------------------------
// probes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum CompletenessVerdict {
    /// Blow-up or step collapse at `t_star`: the geodesic is not complete.
    CertifiedIncomplete { t_star: f64 },
    /// Nothing went wrong within `±horizon`; completeness is not claimed.
    NoBlowupWithinHorizon,
    /// The geodesic left every chart at `t_star`; nothing can be concluded.
    LeftAtlas { t_star: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub chart: usize,
    pub m: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: Seed,
    pub forward: CompletenessVerdict,
    pub backward: CompletenessVerdict,
}

impl SeedReport {
    pub fn certified_incomplete(&self) -> bool {
        matches!(self.forward, CompletenessVerdict::CertifiedIncomplete { .. })
            || matches!(self.backward, CompletenessVerdict::CertifiedIncomplete { .. })
    }
}

fn verdict(s: &Status) -> CompletenessVerdict {
    match s {
        Status::Completed => CompletenessVerdict::NoBlowupWithinHorizon,
        Status::BlowUp { t_star } | Status::StepCollapse { t_star } => CompletenessVerdict::CertifiedIncomplete { t_star: *t_star },
        Status::Escaped { t_star, .. } => CompletenessVerdict::LeftAtlas { t_star: *t_star },
    }
}

pub fn completeness_probe(g: &GluedAlgebroid, seeds: &[Seed], horizon: f64, blowup: f64) -> Result<Vec<SeedReport>> {
    let opts = OdeOptions {
        blowup,
        max_step: Some(horizon / 64.0),
        ..Default::default()
    };
    seeds
        .iter()
        .map(|s| {
            let f = geodesic(g, s.chart, &s.m, &s.x, horizon, &opts)?;
            let b = geodesic(g, s.chart, &s.m, &s.x, -horizon, &opts)?;
            Ok(SeedReport {
                seed: s.clone(),
                forward: verdict(&f.status),
                backward: verdict(&b.status),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Isotropy {
    pub subalgebra: Subalgebra,
    pub singular_values: Vec<f64>,
    /// Smallest retained over largest discarded singular value.
    pub gap: f64,
    pub ill_conditioned: bool,
}

pub const RANK_GAP: f64 = 1e3;

/// Kernel of `ξ ↦ #ξ(m₀)` as a subalgebra of the fiber algebra at `m₀`.
pub fn isotropy_subalgebra(c: &AlgebroidChart, m0: &[f64]) -> Result<Isotropy> {
    let a = c.anchor_at(m0)?;
    let parent = fiber_bracket_at(c, m0)?;
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, l)| (l.max(0.0).sqrt(), eig.eigenvectors.column(k).into_owned()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let smax = pairs.first().map_or(0.0, |p| p.0);
    let cutoff = 1e-8 * smax.max(1.0);
    let kept: Vec<f64> = pairs.iter().filter(|p| p.0 > cutoff).map(|p| p.0).collect();
    let dropped: Vec<&(f64, DVector<f64>)> = pairs.iter().filter(|p| p.0 <= cutoff).collect();
    let gap = match (kept.last(), dropped.first()) {
        (Some(k), Some(d)) if d.0 > 0.0 => k / d.0,
        _ => f64::INFINITY,
    };
    let basis: Vec<Vec<f64>> = dropped.iter().map(|p| p.1.as_slice().to_vec()).collect();
    let subalgebra = if basis.is_empty() {
        Subalgebra::zero(parent)
    } else {
        Subalgebra::new(parent, basis, 1e-6)?
    };
    Ok(Isotropy {
        subalgebra,
        singular_values: pairs.iter().map(|p| p.0).collect(),
        gap,
        ill_conditioned: gap < RANK_GAP,
    })
}

/// `(∇̄_X σ)(V, W) = #X·σ(V,W) − σ(∇̄_X V, W) − σ(V, ∇̄_X W)` for constant
/// frame sections `X = e_a` and coordinate fields `V, W`.
pub fn invariant_metric_check(c: &AlgebroidChart, sigma: &Metric, samples: &[Vec<f64>], tol: f64) -> Result<TensorReport> {
    let (n, r) = (c.dim(), c.rank());
    let mut per = Vec::with_capacity(samples.len());
    for p in samples {
        c.base().check(p)?;
        sigma.at(p)?;
        let x = jet::consts(p);
        let s = jet::values(&sigma.eval_jet(&x));
        let mut worst = 0.0f64;
        for a in 0..r {
            let mut e = vec![0.0; r];
            e[a] = 1.0;
            let ea = crate::algebroid::constant_section(e);
            let ax = c.apply_anchor(&x, &ea(&x));
            let ds = jet::values(&jet::directional(|y| sigma.eval_jet(y), &x, &ax));
            let nb: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let mut v = vec![0.0; n];
                    v[i] = 1.0;
                    jet::values(&nabla_bar_tm_jet(c, &ea, &crate::algebroid::constant_section(v), &x))
                })
                .collect();
            for i in 0..n {
                for j in 0..n {
                    let mut val = ds[i * n + j];
                    for k in 0..n {
                        val -= nb[i][k] * s[k * n + j] + s[i * n + k] * nb[j][k];
                    }
                    worst = worst.max(val.abs());
                }
            }
        }
        per.push(worst);
    }
    Ok(TensorReport::from_samples("invariant_metric", samples.to_vec(), per, tol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum CompactnessVerdict {
    ConsistentWithCompactClosure,
    /// `witness` lists generator indices; `k + count` stands for the inverse
    /// of generator `k`.
    Unbounded {
        witness: Vec<usize>,
        modulus: f64,
    },
}

pub const WORD_LENGTH: usize = 3;

/// Heuristic test of whether the group generated by `maps` has compact
/// closure: every word up to length 3 must have eigenvalue moduli within
/// 1e-9 of 1 and bounded powers.
pub fn monodromy_compactness_probe(maps: &[DMatrix<f64>]) -> CompactnessVerdict {
    let k = maps.len();
    let mut letters: Vec<DMatrix<f64>> = maps.to_vec();
    for m in maps {
        letters.push(
            m.clone()
                .try_inverse()
                .unwrap_or_else(|| DMatrix::from_element(m.nrows(), m.ncols(), f64::INFINITY)),
        );
    }
    let mut frontier: Vec<(Vec<usize>, DMatrix<f64>)> = vec![];
    for len in 1..=WORD_LENGTH {
        let mut next = Vec::new();
        if len == 1 {
            for (i, l) in letters.iter().enumerate() {
                next.push((vec![i], l.clone()));
            }
        } else {
            for (w, m) in &frontier {
                for (i, l) in letters.iter().enumerate() {
                    // skip immediate cancellation
                    let last = *w.last().expect("nonempty word");
                    if (last + k) % (2 * k) == i {
                        continue;
                    }
                    let mut w2 = w.clone();
                    w2.push(i);
                    next.push((w2, m * l));
                }
            }
        }
        for (w, m) in &next {
            let modulus = m.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(1.0f64, |acc, v| {
                if (v - 1.0).abs() > (acc - 1.0).abs() || v.is_nan() {
                    v
                } else {
                    acc
                }
            });
            let p8 = m.pow(8);
            let p64 = p8.pow(8);
            let bounded = p64.norm() <= 2.0 * p8.norm().max(1.0);
            if !((modulus - 1.0).abs() <= 1e-9) || !bounded {
                return CompactnessVerdict::Unbounded {
                    witness: w.clone(),
                    modulus,
                };
            }
        }
        frontier = next;
    }
    CompactnessVerdict::ConsistentWithCompactClosure
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeBound {
    /// `r / sup_{B_2r} |V|`; infinite when `V` vanishes there.
    pub t: f64,
    pub sup: f64,
    pub grid_per_axis: usize,
    /// Integral curves from the corners and centre of `B_r` stay in `B_2r`
    /// for `|t| ≤ T`.
    pub verified: bool,
}

pub const ESCAPE_GRID: usize = 33;

/// Lower bound on the existence time of integral curves of `V` started in
/// the coordinate box of radius `r` about `m`. Coordinate boxes stand in
/// for metric balls; the Euclidean norm measures `V`.
pub fn escape_bound(v: &SmoothField, m: &[f64], r: f64) -> Result<EscapeBound> {
    let n = m.len();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: v.len(),
        });
    }
    if !(r > 0.0) {
        return Err(Error::Invalid("radius must be positive".into()));
    }
    let lo: Vec<f64> = m.iter().map(|c| c - 2.0 * r).collect();
    let hi: Vec<f64> = m.iter().map(|c| c + 2.0 * r).collect();
    let mut sup = 0.0f64;
    for p in sampling::grid_points(&lo, &hi, ESCAPE_GRID) {
        let val = jet::values(&v.eval_jet(&jet::consts(&p)));
        let norm = val.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("vector field at {p:?}")));
        }
        sup = sup.max(norm);
    }
    if sup == 0.0 {
        return Ok(EscapeBound {
            t: f64::INFINITY,
            sup,
            grid_per_axis: ESCAPE_GRID,
            verified: true,
        });
    }
    let t = r / sup;
    let inner_lo: Vec<f64> = m.iter().map(|c| c - r).collect();
    let inner_hi: Vec<f64> = m.iter().map(|c| c + r).collect();
    let mut starts = sampling::grid_points(&inner_lo, &inner_hi, 2);
    starts.push(m.to_vec());
    let ball = Chart::new(lo.iter().map(|x| x - 1e-9).collect(), hi.iter().map(|x| x + 1e-9).collect())?;
    let mut verified = true;
    for s in starts {
        for dir in [1.0, -1.0] {
            let traj = ode::integrate(
                |_, y| {
                    if !ball.contains(y) {
                        return Err(Error::OutsideChart { point: y.to_vec() });
                    }
                    Ok(jet::values(&v.eval_jet(&jet::consts(y))))
                },
                0.0,
                &s,
                dir * t,
                &OdeOptions::default(),
            );
            if !traj.status.is_completed() || !ball.contains(traj.last()) {
                verified = false;
            }
        }
    }
    Ok(EscapeBound {
        t,
        sup,
        grid_per_axis: ESCAPE_GRID,
        verified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::LieAlgebra;
    use crate::algebroid::{make_action_algebroid, ActionAlgebroid, Overlap};
    use crate::geometry::Shape;
    use std::f64::consts::PI;

    fn translations(n: usize) -> ActionAlgebroid {
        let mut id = vec![0.0; n * n];
        for i in 0..n {
            id[i * n + i] = 1.0;
        }
        let f = SmoothField::constant(Chart::whole(n), Shape::Matrix { rows: n, cols: n }, id);
        make_action_algebroid(&LieAlgebra::abelian(n), &f).unwrap()
    }

    fn rotations() -> ActionAlgebroid {
        let f = SmoothField::from_fn(Chart::whole(3), Shape::Matrix { rows: 3, cols: 3 }, |m| {
            vec![
                Jet::constant(0.0),
                m[2].clone(),
                -&m[1],
                -&m[2],
                Jet::constant(0.0),
                m[0].clone(),
                m[1].clone(),
                -&m[0],
                Jet::constant(0.0),
            ]
        });
        make_action_algebroid(&LieAlgebra::so3(), &f).unwrap()
    }

    fn line() -> ActionAlgebroid {
        let f = SmoothField::from_fn(Chart::whole(1), Shape::Matrix { rows: 1, cols: 1 }, |x| vec![(-&x[0]).exp()]);
        make_action_algebroid(&LieAlgebra::abelian(1), &f).unwrap()
    }

    fn circle() -> GluedAlgebroid {
        let e = (2.0 * PI).exp();
        let boxes = [
            Chart::new(vec![-0.5], vec![PI + 0.5]).unwrap(),
            Chart::new(vec![PI - 0.5], vec![2.0 * PI + 0.5]).unwrap(),
        ];
        let a = Chart::new(vec![PI - 0.5], vec![PI + 0.5]).unwrap();
        let b0 = Chart::new(vec![-0.5], vec![0.5]).unwrap();
        let b1 = Chart::new(vec![2.0 * PI - 0.5], vec![2.0 * PI + 0.5]).unwrap();
        let ab = Overlap::translation(0, 1, a.clone(), vec![0.0], DMatrix::from_element(1, 1, 1.0));
        let ba = ab.reversed(a).unwrap();
        let b01 = Overlap::translation(0, 1, b0, vec![2.0 * PI], DMatrix::from_element(1, 1, e));
        let b10 = b01.reversed(b1).unwrap();
        crate::algebroid::infinitesimalize(&line(), &boxes, vec![ab, ba, b01, b10], 1e-7).unwrap()
    }

    /// θ decreasing once around the circle, starting and ending at θ = 1.
    fn circle_loop() -> BasePath {
        BasePath::polyline(0, &[vec![1.0], vec![0.0]])
            .unwrap()
            .then(BasePath::polyline(1, &[vec![2.0 * PI], vec![PI]]).unwrap())
            .then(BasePath::polyline(0, &[vec![PI], vec![1.0]]).unwrap())
    }

    #[test]
    fn flat_transport_is_trivial() {
        let g = GluedAlgebroid::single(rotations().chart().clone());
        let p = BasePath::in_chart(0, arc(3, (0, 1), vec![0.0, 0.0, 0.5], 1.0, 0.0, 2.0 * PI));
        let x = parallel_transport(&g, &p, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(x, vec![0.3, -1.0, 2.0]);
    }

    #[test]
    fn circle_monodromy() {
        let g = circle();
        let mono = monodromy(&g, &circle_loop()).unwrap();
        let e = (2.0 * PI).exp();
        assert!((mono.matrix[(0, 0)] - e).abs() < 1e-9 * e);
        let back = monodromy(&g, &circle_loop().reversed()).unwrap();
        assert!((back.matrix[(0, 0)] * e - 1.0).abs() < 1e-12);
        let twice = monodromy(&g, &circle_loop().then(circle_loop())).unwrap();
        assert!((twice.matrix[(0, 0)] - e * e).abs() < 1e-9 * e * e);
        // non-closing path
        assert!(monodromy(&g, &BasePath::polyline(0, &[vec![1.0], vec![0.0]]).unwrap()).is_err());
    }

    #[test]
    fn transport_with_curvature_is_linear_and_path_dependent() {
        let t = translations(2);
        let c = t
            .chart()
            .with_connection(field_fn(|x| {
                let mut g = vec![Jet::constant(0.0); 8];
                g[(1 * 2 + 0) * 2 + 1] = x[0].clone();
                g[(0 * 2 + 1) * 2 + 0] = x[1].sin();
                g
            }))
            .unwrap();
        let g = GluedAlgebroid::single(c);
        let p = BasePath::in_chart(0, arc(2, (0, 1), vec![0.2, 0.1], 0.7, 0.3, 1.9));
        let a = parallel_transport(&g, &p, &[1.0, 0.0]).unwrap();
        let b = parallel_transport(&g, &p, &[0.0, 1.0]).unwrap();
        let ab = parallel_transport(&g, &p, &[2.0, -3.0]).unwrap();
        for k in 0..2 {
            assert!((ab[k] - (2.0 * a[k] - 3.0 * b[k])).abs() < 1e-9);
        }
        let sq = BasePath::polyline(0, &[vec![0.0, 0.0], vec![0.5, 0.0], vec![0.5, 0.5], vec![0.0, 0.5], vec![0.0, 0.0]]).unwrap();
        let t = transport_matrix(&g, &sq).unwrap();
        assert!((t - DMatrix::identity(2, 2)).amax() > 1e-3);
        assert!(ParallelFrame::new(g.charts().first().unwrap(), &[0.0, 0.0], Chart::cube(2, -1.0, 1.0).unwrap(), 1e-6).is_err());
    }

    #[test]
    fn frames_of_action_algebroids_are_constant() {
        let r = rotations();
        let f = ParallelFrame::new(r.chart(), &[0.1, 0.0, 0.2], Chart::cube(3, -1.0, 1.0).unwrap(), 1e-9).unwrap();
        assert_eq!(f.at(&[0.5, -0.3, 0.7]).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn geodesic_examples() {
        let t = GluedAlgebroid::single(translations(2).chart().clone());
        let res = geodesic(&t, 0, &[1.0, 2.0], &[0.5, -1.0], 2.0, &OdeOptions::default()).unwrap();
        assert!(res.status.is_completed());
        let (m, x) = (res.path.m.last().unwrap(), res.path.x.last().unwrap());
        assert!(max_diff(m, &[2.0, 0.0]) < 1e-12 && x == &vec![0.5, -1.0]);

        let r = GluedAlgebroid::single(rotations().chart().clone());
        let res = geodesic(&r, 0, &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], 2.0 * PI, &OdeOptions::tight()).unwrap();
        for (tk, mk) in res.path.t.iter().zip(&res.path.m) {
            assert!(max_diff(mk, &[tk.cos(), tk.sin(), 0.0]) < 1e-8);
        }
        assert!(max_diff(res.path.m.last().unwrap(), &[1.0, 0.0, 0.0]) < 1e-8);
        assert!(res.path.anchor_residual(&r).unwrap() < 1e-12);
        let drift = res.path.x.iter().map(|x| max_diff(x, &[0.0, 0.0, 1.0])).fold(0.0, f64::max);
        assert!(drift <= 1e-8);

        let l = GluedAlgebroid::single(line().chart().clone());
        let res = geodesic(&l, 0, &[0.0], &[1.0], -3.0, &OdeOptions::default()).unwrap();
        let ts = res.status.t_star().unwrap();
        assert!((ts + 1.0).abs() <= 1e-3, "{ts}");
        assert!(matches!(res.status, Status::BlowUp { .. }));
        let a = geodesic(&l, 0, &[0.0], &[1.0], 1.0, &OdeOptions::default()).unwrap();
        let b = geodesic(&l, 0, &[0.0], &[1.0], 1.0, &OdeOptions::default()).unwrap();
        assert!(max_diff(a.path.m.last().unwrap(), b.path.m.last().unwrap()) <= 1e-8);
        assert!((a.path.m.last().unwrap()[0] - 2f64.ln()).abs() < 1e-8);
        let csv = a.path.to_csv();
        assert!(csv.starts_with("t,chart,m0,x0\n"));
    }

    #[test]
    fn circle_geodesics_wind_and_blow_up() {
        let g = circle();
        let res = geodesic(&g, 0, &[0.0], &[1.0], -3.0, &OdeOptions::default()).unwrap();
        let ts = res.status.t_star().unwrap();
        assert!((ts + 1.0).abs() <= 1e-3, "{:?}", res.status);
        assert!(res.path.chart.contains(&1));
        let reps = completeness_probe(
            &g,
            &[Seed {
                chart: 0,
                m: vec![0.0],
                x: vec![1.0],
            }],
            10.0,
            1e6,
        )
        .unwrap();
        assert_eq!(reps[0].forward, CompletenessVerdict::NoBlowupWithinHorizon);
        assert!(matches!(reps[0].backward, CompletenessVerdict::CertifiedIncomplete { t_star } if (t_star + 1.0).abs() <= 1e-3));
    }

    #[test]
    fn translations_are_complete_within_horizon() {
        let g = GluedAlgebroid::single(translations(2).chart().clone());
        let seeds: Vec<Seed> = sampling::random_vectors(2, 4, 42)
            .into_iter()
            .map(|x| Seed {
                chart: 0,
                m: vec![0.0, 0.0],
                x,
            })
            .collect();
        for r in completeness_probe(&g, &seeds, 100.0, 1e6).unwrap() {
            assert_eq!(r.forward, CompletenessVerdict::NoBlowupWithinHorizon);
            assert_eq!(r.backward, CompletenessVerdict::NoBlowupWithinHorizon);
        }
    }

    #[test]
    fn isotropy_examples() {
        let t = isotropy_subalgebra(translations(3).chart(), &[0.4, 0.1, 0.0]).unwrap();
        assert_eq!(t.subalgebra.dim(), 0);
        let r = isotropy_subalgebra(rotations().chart(), &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.subalgebra.dim(), 1);
        let b = &r.subalgebra.orthonormal_basis()[0];
        assert!((b[2].abs() - 1.0).abs() < 1e-12);
        assert!(!r.ill_conditioned);
        // singular values 1, 2e-8 | 1e-10 straddle the cutoff with a gap of 200
        let f = SmoothField::constant(
            Chart::whole(3),
            Shape::Matrix { rows: 3, cols: 3 },
            vec![1.0, 0.0, 0.0, 0.0, 2e-8, 0.0, 0.0, 0.0, 1e-10],
        );
        let a = make_action_algebroid(&LieAlgebra::abelian(3), &f).unwrap();
        let near = isotropy_subalgebra(a.chart(), &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(near.subalgebra.dim(), 1);
        assert!(near.ill_conditioned && (near.gap - 200.0).abs() < 1e-3);
    }

    #[test]
    fn invariant_metrics() {
        let e2 = Metric::euclidean(2).unwrap();
        let s = Chart::cube(2, -1.0, 1.0).unwrap().halton_points(10);
        assert_eq!(
            invariant_metric_check(translations(2).chart(), &e2, &s, 1e-12)
                .unwrap()
                .max_residual,
            0.0
        );
        let e3 = Metric::euclidean(3).unwrap();
        let s3 = Chart::cube(3, -1.0, 1.0).unwrap().halton_points(10);
        assert!(invariant_metric_check(rotations().chart(), &e3, &s3, 1e-12).unwrap().pass);
        let e1 = Metric::euclidean(1).unwrap();
        let s1 = Chart::cube(1, -1.0, 1.0).unwrap().halton_points(10);
        assert!(!invariant_metric_check(line().chart(), &e1, &s1, 1e-6).unwrap().pass);
    }

    #[test]
    fn compactness_probe_examples() {
        assert_eq!(
            monodromy_compactness_probe(&[DMatrix::identity(3, 3)]),
            CompactnessVerdict::ConsistentWithCompactClosure
        );
        match monodromy_compactness_probe(&[DMatrix::from_element(1, 1, (2.0 * PI).exp())]) {
            CompactnessVerdict::Unbounded { witness, .. } => assert_eq!(witness.len(), 1),
            v => panic!("{v:?}"),
        }
        let th = 2f64.sqrt();
        let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        assert_eq!(
            monodromy_compactness_probe(&[rot]),
            CompactnessVerdict::ConsistentWithCompactClosure
        );
        let shear = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(
            monodromy_compactness_probe(&[shear]),
            CompactnessVerdict::Unbounded { .. }
        ));
    }

    #[test]
    fn escape_bounds() {
        let c = SmoothField::constant(Chart::whole(2), Shape::Tangent, vec![3.0, 4.0]);
        let b = escape_bound(&c, &[0.0, 0.0], 1.0).unwrap();
        assert!((b.t - 0.2).abs() < 1e-15 && b.verified);

        let v = SmoothField::from_fn(Chart::whole(1), Shape::Tangent, |x| vec![(-&x[0]).exp()]);
        let b = escape_bound(&v, &[0.0], 0.5).unwrap();
        assert!((b.t - 0.5 / 1f64.exp()).abs() < 1e-15 && b.verified);

        let w = SmoothField::from_fn(Chart::whole(1), Shape::Tangent, |x| vec![&x[0] * &x[0] * 0.25 + 1.0]);
        let b = escape_bound(&w, &[0.0], 1.0).unwrap();
        assert!((b.t - 0.5).abs() < 1e-15 && b.verified);
        // actual exit time from [-2, 2] starting at x = 1 is 2(atan 1 − atan ½) ≥ 0.5
        let exit = 2.0 * (1f64.atan() - 0.5f64.atan());
        assert!(exit >= b.t);

        let z = SmoothField::constant(Chart::whole(1), Shape::Tangent, vec![0.0]);
        assert!(escape_bound(&z, &[0.0], 1.0).unwrap().t.is_infinite());
    }
}
