//! Charts, differentiable fields, metrics, and connections on the tangent
//! bundle.
//!
//! Every field is a closure over [`Jet`]s, so derivatives of any order are
//! exact. Christoffel symbols follow `∇_{∂_i} ∂_j = Γ^k_{ij} ∂_k`, stored at
//! index `(k·n + i)·n + j`; curvature follows
//! `R(U,V)W = ∇_U∇_V W − ∇_V∇_U W − ∇_{[U,V]} W`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{self, Jet};
use crate::sampling;

pub type FieldFn = Arc<dyn Fn(&[Jet]) -> Vec<Jet> + Send + Sync>;

pub fn field_fn(f: impl Fn(&[Jet]) -> Vec<Jet> + Send + Sync + 'static) -> FieldFn {
    Arc::new(f)
}

/// Points closer than this to a face are rejected.
pub const INTERIOR_MARGIN: f64 = 1e-9;

/// Open coordinate box. Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Finite sub-box used for random sampling.
    sample_lower: Vec<f64>,
    sample_upper: Vec<f64>,
}

impl Chart {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::Invalid("chart must have positive dimension".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::Invalid(format!("chart bounds ({lo}, {hi}) are empty")));
            }
        }
        let (sample_lower, sample_upper) = lower
            .iter()
            .zip(&upper)
            .map(|(&lo, &hi)| match (lo.is_finite(), hi.is_finite()) {
                (true, true) => (lo, hi),
                (true, false) => (lo, lo + 10.0),
                (false, true) => (hi - 10.0, hi),
                (false, false) => (-5.0, 5.0),
            })
            .unzip();
        Ok(Chart {
            lower,
            upper,
            sample_lower,
            sample_upper,
        })
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Chart::new(vec![lo; n], vec![hi; n])
    }

    pub fn whole(n: usize) -> Self {
        Chart::cube(n, f64::NEG_INFINITY, f64::INFINITY).expect("nonempty")
    }

    /// Restrict random sampling to a sub-box.
    pub fn with_sample_region(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let sub = Chart::new(lower, upper)?;
        if sub.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: sub.dim(),
            });
        }
        for d in 0..self.dim() {
            if sub.lower[d] < self.lower[d] || sub.upper[d] > self.upper[d] {
                return Err(Error::Invalid("sample region must lie inside the chart".into()));
            }
        }
        self.sample_lower = sub.lower;
        self.sample_upper = sub.upper;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn sample_region(&self) -> (&[f64], &[f64]) {
        (&self.sample_lower, &self.sample_upper)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| x.is_finite() && *x > lo + INTERIOR_MARGIN && *x < hi - INTERIOR_MARGIN)
    }

    pub fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: p.len(),
            });
        }
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutsideChart { point: p.to_vec() })
        }
    }

    pub fn random_points(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        sampling::random_points(&self.sample_lower, &self.sample_upper, count, 0.02, seed)
    }

    pub fn halton_points(&self, count: usize) -> Vec<Vec<f64>> {
        sampling::halton_points(&self.sample_lower, &self.sample_upper, count, 0.02)
    }

    pub fn center(&self) -> Vec<f64> {
        self.sample_lower
            .iter()
            .zip(&self.sample_upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }
}

/// What a field's values mean; fixes the length of the value vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Scalar,
    Tangent,
    Fiber(usize),
    /// Row-major `rows × cols` matrix.
    Matrix {
        rows: usize,
        cols: usize,
    },
}

impl Shape {
    pub fn len(&self, base_dim: usize) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Tangent => base_dim,
            Shape::Fiber(r) => r,
            Shape::Matrix { rows, cols } => rows * cols,
        }
    }
}

#[derive(Clone)]
pub struct SmoothField {
    chart: Chart,
    shape: Shape,
    f: FieldFn,
}

impl fmt::Debug for SmoothField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothField")
            .field("chart", &self.chart)
            .field("shape", &self.shape)
            .finish_non_exhaustive()
    }
}

impl SmoothField {
    pub fn new(chart: Chart, shape: Shape, f: FieldFn) -> Self {
        SmoothField { chart, shape, f }
    }

    pub fn from_fn(chart: Chart, shape: Shape, f: impl Fn(&[Jet]) -> Vec<Jet> + Send + Sync + 'static) -> Self {
        SmoothField::new(chart, shape, Arc::new(f))
    }

    pub fn constant(chart: Chart, shape: Shape, values: Vec<f64>) -> Self {
        SmoothField::from_fn(chart, shape, move |_| jet::consts(&values))
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn func(&self) -> &FieldFn {
        &self.f
    }

    pub fn len(&self) -> usize {
        self.shape.len(self.chart.dim())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eval_jet(&self, x: &[Jet]) -> Vec<Jet> {
        (self.f)(x)
    }

    /// Checked evaluation at an interior point.
    pub fn eval(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.chart.check(p)?;
        let v = jet::values(&(self.f)(&jet::consts(p)));
        if v.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("field value at {p:?}")));
        }
        Ok(v)
    }
}

/// `[V, W] = DW·V − DV·W`, evaluated on jets.
pub fn vf_bracket(v: &FieldFn, w: &FieldFn, x: &[Jet]) -> Vec<Jet> {
    let vx = v(x);
    let wx = w(x);
    let dw = jet::directional(|y| w(y), x, &vx);
    let dv = jet::directional(|y| v(y), x, &wx);
    dw.iter().zip(&dv).map(|(a, b)| a - b).collect()
}

pub fn lie_bracket_vf(v: &SmoothField, w: &SmoothField, m: &[f64]) -> Result<Vec<f64>> {
    v.chart().check(m)?;
    w.chart().check(m)?;
    let out = jet::values(&vf_bracket(v.func(), w.func(), &jet::consts(m)));
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("bracket at {m:?}")));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// metrics

#[derive(Clone, Debug)]
pub struct Metric {
    name: String,
    field: SmoothField,
}

impl Metric {
    pub fn new(name: impl Into<String>, field: SmoothField) -> Result<Self> {
        let n = field.chart().dim();
        if field.shape() != (Shape::Matrix { rows: n, cols: n }) {
            return Err(Error::Invalid("metric must be an n×n matrix field".into()));
        }
        Ok(Metric { name: name.into(), field })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn chart(&self) -> &Chart {
        self.field.chart()
    }

    pub fn dim(&self) -> usize {
        self.chart().dim()
    }

    pub fn field(&self) -> &SmoothField {
        &self.field
    }

    pub fn eval_jet(&self, x: &[Jet]) -> Vec<Jet> {
        self.field.eval_jet(x)
    }

    /// The metric matrix at `p`, validated symmetric positive-definite.
    pub fn at(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let v = self.field.eval(p)?;
        let g = DMatrix::from_row_slice(n, n, &v);
        let scale = g.amax().max(1.0);
        if (&g - g.transpose()).amax() > 1e-12 * scale || g.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite { point: p.to_vec() });
        }
        Ok(g)
    }

    pub fn euclidean(n: usize) -> Result<Self> {
        check_catalog_dim(n)?;
        let chart = Chart::whole(n).with_sample_region(vec![-2.0; n], vec![2.0; n])?;
        let mut id = vec![0.0; n * n];
        for i in 0..n {
            id[i * n + i] = 1.0;
        }
        Metric::new(
            format!("euclidean({n})"),
            SmoothField::constant(chart, Shape::Matrix { rows: n, cols: n }, id),
        )
    }

    /// Round unit sphere in stereographic coordinates, `4|dx|²/(1+|x|²)²`.
    pub fn sphere(n: usize) -> Result<Self> {
        check_catalog_dim(n)?;
        let chart = Chart::cube(n, -50.0, 50.0)?.with_sample_region(vec![-1.5; n], vec![1.5; n])?;
        Metric::new(
            format!("sphere({n})"),
            SmoothField::from_fn(chart, Shape::Matrix { rows: n, cols: n }, move |x| {
                let r2: Jet = x.iter().map(|v| v * v).sum();
                let c = 4.0 * (1.0 + r2).powi(-2);
                conformal(n, &c)
            }),
        )
    }

    /// Upper half-space model, `|dx|²/x_n²`.
    pub fn hyperbolic(n: usize) -> Result<Self> {
        check_catalog_dim(n)?;
        let mut lo = vec![-1e3; n];
        let mut hi = vec![1e3; n];
        lo[n - 1] = 0.0;
        let mut slo = vec![-1.5; n];
        let mut shi = vec![1.5; n];
        slo[n - 1] = 0.5;
        shi[n - 1] = 2.0;
        hi[n - 1] = 1e6;
        let chart = Chart::new(lo, hi)?.with_sample_region(slo, shi)?;
        Metric::new(
            format!("hyperbolic({n})"),
            SmoothField::from_fn(chart, Shape::Matrix { rows: n, cols: n }, move |x| {
                let c = x[n - 1].powi(-2);
                conformal(n, &c)
            }),
        )
    }

    /// `dθ² + sin²θ dφ²` on `0 < θ < π`.
    pub fn sphere_polar() -> Result<Self> {
        let chart = Chart::new(vec![0.0, -10.0], vec![std::f64::consts::PI, 10.0])?.with_sample_region(vec![0.3, -3.0], vec![2.8, 3.0])?;
        Ok(Metric::induced("sphere_polar", chart, 3, polar_embedding(1.0, 1.0, 1.0)))
    }

    /// Ellipsoid with semi-axes `(a, b, c)` in polar coordinates.
    pub fn ellipsoid(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && c > 0.0 && a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::Invalid("ellipsoid axes must be positive".into()));
        }
        let chart = Chart::new(vec![0.0, -10.0], vec![std::f64::consts::PI, 10.0])?.with_sample_region(vec![0.3, -3.0], vec![2.8, 3.0])?;
        Ok(Metric::induced(
            format!("ellipsoid({a},{b},{c})"),
            chart,
            3,
            polar_embedding(a, b, c),
        ))
    }

    /// Pull back the Euclidean metric of `ℝ^ambient` along an embedding.
    pub fn induced(name: impl Into<String>, chart: Chart, ambient: usize, embed: FieldFn) -> Self {
        let n = chart.dim();
        let field = SmoothField::from_fn(chart, Shape::Matrix { rows: n, cols: n }, move |x| {
            let cols = jet::gradient(|y| embed(y), x);
            let mut g = vec![Jet::constant(0.0); n * n];
            for i in 0..n {
                for j in i..n {
                    let v: Jet = (0..ambient).map(|a| &cols[i][a] * &cols[j][a]).sum();
                    g[i * n + j] = v.clone();
                    g[j * n + i] = v;
                }
            }
            g
        });
        Metric { name: name.into(), field }
    }

    /// `k · σ`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Invalid("metric scale must be positive".into()));
        }
        let f = self.field.func().clone();
        Metric::new(
            format!("{}*{k}", self.name),
            SmoothField::from_fn(self.chart().clone(), self.field.shape(), move |x| {
                f(x).into_iter().map(|v| v * k).collect()
            }),
        )
    }

    /// Parse a catalog name: `euclidean(n)`, `sphere(n)`, `hyperbolic(n)`,
    /// `sphere_polar`, or `ellipsoid(a,b,c)`.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let s = spec.trim();
        let (head, args) = match s.find('(') {
            Some(i) => {
                if !s.ends_with(')') {
                    return Err(spec_error(s, s.len(), "missing `)`"));
                }
                (&s[..i], Some(&s[i + 1..s.len() - 1]))
            }
            None => (s, None),
        };
        let nums = |args: Option<&str>| -> Result<Vec<f64>> {
            let Some(a) = args else { return Ok(vec![]) };
            a.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| spec_error(s, head.len() + 1, "expected a number"))
                })
                .collect()
        };
        let dim = |v: Vec<f64>| -> Result<usize> {
            match v.as_slice() {
                [d] if d.fract() == 0.0 && *d >= 1.0 && *d <= 8.0 => Ok(*d as usize),
                _ => Err(spec_error(s, head.len() + 1, "expected one dimension in 1..=8")),
            }
        };
        match head.trim() {
            "euclidean" => Metric::euclidean(dim(nums(args)?)?),
            "sphere" => Metric::sphere(dim(nums(args)?)?),
            "hyperbolic" => Metric::hyperbolic(dim(nums(args)?)?),
            "sphere_polar" if args.is_none() => Metric::sphere_polar(),
            "ellipsoid" => match nums(args)?.as_slice() {
                [a, b, c] => Metric::ellipsoid(*a, *b, *c),
                _ => Err(spec_error(s, head.len() + 1, "ellipsoid takes three axes")),
            },
            _ => Err(Error::UnknownCatalog(s.to_string())),
        }
    }
}

fn spec_error(_s: &str, column: usize, message: &str) -> Error {
    Error::Parse {
        line: 1,
        column: column + 1,
        message: message.to_string(),
    }
}

fn check_catalog_dim(n: usize) -> Result<()> {
    if (1..=8).contains(&n) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("catalog metrics support dimensions 1..=8, got {n}")))
    }
}

fn conformal(n: usize, c: &Jet) -> Vec<Jet> {
    let mut g = vec![Jet::constant(0.0); n * n];
    for i in 0..n {
        g[i * n + i] = c.clone();
    }
    g
}

fn polar_embedding(a: f64, b: f64, c: f64) -> FieldFn {
    field_fn(move |x| {
        let (st, ct) = (x[0].sin(), x[0].cos());
        vec![a * &st * x[1].cos(), b * &st * x[1].sin(), c * ct]
    })
}

/// Inverse of stereographic projection from the north pole, `ℝⁿ → Sⁿ ⊂ ℝⁿ⁺¹`.
pub fn inverse_stereographic(x: &[Jet]) -> Vec<Jet> {
    let r2: Jet = x.iter().map(|v| v * v).sum();
    let d = (1.0 + &r2).recip();
    let mut out: Vec<Jet> = x.iter().map(|v| 2.0 * v * &d).collect();
    out.push((r2 - 1.0) * d);
    out
}

/// Stereographic projection from the north pole, `Sⁿ \ {N} → ℝⁿ`.
pub fn stereographic(p: &[Jet]) -> Vec<Jet> {
    let n = p.len() - 1;
    let d = (1.0 - &p[n]).recip();
    p[..n].iter().map(|v| v * &d).collect()
}

// ---------------------------------------------------------------------------
// connections on TM

#[derive(Clone)]
pub struct TMConnection {
    chart: Chart,
    gamma: FieldFn,
}

impl fmt::Debug for TMConnection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TMConnection").field("chart", &self.chart).finish_non_exhaustive()
    }
}

impl TMConnection {
    pub fn new(chart: Chart, gamma: FieldFn) -> Self {
        TMConnection { chart, gamma }
    }

    pub fn flat(chart: Chart) -> Self {
        let n = chart.dim();
        TMConnection::new(chart, field_fn(move |_| vec![Jet::constant(0.0); n * n * n]))
    }

    /// The connection for which the columns of `frame` are parallel:
    /// `Γ_i = −(∂_i F) F⁻¹`.
    pub fn from_frame(chart: Chart, frame: FieldFn) -> Self {
        let n = chart.dim();
        let gamma = field_fn(move |x| {
            let f = frame(x);
            let Some(finv) = jet::mat_inverse(&f, n) else {
                return vec![Jet::constant(f64::NAN); n * n * n];
            };
            let mut out = vec![Jet::constant(0.0); n * n * n];
            for i in 0..n {
                let df = jet::partial(|y| frame(y), x, i);
                let m = jet::mat_mul(&df, &finv, n, n, n);
                for k in 0..n {
                    for j in 0..n {
                        out[(k * n + i) * n + j] = -&m[k * n + j];
                    }
                }
            }
            out
        });
        TMConnection::new(chart, gamma)
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn gamma(&self) -> &FieldFn {
        &self.gamma
    }

    pub fn christoffel_jet(&self, x: &[Jet]) -> Vec<Jet> {
        (self.gamma)(x)
    }

    pub fn christoffel(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.chart.check(p)?;
        let v = jet::values(&(self.gamma)(&jet::consts(p)));
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("Christoffel symbols at {p:?}")));
        }
        Ok(v)
    }

    /// `Γ̄^k_{ij} = Γ^k_{ji}`.
    pub fn dual(&self) -> TMConnection {
        let n = self.dim();
        let g = self.gamma.clone();
        TMConnection::new(
            self.chart.clone(),
            field_fn(move |x| {
                let v = g(x);
                let mut out = v.clone();
                for k in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            out[(k * n + i) * n + j] = v[(k * n + j) * n + i].clone();
                        }
                    }
                }
                out
            }),
        )
    }

    /// `∇_U W` for a vector `u` at `x` and a vector field `w`.
    pub fn covariant(&self, u: &[Jet], w: &FieldFn, x: &[Jet]) -> Vec<Jet> {
        let n = self.dim();
        let g = (self.gamma)(x);
        let wx = w(x);
        let mut out = jet::directional(|y| w(y), x, u);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    out[k] += &g[(k * n + i) * n + j] * &u[i] * &wx[j];
                }
            }
        }
        out
    }

    /// `T(∂_i, ∂_j)^k = Γ^k_{ij} − Γ^k_{ji}`, stored like Γ.
    pub fn torsion_jet(&self, x: &[Jet]) -> Vec<Jet> {
        let n = self.dim();
        let g = (self.gamma)(x);
        let mut out = vec![Jet::constant(0.0); n * n * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    out[(k * n + i) * n + j] = &g[(k * n + i) * n + j] - &g[(k * n + j) * n + i];
                }
            }
        }
        out
    }

    /// Curvature components: index `((k·n + l)·n + i)·n + j` holds the `k`
    /// component of `R(∂_i, ∂_j) ∂_l`.
    pub fn riemann_jet(&self, x: &[Jet]) -> Vec<Jet> {
        let n = self.dim();
        let g = (self.gamma)(x);
        let dg: Vec<Vec<Jet>> = (0..n).map(|i| jet::partial(|y| (self.gamma)(y), x, i)).collect();
        let idx = |k: usize, i: usize, j: usize| (k * n + i) * n + j;
        let mut r = vec![Jet::constant(0.0); n * n * n * n];
        for k in 0..n {
            for l in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let mut v = &dg[i][idx(k, j, l)] - &dg[j][idx(k, i, l)];
                        for m in 0..n {
                            v += &g[idx(k, i, m)] * &g[idx(m, j, l)];
                            v -= &g[idx(k, j, m)] * &g[idx(m, i, l)];
                        }
                        r[((k * n + l) * n + i) * n + j] = v;
                    }
                }
            }
        }
        r
    }

    pub fn riemann(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.chart.check(p)?;
        let v = jet::values(&self.riemann_jet(&jet::consts(p)));
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("curvature at {p:?}")));
        }
        Ok(v)
    }
}

/// Levi-Civita connection of a metric, by the Koszul formula.
pub fn levi_civita(metric: &Metric) -> TMConnection {
    let n = metric.dim();
    let g = metric.field().func().clone();
    let gamma = field_fn(move |x| {
        let gx = g(x);
        let Some(ginv) = jet::mat_inverse(&gx, n) else {
            return vec![Jet::constant(f64::NAN); n * n * n];
        };
        let dg: Vec<Vec<Jet>> = (0..n).map(|l| jet::partial(|y| g(y), x, l)).collect();
        let mut out = vec![Jet::constant(0.0); n * n * n];
        for i in 0..n {
            for j in i..n {
                // lowered symbols Γ_{l,ij}
                let low: Vec<Jet> = (0..n)
                    .map(|l| 0.5 * (&dg[i][j * n + l] + &dg[j][i * n + l] - &dg[l][i * n + j]))
                    .collect();
                for k in 0..n {
                    let v: Jet = (0..n).map(|l| &ginv[k * n + l] * &low[l]).sum();
                    out[(k * n + i) * n + j] = v.clone();
                    out[(k * n + j) * n + i] = v;
                }
            }
        }
        out
    });
    TMConnection::new(metric.chart().clone(), gamma)
}

/// Largest entry of `∇σ` (metric compatibility) at `p`.
pub fn metric_compatibility_residual(c: &TMConnection, metric: &Metric, p: &[f64]) -> Result<f64> {
    let n = c.dim();
    c.chart().check(p)?;
    let x = jet::consts(p);
    let g = jet::values(&metric.eval_jet(&x));
    let gam = jet::values(&c.christoffel_jet(&x));
    let mut worst = 0.0f64;
    for k in 0..n {
        let dg = jet::values(&jet::partial(|y| metric.eval_jet(y), &x, k));
        for i in 0..n {
            for j in 0..n {
                let mut v = dg[i * n + j];
                for l in 0..n {
                    v -= gam[(l * n + k) * n + i] * g[l * n + j] + gam[(l * n + k) * n + j] * g[i * n + l];
                }
                worst = worst.max(v.abs());
            }
        }
    }
    Ok(worst)
}

/// `R(U, V) W` at `m`.
pub fn curvature_tm(c: &TMConnection, m: &[f64], u: &[f64], v: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let n = c.dim();
    for a in [u, v, w] {
        if a.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: a.len(),
            });
        }
    }
    let r = c.riemann(m)?;
    let mut out = vec![0.0; n];
    for (k, o) in out.iter_mut().enumerate() {
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    *o += r[((k * n + l) * n + i) * n + j] * u[i] * v[j] * w[l];
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarFit {
    pub s: f64,
    pub residual: f64,
}

/// Least-squares fit of the curvature at `m` to
/// `R(U,V)W = s(σ(V,W)U − σ(U,W)V)`.
pub fn scalar_form_fit(c: &TMConnection, metric: &Metric, m: &[f64]) -> Result<ScalarFit> {
    let n = c.dim();
    let r = c.riemann(m)?;
    let g = metric.at(m)?;
    let model = |k: usize, l: usize, i: usize, j: usize| {
        let dki = if k == i { 1.0 } else { 0.0 };
        let dkj = if k == j { 1.0 } else { 0.0 };
        g[(j, l)] * dki - g[(i, l)] * dkj
    };
    let (mut rm, mut mm) = (0.0, 0.0);
    for k in 0..n {
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mv = model(k, l, i, j);
                    rm += r[((k * n + l) * n + i) * n + j] * mv;
                    mm += mv * mv;
                }
            }
        }
    }
    let s = if mm > 0.0 { rm / mm } else { 0.0 };
    let mut res = 0.0;
    for k in 0..n {
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let d = r[((k * n + l) * n + i) * n + j] - s * model(k, l, i, j);
                    res += d * d;
                }
            }
        }
    }
    Ok(ScalarFit { s, residual: res.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn plane() -> Chart {
        Chart::whole(2)
    }

    #[test]
    fn chart_interior() {
        let c = Chart::cube(2, 0.0, 1.0).unwrap();
        assert!(c.contains(&[0.5, 0.5]));
        assert!(!c.contains(&[0.0, 0.5]));
        assert!(!c.contains(&[1.0 - 1e-10, 0.5]));
        assert!(matches!(c.check(&[2.0, 0.5]), Err(Error::OutsideChart { .. })));
        assert!(Chart::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn bracket_examples() {
        let dx = SmoothField::constant(plane(), Shape::Tangent, vec![1.0, 0.0]);
        let dy = SmoothField::constant(plane(), Shape::Tangent, vec![0.0, 1.0]);
        assert_eq!(lie_bracket_vf(&dx, &dy, &[0.3, 0.1]).unwrap(), vec![0.0, 0.0]);
        // V = x∂y, W = y∂x: [V,W] = x∂x − y∂y, at (1,1) → (1, −1)
        let v = SmoothField::from_fn(plane(), Shape::Tangent, |x| vec![Jet::constant(0.0), x[0].clone()]);
        let w = SmoothField::from_fn(plane(), Shape::Tangent, |x| vec![x[1].clone(), Jet::constant(0.0)]);
        let b = lie_bracket_vf(&v, &w, &[1.0, 1.0]).unwrap();
        assert_eq!(b, vec![1.0, -1.0]);
        assert_eq!(lie_bracket_vf(&v, &v, &[0.4, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn christoffel_closed_forms() {
        let e = levi_civita(&Metric::euclidean(2).unwrap());
        assert!(e.christoffel(&[0.3, -1.0]).unwrap().iter().all(|v| *v == 0.0));

        let s = levi_civita(&Metric::sphere_polar().unwrap());
        let g = s.christoffel(&[PI / 4.0, 0.2]).unwrap();
        // Γ^θ_{φφ} = −sinθ cosθ ; Γ^φ_{θφ} = cotθ
        assert!((g[(0 * 2 + 1) * 2 + 1] + 0.5).abs() < 1e-12);
        assert!((g[(1 * 2 + 0) * 2 + 1] - 1.0).abs() < 1e-12);

        let h = levi_civita(&Metric::hyperbolic(2).unwrap());
        let y = 0.7;
        let g = h.christoffel(&[0.2, y]).unwrap();
        assert!((g[(0 * 2 + 0) * 2 + 1] + 1.0 / y).abs() < 1e-12);
        assert!((g[(1 * 2 + 0) * 2 + 0] - 1.0 / y).abs() < 1e-12);
        assert!((g[(1 * 2 + 1) * 2 + 1] + 1.0 / y).abs() < 1e-12);
    }

    #[test]
    fn levi_civita_is_symmetric_and_compatible() {
        for metric in [
            Metric::sphere(2).unwrap(),
            Metric::hyperbolic(3).unwrap(),
            Metric::ellipsoid(1.0, 1.0, 1.3).unwrap(),
        ] {
            let c = levi_civita(&metric);
            let n = c.dim();
            for p in metric.chart().random_points(100, 3) {
                let g = c.christoffel(&p).unwrap();
                for k in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            assert_eq!(g[(k * n + i) * n + j], g[(k * n + j) * n + i]);
                        }
                    }
                }
                assert!(metric_compatibility_residual(&c, &metric, &p).unwrap() <= 1e-8);
            }
        }
    }

    /// Curvature from covariant derivatives of coordinate fields, with the
    /// inner derivative taken by central differences.
    fn curvature_oracle(c: &TMConnection, m: &[f64], i: usize, j: usize, l: usize) -> Vec<f64> {
        let n = c.dim();
        let h = 1e-5;
        let nabla_coord = |p: &[f64], a: usize, b: usize| -> Vec<f64> {
            let g = c.christoffel(p).unwrap();
            (0..n).map(|k| g[(k * n + a) * n + b]).collect()
        };
        // ∇_i ∇_j ∂_l = ∂_i(Γ_j l) + Γ_i (Γ_j l)
        let second = |a: usize, b: usize| -> Vec<f64> {
            let mut pp = m.to_vec();
            let mut pm = m.to_vec();
            pp[a] += h;
            pm[a] -= h;
            let fp = nabla_coord(&pp, b, l);
            let fm = nabla_coord(&pm, b, l);
            let inner = nabla_coord(m, b, l);
            let g = c.christoffel(m).unwrap();
            (0..n)
                .map(|k| {
                    let mut v = (fp[k] - fm[k]) / (2.0 * h);
                    for q in 0..n {
                        v += g[(k * n + a) * n + q] * inner[q];
                    }
                    v
                })
                .collect()
        };
        let a = second(i, j);
        let b = second(j, i);
        a.iter().zip(&b).map(|(x, y)| x - y).collect()
    }

    #[test]
    fn curvature_matches_brute_force() {
        let metric = Metric::sphere(2).unwrap();
        let c = levi_civita(&metric);
        let m = [0.3, -0.4];
        for (i, j, l) in [(0, 1, 1), (1, 0, 0), (0, 1, 0)] {
            let mut u = vec![0.0; 2];
            let mut v = vec![0.0; 2];
            let mut w = vec![0.0; 2];
            u[i] = 1.0;
            v[j] = 1.0;
            w[l] = 1.0;
            let r = curvature_tm(&c, &m, &u, &v, &w).unwrap();
            let o = curvature_oracle(&c, &m, i, j, l);
            for k in 0..2 {
                assert!((r[k] - o[k]).abs() < 1e-6, "{r:?} vs {o:?}");
            }
        }
    }

    #[test]
    fn sphere_curvature_has_positive_sign() {
        // orthonormal U, V with W = V: R(U,V)V = s(|V|² U − σ(U,V) V) = s U
        let metric = Metric::sphere_polar().unwrap();
        let c = levi_civita(&metric);
        let th = 1.1f64;
        let u = [1.0, 0.0];
        let v = [0.0, 1.0 / th.sin()];
        let r = curvature_tm(&c, &[th, 0.5], &u, &v, &v).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-10 && r[1].abs() < 1e-10, "{r:?}");
        assert_eq!(curvature_tm(&c, &[th, 0.5], &u, &u, &v).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_fits() {
        let e = Metric::euclidean(3).unwrap();
        let f = scalar_form_fit(&levi_civita(&e), &e, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!((f.s, f.residual), (0.0, 0.0));
        for (metric, sign) in [
            (Metric::sphere(2).unwrap(), 1.0),
            (Metric::sphere(3).unwrap(), 1.0),
            (Metric::hyperbolic(2).unwrap(), -1.0),
            (Metric::sphere_polar().unwrap(), 1.0),
        ] {
            let c = levi_civita(&metric);
            let fits: Vec<ScalarFit> = metric
                .chart()
                .random_points(20, 11)
                .iter()
                .map(|p| scalar_form_fit(&c, &metric, p).unwrap())
                .collect();
            for f in &fits {
                assert!((f.s - sign).abs() <= 1e-6, "{} {f:?}", metric.name());
                assert!(f.residual <= 1e-6);
            }
        }
        let ell = Metric::ellipsoid(1.0, 1.0, 1.3).unwrap();
        let c = levi_civita(&ell);
        let a = scalar_form_fit(&c, &ell, &[0.5, 0.0]).unwrap();
        let b = scalar_form_fit(&c, &ell, &[1.5, 0.0]).unwrap();
        assert!((a.s - b.s).abs() > 1e-2);
    }

    #[test]
    fn scaled_sphere_scales_curvature() {
        let m = Metric::sphere(2).unwrap().scaled(4.0).unwrap();
        let f = scalar_form_fit(&levi_civita(&m), &m, &[0.2, 0.1]).unwrap();
        assert!((f.s - 0.25).abs() < 1e-9 && f.residual < 1e-9);
    }

    #[test]
    fn metric_specs() {
        assert_eq!(Metric::from_spec("sphere(2)").unwrap().dim(), 2);
        assert_eq!(Metric::from_spec(" hyperbolic(3) ").unwrap().dim(), 3);
        assert!(matches!(Metric::from_spec("torus(2)"), Err(Error::UnknownCatalog(_))));
        assert!(matches!(Metric::from_spec("sphere(2"), Err(Error::Parse { .. })));
        assert!(Metric::from_spec("euclidean(0)").is_err());
        assert!(Metric::from_spec("ellipsoid(1,1,1.3)").is_ok());
    }

    #[test]
    fn non_spd_metric_is_rejected() {
        let f = SmoothField::constant(plane(), Shape::Matrix { rows: 2, cols: 2 }, vec![1.0, 0.0, 0.0, -1.0]);
        let m = Metric::new("bad", f).unwrap();
        assert!(matches!(m.at(&[0.0, 0.0]), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn stereographic_round_trip() {
        let x = jet::consts(&[0.3, -1.2]);
        let p = inverse_stereographic(&x);
        let n2: f64 = jet::values(&p).iter().map(|v| v * v).sum();
        assert!((n2 - 1.0).abs() < 1e-15);
        let back = jet::values(&stereographic(&p));
        assert!((back[0] - 0.3).abs() < 1e-15 && (back[1] + 1.2).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn derivatives_of_polynomials_are_exact(a in -2.0f64..2.0, b in -2.0f64..2.0, u in -1.0f64..1.0, v in -1.0f64..1.0) {
            // f = x²y + 3y³, Df·(u,v) = 2xy u + (x² + 9y²) v
            let f = |x: &[Jet]| vec![&x[0] * &x[0] * &x[1] + 3.0 * x[1].powi(3)];
            let d = jet::directional(f, &jet::consts(&[a, b]), &jet::consts(&[u, v]));
            let expect = 2.0 * a * b * u + (a * a + 9.0 * b * b) * v;
            prop_assert!((d[0].value() - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }

        #[test]
        fn curvature_is_tensorial(x in -1.0f64..1.0, y in -1.0f64..1.0, k in 0.1f64..3.0) {
            let metric = Metric::sphere(2).unwrap();
            let c = levi_civita(&metric);
            let u = [0.3, 0.7];
            let v = [-0.2, 0.5];
            let w = [1.0, -0.4];
            let r = curvature_tm(&c, &[x, y], &u, &v, &w).unwrap();
            let ws = [k * w[0], k * w[1]];
            let rs = curvature_tm(&c, &[x, y], &u, &v, &ws).unwrap();
            for i in 0..2 {
                prop_assert!((rs[i] - k * r[i]).abs() <= 1e-9);
            }
        }
    }
}
