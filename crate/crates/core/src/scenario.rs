//! Declarative scenarios. A scenario is a TOML document naming a model
//! (a catalog entry or inline definitions) and an ordered list of checks;
//! running it produces a [`Report`] that exports as JSON or as text.
//!
//! Randomness is confined to sample points. Check `k` (0-based) draws its
//! samples with seed `seed + k`, where `seed` is the scenario seed (default
//! 42) unless overridden at run time, so reports are byte-for-byte
//! reproducible.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::algebra::{LieAlgebra, MatrixRealization, Subalgebra, DEFAULT_TOL};
use crate::algebroid::{
    check_action_homomorphism, check_cocycle, infinitesimalize, make_action_algebroid, ActionAlgebroid, AlgebroidChart, GluedAlgebroid,
    Overlap,
};
use crate::cartan::{fiber_bracket_at, is_cartan, is_flat};
use crate::catalog::{self, CatalogModel};
use crate::development::{
    check_equivariant_twist, develop_jacobian, develop_straight, equivariance_diagram_check, geometric_closure_probe, induced_affine_map,
    path_independence_check, reconstruct_atlas, AtlasSpec, Closure, ClosureVerdict, Coset, EquivariantMap, HomogeneousModel, InducedMap,
    MIN_JACOBIAN,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{field_fn, scalar_form_fit, Chart, Metric, Shape, SmoothField};
use crate::jet::Jet;
use crate::models::{
    bracket_formula_check, build_riemannian_cartan, check_dual_pair, classify_constant_curvature, curvature_formula_check,
    local_lie_group_check, obstruction_form, DualPair, RiemannianCartanChart,
};
use crate::report::TensorReport;
use crate::transport::{
    completeness_probe, invariant_metric_check, isotropy_subalgebra, monodromy, monodromy_compactness_probe, BasePath, CompactnessVerdict,
    Seed,
};

pub const SCHEMA: u32 = 1;
pub const DEFAULT_SEED: u64 = 42;

const MAX_DIM: usize = 8;
const MAX_RANK: usize = 32;
const MAX_MATRIX: usize = 16;
const MAX_COUNT: usize = 10_000;
const MAX_CHECKS: usize = 256;
/// `|w|` below this counts as a vanishing obstruction form.
pub const ZERO_FORM_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// scenario schema

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    AnchorHomomorphism,
    IsCartan,
    IsFlat,
    FiberBracket,
    Monodromy,
    Cocycle,
    Completeness,
    ScalarFit,
    Classify,
    CurvatureFormula,
    BracketFormula,
    Development,
    Equivariance,
    Atlas,
    InvariantMetric,
    Compactness,
    Isotropy,
    Closure,
    DualPair,
    LocalLieGroup,
    Obstruction,
}

struct OpInfo {
    op: Op,
    name: &'static str,
    keys: &'static [&'static str],
    tol: f64,
}

const OPS: &[OpInfo] = &[
    OpInfo {
        op: Op::AnchorHomomorphism,
        name: "anchor_homomorphism",
        keys: &["samples", "sign"],
        tol: 1e-7,
    },
    OpInfo {
        op: Op::IsCartan,
        name: "is_cartan",
        keys: &["samples", "target", "perturb"],
        tol: 1e-7,
    },
    OpInfo {
        op: Op::IsFlat,
        name: "is_flat",
        keys: &["samples", "target"],
        tol: 1e-7,
    },
    OpInfo {
        op: Op::FiberBracket,
        name: "fiber_bracket",
        keys: &["at", "target", "expect"],
        tol: 1e-9,
    },
    OpInfo {
        op: Op::Monodromy,
        name: "monodromy",
        keys: &["loop", "eigenvalues"],
        tol: 1e-6,
    },
    OpInfo {
        op: Op::Cocycle,
        name: "cocycle",
        keys: &[],
        tol: 1e-7,
    },
    OpInfo {
        op: Op::Completeness,
        name: "completeness",
        keys: &["horizon", "blowup", "t_star"],
        tol: 1e-3,
    },
    OpInfo {
        op: Op::ScalarFit,
        name: "scalar_fit",
        keys: &["points", "s"],
        tol: 1e-6,
    },
    OpInfo {
        op: Op::Classify,
        name: "classify",
        keys: &["at", "expect"],
        tol: 1e-6,
    },
    OpInfo {
        op: Op::CurvatureFormula,
        name: "curvature_formula",
        keys: &["samples"],
        tol: 1e-6,
    },
    OpInfo {
        op: Op::BracketFormula,
        name: "bracket_formula",
        keys: &["samples"],
        tol: 1e-6,
    },
    OpInfo {
        op: Op::Development,
        name: "development",
        keys: &["pairs"],
        tol: 1e-5,
    },
    OpInfo {
        op: Op::Equivariance,
        name: "equivariance",
        keys: &["samples"],
        tol: 1e-5,
    },
    OpInfo {
        op: Op::Atlas,
        name: "atlas",
        keys: &["samples", "multiplier"],
        tol: 1e-6,
    },
    OpInfo {
        op: Op::InvariantMetric,
        name: "invariant_metric",
        keys: &["samples"],
        tol: 1e-7,
    },
    OpInfo {
        op: Op::Compactness,
        name: "compactness",
        keys: &[],
        tol: 1e-9,
    },
    OpInfo {
        op: Op::Isotropy,
        name: "isotropy",
        keys: &["at"],
        tol: 1e-8,
    },
    OpInfo {
        op: Op::Closure,
        name: "closure",
        keys: &[],
        tol: 1e-10,
    },
    OpInfo {
        op: Op::DualPair,
        name: "dual_pair",
        keys: &["samples"],
        tol: 1e-8,
    },
    OpInfo {
        op: Op::LocalLieGroup,
        name: "local_lie_group",
        keys: &["samples", "at"],
        tol: 1e-7,
    },
    OpInfo {
        op: Op::Obstruction,
        name: "obstruction",
        keys: &["at", "expect"],
        tol: 1e-7,
    },
];

impl Op {
    fn info(self) -> &'static OpInfo {
        OPS.iter().find(|i| i.op == self).expect("every op is listed")
    }

    pub fn as_str(self) -> &'static str {
        self.info().name
    }

    pub fn default_tol(self) -> f64 {
        self.info().tol
    }

    pub fn all() -> impl Iterator<Item = Op> {
        OPS.iter().map(|i| i.op)
    }
}

impl FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Op> {
        OPS.iter()
            .find(|i| i.name == s)
            .map(|i| i.op)
            .ok_or_else(|| Error::Invalid(format!("unknown check `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The model's action algebroid.
    #[default]
    Action,
    /// The Cartan connection on `TM ⊕ h` built from the model's metric.
    Riemannian,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub samples: Option<usize>,
    pub target: Option<Target>,
    /// Adds `perturb·x₀` to every diagonal connection coefficient.
    pub perturb: Option<f64>,
    pub sign: Option<f64>,
    pub at: Option<Vec<f64>>,
    pub expect: Option<String>,
    #[serde(rename = "loop")]
    pub loop_index: Option<usize>,
    pub eigenvalues: Option<Vec<f64>>,
    pub horizon: Option<f64>,
    pub blowup: Option<f64>,
    pub t_star: Option<f64>,
    pub points: Option<usize>,
    pub s: Option<f64>,
    pub pairs: Option<usize>,
    pub multiplier: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CheckSpec {
    pub name: String,
    pub op: Op,
    /// Before run-time scaling.
    pub tol: f64,
    /// The verdict is `pass` when the check outcome equals this.
    pub expect_pass: bool,
    pub params: Params,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraSpec {
    /// `so3`, `sl2`, `affine_line`, `heisenberg` or `abelian` (with `dim`).
    pub named: Option<String>,
    pub dim: Option<usize>,
    /// Entries `[i, j, k, c]` meaning `[e_i, e_j] += c e_k`.
    #[serde(default)]
    pub brackets: Vec<(usize, usize, usize, f64)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealizationSpec {
    /// One square matrix per generator, row by row.
    pub generators: Vec<Vec<Vec<f64>>>,
    /// Basis of the isotropy subalgebra `h₀` in generator coordinates.
    #[serde(default)]
    pub isotropy: Vec<Vec<f64>>,
    pub orbit_point: Option<Vec<f64>>,
    pub closure: Option<Closure>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MetricSpec {
    /// A catalog metric such as `sphere(2)` or `ellipsoid(1,1,1.3)`.
    Named(String),
    /// Expressions over the model chart, row by row.
    Components { components: Vec<Vec<String>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// A translation overlap; the reverse direction is added automatically.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    pub from: usize,
    pub to: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub shift: Vec<f64>,
    pub twist: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasToml {
    pub charts: Vec<BoxSpec>,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegSpec {
    pub chart: usize,
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    pub legs: Vec<LegSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    #[serde(default)]
    pub chart: usize,
    pub m: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub catalog: Option<String>,
    pub name: Option<String>,
    pub coordinates: Option<Vec<String>>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub sample_lower: Option<Vec<f64>>,
    pub sample_upper: Option<Vec<f64>>,
    pub algebra: Option<AlgebraSpec>,
    /// Fundamental vector field of each generator, one expression per coordinate.
    pub fields: Option<Vec<Vec<String>>>,
    pub action_sign: Option<f64>,
    pub realization: Option<RealizationSpec>,
    pub base_point: Option<Vec<f64>>,
    pub metric: Option<MetricSpec>,
    pub atlas: Option<AtlasToml>,
    #[serde(default)]
    pub loops: Vec<LoopSpec>,
    #[serde(default)]
    pub seeds: Vec<SeedSpec>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: Option<String>,
    pub seed: u64,
    pub model: ModelSpec,
    pub checks: Vec<CheckSpec>,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema: u32,
    name: String,
    description: Option<String>,
    #[serde(default = "default_seed")]
    seed: u64,
    model: toml::Spanned<ModelSpec>,
    #[serde(default)]
    checks: Vec<toml::Spanned<RawCheck>>,
}

#[derive(Deserialize)]
struct RawCheck {
    op: String,
    name: Option<String>,
    tol: Option<f64>,
    expect_pass: Option<bool>,
    #[serde(flatten)]
    params: toml::Table,
}

/// 1-based line and column of a byte offset.
fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src.as_bytes()[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let start = before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let column = String::from_utf8_lossy(&before[start..]).chars().count() + 1;
    (line, column)
}

fn parse_error(src: &str, offset: usize, message: impl Into<String>) -> Error {
    let (line, column) = line_col(src, offset);
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

pub fn parse_scenario(src: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(src).map_err(|e| {
        let at = e.span().map_or(0, |s| s.start);
        parse_error(src, at, e.message().trim())
    })?;
    if raw.schema != SCHEMA {
        return Err(parse_error(src, 0, format!("unsupported schema {}, expected {SCHEMA}", raw.schema)));
    }
    let model_at = raw.model.span().start;
    let model = raw.model.into_inner();
    validate_model(&model).map_err(|e| match e {
        Error::UnknownCatalog(_) => e,
        other => parse_error(src, model_at, format!("model: {}", bare_message(&other))),
    })?;
    if raw.checks.len() > MAX_CHECKS {
        return Err(parse_error(src, 0, format!("at most {MAX_CHECKS} checks are allowed")));
    }
    let mut checks = Vec::with_capacity(raw.checks.len());
    for c in raw.checks {
        let at = c.span().start;
        let c = c.into_inner();
        let fail = |msg: String| parse_error(src, at, msg);
        let op: Op = c.op.parse().map_err(|e: Error| fail(bare_message(&e)))?;
        for key in c.params.keys() {
            if !op.info().keys.contains(&key.as_str()) {
                return Err(fail(format!("check `{}` does not take `{key}`", op.as_str())));
            }
        }
        let params: Params = toml::Value::Table(c.params)
            .try_into()
            .map_err(|e: toml::de::Error| fail(format!("check `{}`: {}", op.as_str(), e.message().trim())))?;
        validate_params(op, &params).map_err(|e| fail(format!("check `{}`: {}", op.as_str(), bare_message(&e))))?;
        let tol = c.tol.unwrap_or(op.default_tol());
        if !(tol.is_finite() && tol > 0.0) {
            return Err(fail(format!("tolerance must be positive, got {tol}")));
        }
        checks.push(CheckSpec {
            name: c.name.unwrap_or_else(|| op.as_str().to_string()),
            op,
            tol,
            expect_pass: c.expect_pass.unwrap_or(true),
            params,
        });
    }
    Ok(Scenario {
        name: raw.name,
        description: raw.description,
        seed: raw.seed,
        model,
        checks,
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let p = path.as_ref();
    let src = std::fs::read_to_string(p).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", p.display())))?;
    parse_scenario(&src)
}

fn bare_message(e: &Error) -> String {
    match e {
        Error::Invalid(m) => m.clone(),
        Error::Parse { message, column, .. } => format!("{message} (column {column})"),
        other => other.to_string(),
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} must be finite")))
    }
}

fn validate_params(op: Op, p: &Params) -> Result<()> {
    for (v, what) in [(p.samples, "samples"), (p.points, "points"), (p.pairs, "pairs")] {
        if let Some(v) = v {
            if v == 0 || v > MAX_COUNT {
                return Err(invalid(format!("{what} must be in 1..={MAX_COUNT}")));
            }
        }
    }
    for (v, what) in [
        (p.perturb, "perturb"),
        (p.sign, "sign"),
        (p.t_star, "t_star"),
        (p.s, "s"),
        (p.multiplier, "multiplier"),
    ] {
        if let Some(v) = v {
            finite(&[v], what)?;
        }
    }
    for (v, what) in [(p.horizon, "horizon"), (p.blowup, "blowup")] {
        if let Some(v) = v {
            if !(v.is_finite() && v > 0.0 && v <= 1e12) {
                return Err(invalid(format!("{what} must be positive and at most 1e12")));
            }
        }
    }
    if let Some(a) = &p.at {
        finite(a, "at")?;
    }
    if let Some(e) = &p.eigenvalues {
        finite(e, "eigenvalues")?;
    }
    if let Some(e) = &p.expect {
        let allowed: &[&str] = match op {
            Op::FiberBracket => &["so3", "sl2", "affine_line", "heisenberg", "abelian"],
            Op::Classify => &["euclidean", "spherical", "hyperbolic"],
            Op::Obstruction => &["zero", "nonzero"],
            _ => &[],
        };
        if !allowed.contains(&e.as_str()) {
            return Err(invalid(format!("`expect` must be one of {allowed:?}, got `{e}`")));
        }
    }
    Ok(())
}

fn variables(m: &ModelSpec, n: usize) -> Vec<String> {
    m.coordinates.clone().unwrap_or_else(|| (0..n).map(|i| format!("x{i}")).collect())
}

fn model_dim(m: &ModelSpec) -> Option<usize> {
    m.coordinates
        .as_ref()
        .map(Vec::len)
        .or(m.lower.as_ref().map(Vec::len))
        .or(m.fields.as_ref().and_then(|f| f.first()).map(Vec::len))
        .or(match &m.metric {
            Some(MetricSpec::Components { components }) => Some(components.len()),
            _ => None,
        })
}

fn parse_exprs(rows: &[Vec<String>], vars: &[String]) -> Result<Vec<Vec<Expr>>> {
    let v: Vec<&str> = vars.iter().map(String::as_str).collect();
    rows.iter()
        .map(|row| {
            row.iter()
                .map(|s| {
                    let e = Expr::parse(s, &v).map_err(|e| invalid(format!("expression `{s}`: {}", bare_message(&e))))?;
                    if e.max_var().is_some_and(|k| k >= vars.len()) {
                        return Err(invalid(format!(
                            "expression `{s}` uses a coordinate beyond dimension {}",
                            vars.len()
                        )));
                    }
                    Ok(e)
                })
                .collect()
        })
        .collect()
}

fn square(rows: &[Vec<f64>], what: &str) -> Result<usize> {
    let k = rows.len();
    if k == 0 || k > MAX_MATRIX || rows.iter().any(|r| r.len() != k) {
        return Err(invalid(format!("{what} must be a square matrix of size 1..={MAX_MATRIX}")));
    }
    rows.iter().try_for_each(|r| finite(r, what))?;
    Ok(k)
}

/// Structural checks that need no numerics; catalog names must exist.
fn validate_model(m: &ModelSpec) -> Result<()> {
    if let Some(c) = &m.catalog {
        catalog::describe(c)?;
        let inline = m.name.is_some()
            || m.coordinates.is_some()
            || m.lower.is_some()
            || m.upper.is_some()
            || m.sample_lower.is_some()
            || m.sample_upper.is_some()
            || m.algebra.is_some()
            || m.fields.is_some()
            || m.action_sign.is_some()
            || m.realization.is_some()
            || m.base_point.is_some()
            || m.metric.is_some()
            || m.atlas.is_some()
            || !m.loops.is_empty()
            || !m.seeds.is_empty();
        if inline {
            return Err(invalid("a catalog model takes no inline definitions"));
        }
        return Ok(());
    }
    let n = match (model_dim(m), &m.metric) {
        (Some(n), _) => n,
        (None, Some(MetricSpec::Named(s))) => {
            Metric::from_spec(s).map_err(|e| invalid(format!("metric: {}", bare_message(&e))))?;
            return Ok(());
        }
        (None, _) => {
            return Err(invalid(
                "inline model needs `catalog`, `coordinates`, `lower`/`upper`, `fields` or `metric`",
            ))
        }
    };
    if n == 0 || n > MAX_DIM {
        return Err(invalid(format!("dimension must be in 1..={MAX_DIM}")));
    }
    let vars = variables(m, n);
    if vars.len() != n {
        return Err(invalid("coordinate names disagree with the dimension"));
    }
    for (b, what) in [
        (&m.lower, "lower"),
        (&m.upper, "upper"),
        (&m.sample_lower, "sample_lower"),
        (&m.sample_upper, "sample_upper"),
        (&m.base_point, "base_point"),
    ] {
        if let Some(b) = b {
            if b.len() != n {
                return Err(invalid(format!("`{what}` must have {n} entries")));
            }
            if what != "lower" && what != "upper" {
                finite(b, what)?;
            }
        }
    }
    if m.lower.is_some() != m.upper.is_some() || m.sample_lower.is_some() != m.sample_upper.is_some() {
        return Err(invalid("bounds come in lower/upper pairs"));
    }
    if let Some(s) = m.action_sign {
        finite(&[s], "action_sign")?;
    }
    let r = match &m.algebra {
        Some(a) => Some(algebra_dim(a)?),
        None => None,
    };
    if let Some(f) = &m.fields {
        let r = r.ok_or_else(|| invalid("`fields` needs an `algebra`"))?;
        if f.len() != r || f.iter().any(|v| v.len() != n) {
            return Err(invalid(format!("`fields` must list {r} fields of {n} components")));
        }
        parse_exprs(f, &vars)?;
    }
    match &m.metric {
        Some(MetricSpec::Named(s)) => {
            let g = Metric::from_spec(s).map_err(|e| invalid(format!("metric: {}", bare_message(&e))))?;
            if g.dim() != n {
                return Err(invalid(format!("metric has dimension {}, model has {n}", g.dim())));
            }
        }
        Some(MetricSpec::Components { components }) => {
            if components.len() != n || components.iter().any(|r| r.len() != n) {
                return Err(invalid(format!("metric components must be {n}×{n}")));
            }
            parse_exprs(components, &vars)?;
        }
        None => {}
    }
    if let Some(re) = &m.realization {
        let r = r.ok_or_else(|| invalid("`realization` needs an `algebra`"))?;
        if re.generators.len() != r {
            return Err(invalid(format!("realization needs {r} generators")));
        }
        let k = re.generators.iter().map(|g| square(g, "generator")).collect::<Result<Vec<_>>>()?;
        if k.windows(2).any(|w| w[0] != w[1]) {
            return Err(invalid("generators must share one size"));
        }
        for v in &re.isotropy {
            if v.len() != r {
                return Err(invalid(format!("isotropy vectors need {r} entries")));
            }
            finite(v, "isotropy")?;
        }
        if let Some(o) = &re.orbit_point {
            if o.len() != k[0] {
                return Err(invalid(format!("orbit_point needs {} entries", k[0])));
            }
            finite(o, "orbit_point")?;
        }
    }
    if let Some(a) = &m.atlas {
        if m.fields.is_none() {
            return Err(invalid("an atlas glues the action algebroid and needs `fields`"));
        }
        let r = r.unwrap_or(0);
        if a.charts.is_empty() || a.charts.len() > 64 {
            return Err(invalid("atlas needs 1..=64 charts"));
        }
        for c in &a.charts {
            if c.lower.len() != n || c.upper.len() != n {
                return Err(invalid(format!("atlas boxes need {n} bounds")));
            }
        }
        for t in &a.transitions {
            if t.from >= a.charts.len() || t.to >= a.charts.len() {
                return Err(invalid("transition refers to a missing chart"));
            }
            if t.lower.len() != n || t.upper.len() != n || t.shift.len() != n {
                return Err(invalid(format!("transition bounds and shift need {n} entries")));
            }
            finite(&t.shift, "shift")?;
            if square(&t.twist, "twist")? != r {
                return Err(invalid(format!("twist must be {r}×{r}")));
            }
        }
    }
    let charts = m.atlas.as_ref().map_or(1, |a| a.charts.len());
    for l in &m.loops {
        if l.legs.is_empty() {
            return Err(invalid("a loop needs at least one leg"));
        }
        for leg in &l.legs {
            if leg.chart >= charts || leg.points.len() < 2 || leg.points.iter().any(|p| p.len() != n) {
                return Err(invalid(format!(
                    "loop legs need a valid chart and two or more {n}-dimensional points"
                )));
            }
            leg.points.iter().try_for_each(|p| finite(p, "loop point"))?;
        }
    }
    for s in &m.seeds {
        if s.chart >= charts || s.m.len() != n || s.x.len() != r.unwrap_or(0) {
            return Err(invalid("seeds need a valid chart, a base point and a fiber vector"));
        }
        finite(&s.m, "seed")?;
        finite(&s.x, "seed")?;
    }
    Ok(())
}

fn named_algebra(name: &str, dim: Option<usize>) -> Result<LieAlgebra> {
    Ok(match name {
        "so3" => LieAlgebra::so3(),
        "sl2" => catalog::sl2_realization()?.algebra().clone(),
        "affine_line" => LieAlgebra::affine_line(),
        "heisenberg" => LieAlgebra::heisenberg(),
        "abelian" => match dim {
            Some(d) if (1..=MAX_RANK).contains(&d) => LieAlgebra::abelian(d),
            _ => return Err(invalid(format!("abelian algebras need `dim` in 1..={MAX_RANK}"))),
        },
        other => return Err(invalid(format!("unknown algebra `{other}`"))),
    })
}

fn algebra_dim(a: &AlgebraSpec) -> Result<usize> {
    match (&a.named, a.dim) {
        (Some(n), d) => Ok(named_algebra(n, d)?.dim()),
        (None, Some(d)) if (1..=MAX_RANK).contains(&d) => {
            if a.brackets.iter().any(|&(i, j, k, c)| i >= d || j >= d || k >= d || !c.is_finite()) {
                return Err(invalid("bracket entries out of range"));
            }
            Ok(d)
        }
        _ => Err(invalid(format!("algebra needs `named` or `dim` in 1..={MAX_RANK}"))),
    }
}

fn build_algebra(a: &AlgebraSpec) -> Result<LieAlgebra> {
    match &a.named {
        Some(n) => named_algebra(n, a.dim),
        None => LieAlgebra::from_brackets(algebra_dim(a)?, &a.brackets),
    }
}

// ---------------------------------------------------------------------------
// models

/// Everything a scenario can check against; missing pieces make the checks
/// that need them report an error.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub action: Option<ActionAlgebroid>,
    pub action_sign: f64,
    pub homogeneous: Option<HomogeneousModel>,
    pub base_point: Option<Vec<f64>>,
    pub sample_box: Option<Chart>,
    pub glued: Option<GluedAlgebroid>,
    pub loops: Vec<BasePath>,
    pub seeds: Vec<Seed>,
    pub symmetries: Vec<EquivariantMap>,
    pub metric: Option<Metric>,
    pub riemannian: Option<RiemannianCartanChart>,
    pub dual_pair: Option<DualPair>,
}

impl From<CatalogModel> for Model {
    fn from(c: CatalogModel) -> Self {
        Model {
            name: c.name.to_string(),
            action: Some(c.action),
            action_sign: c.action_sign,
            homogeneous: Some(c.homogeneous),
            base_point: Some(c.base_point),
            sample_box: Some(c.sample_box),
            glued: Some(c.glued),
            loops: c.loops,
            seeds: c.seeds,
            symmetries: c.symmetries,
            metric: c.metric,
            riemannian: c.riemannian,
            dual_pair: c.dual_pair,
        }
    }
}

fn expr_field(chart: Chart, shape: Shape, exprs: Vec<Expr>) -> SmoothField {
    let exprs = Arc::new(exprs);
    SmoothField::new(chart, shape, field_fn(move |x: &[Jet]| exprs.iter().map(|e| e.eval(x)).collect()))
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let k = rows.len();
    DMatrix::from_fn(k, rows.first().map_or(0, Vec::len), |i, j| rows[i][j])
}

pub fn build_model(m: &ModelSpec) -> Result<Model> {
    validate_model(m)?;
    if let Some(c) = &m.catalog {
        return Ok(catalog::load(c)?.into());
    }
    let named_metric = match &m.metric {
        Some(MetricSpec::Named(s)) => Some(Metric::from_spec(s)?),
        _ => None,
    };
    let n = model_dim(m).or(named_metric.as_ref().map(Metric::dim)).expect("validated");
    let vars = variables(m, n);
    let mut chart = match (&m.lower, &m.upper) {
        (Some(lo), Some(hi)) => Chart::new(lo.clone(), hi.clone())?,
        _ => Chart::whole(n),
    };
    if let (Some(lo), Some(hi)) = (&m.sample_lower, &m.sample_upper) {
        chart = chart.with_sample_region(lo.clone(), hi.clone())?;
    }
    let algebra = m.algebra.as_ref().map(build_algebra).transpose()?;
    let action = match (&m.fields, &algebra) {
        (Some(f), Some(alg)) => {
            let r = alg.dim();
            let ex = parse_exprs(f, &vars)?;
            // anchor is n×r row-major; column a is the field of generator a
            let anchor: Vec<Expr> = (0..n).flat_map(|i| ex.iter().map(move |col| col[i].clone())).collect();
            Some(make_action_algebroid(
                alg,
                &expr_field(chart.clone(), Shape::Matrix { rows: n, cols: r }, anchor),
            )?)
        }
        _ => None,
    };
    let homogeneous = match (&m.realization, &algebra) {
        (Some(re), Some(alg)) => {
            let real = MatrixRealization::new(alg.clone(), re.generators.iter().map(|g| to_matrix(g)).collect(), DEFAULT_TOL)?;
            let h0 = if re.isotropy.is_empty() {
                Subalgebra::zero(alg.clone())
            } else {
                Subalgebra::new(alg.clone(), re.isotropy.clone(), DEFAULT_TOL)?
            };
            let mut h = HomogeneousModel::new(real, h0, re.closure.unwrap_or(Closure::Unknown))?;
            if let Some(o) = &re.orbit_point {
                h = h.with_orbit_point(o.clone());
            }
            Some(h)
        }
        _ => None,
    };
    let glued = match (&m.atlas, &action) {
        (Some(a), Some(act)) => {
            let boxes = a
                .charts
                .iter()
                .map(|b| Chart::new(b.lower.clone(), b.upper.clone()))
                .collect::<Result<Vec<_>>>()?;
            let mut overlaps = Vec::new();
            for t in &a.transitions {
                let region = Chart::new(t.lower.clone(), t.upper.clone())?;
                let image = Chart::new(
                    t.lower.iter().zip(&t.shift).map(|(a, b)| a + b).collect(),
                    t.upper.iter().zip(&t.shift).map(|(a, b)| a + b).collect(),
                )?;
                let o = Overlap::translation(t.from, t.to, region, t.shift.clone(), to_matrix(&t.twist));
                let back = o.reversed(image)?;
                overlaps.push(o);
                overlaps.push(back);
            }
            Some(infinitesimalize(act, &boxes, overlaps, 1e-7)?)
        }
        (None, Some(act)) => Some(GluedAlgebroid::single(act.chart().clone())),
        _ => None,
    };
    let loops = m
        .loops
        .iter()
        .map(|l| {
            let mut legs = l.legs.iter().map(|leg| BasePath::polyline(leg.chart, &leg.points));
            let first = legs.next().expect("validated")?;
            legs.try_fold(first, |acc, p| Ok(acc.then(p?)))
        })
        .collect::<Result<Vec<_>>>()?;
    let seeds = m
        .seeds
        .iter()
        .map(|s| Seed {
            chart: s.chart,
            m: s.m.clone(),
            x: s.x.clone(),
        })
        .collect();
    let metric = match &m.metric {
        Some(MetricSpec::Components { components }) => {
            let ex: Vec<Expr> = parse_exprs(components, &vars)?.into_iter().flatten().collect();
            Some(Metric::new(
                "inline",
                expr_field(chart.clone(), Shape::Matrix { rows: n, cols: n }, ex),
            )?)
        }
        Some(MetricSpec::Named(_)) => named_metric,
        None => None,
    };
    let riemannian = match &metric {
        Some(g) if n >= 2 => Some(build_riemannian_cartan(g)?),
        _ => None,
    };
    Ok(Model {
        name: m.name.clone().unwrap_or_else(|| "inline".into()),
        action_sign: m.action_sign.unwrap_or(-1.0),
        base_point: m.base_point.clone().or_else(|| action.as_ref().map(|_| chart.center())),
        sample_box: action.as_ref().map(|_| chart.clone()),
        action,
        homogeneous,
        glued,
        loops,
        seeds,
        symmetries: vec![],
        metric,
        riemannian,
        dual_pair: None,
    })
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Error => "error",
        }
    }
}

/// A point, time, word or matrix that localizes a residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Witness {
    pub label: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub op: String,
    pub verdict: Verdict,
    pub expect_pass: bool,
    /// Outcome of the underlying check; absent when it raised an error.
    pub outcome: Option<bool>,
    /// Absent for checks without a scalar residual, or when it was not finite.
    pub max_residual: Option<f64>,
    pub tol: f64,
    pub witnesses: Vec<Witness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Only recorded on request, since it breaks reproducibility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
    /// Op-specific data under a key named after the op.
    #[serde(flatten)]
    pub details: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema: u32,
    pub scenario: String,
    pub model: String,
    pub seed: u64,
    pub tol_scale: f64,
    pub verdict: Verdict,
    pub checks: Vec<CheckReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Format> {
        match s {
            "text" => Ok(Format::Text),
            "json" => Ok(Format::Json),
            other => Err(invalid(format!("unknown format `{other}` (expected text or json)"))),
        }
    }
}

fn fmt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"))
}

impl Report {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn from_json(src: &str) -> Result<Report> {
        let r: Report = serde_json::from_str(src).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if r.schema != SCHEMA {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("unsupported report schema {}", r.schema),
            });
        }
        Ok(r)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scenario {} (model {}, seed {}, tol scale {}): {}",
            self.scenario,
            self.model,
            self.seed,
            self.tol_scale,
            self.verdict.as_str().to_uppercase()
        );
        if self.checks.is_empty() {
            let _ = writeln!(s, "  no checks");
            return s;
        }
        let w = self.checks.iter().map(|c| c.name.chars().count()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            s,
            "  {:<w$}  {:<7}  {:<8}  {:>10}  {:>10}",
            "check", "verdict", "expected", "residual", "tol"
        );
        for c in &self.checks {
            let _ = write!(
                s,
                "  {:<w$}  {:<7}  {:<8}  {:>10}  {:>10}",
                c.name,
                c.verdict.as_str(),
                if c.expect_pass { "pass" } else { "fail" },
                fmt_num(c.max_residual),
                fmt_num(Some(c.tol))
            );
            if let Some(ms) = c.wall_ms {
                let _ = write!(s, "  {ms:.1} ms");
            }
            s.push('\n');
            if let Some(e) = &c.error {
                let _ = writeln!(s, "  {:<w$}    error: {e}", "");
            }
            for wt in &c.witnesses {
                let _ = writeln!(s, "  {:<w$}    {}: {}", "", wt.label, wt.value);
            }
        }
        s
    }

    pub fn export(&self, f: Format) -> String {
        match f {
            Format::Text => self.to_text(),
            Format::Json => self.to_json(),
        }
    }
}

// ---------------------------------------------------------------------------
// running

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub tol_scale: f64,
    pub timings: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: None,
            tol_scale: 1.0,
            timings: false,
        }
    }
}

/// Result of one check before it is compared with the expectation.
struct Outcome {
    pass: bool,
    residual: Option<f64>,
    witnesses: Vec<Witness>,
    details: Value,
}

fn witness(label: &str, value: impl Serialize) -> Witness {
    Witness {
        label: label.into(),
        value: serde_json::to_value(value).unwrap_or(Value::Null),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn structure_list(g: &LieAlgebra) -> Vec<(usize, usize, usize, f64)> {
    let d = g.dim();
    let mut out = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            for k in 0..d {
                let c = g.c(i, j, k);
                if c.abs() > 1e-12 {
                    out.push((i, j, k, c));
                }
            }
        }
    }
    out
}

fn tensor_outcome(rep: &TensorReport, extra: Value) -> Outcome {
    let mut witnesses = Vec::new();
    if let Some(i) = rep.worst() {
        witnesses.push(witness("worst_point", &rep.points[i]));
    }
    let mut details = json!({ "samples": rep.points.len() });
    if let (Value::Object(d), Value::Object(e)) = (&mut details, extra) {
        d.extend(e);
    }
    Outcome {
        pass: rep.pass,
        residual: Some(rep.max_residual),
        witnesses,
        details,
    }
}

fn need<'a, T>(x: &'a Option<T>, what: &str) -> Result<&'a T> {
    x.as_ref().ok_or_else(|| invalid(format!("the model has no {what}")))
}

fn need_riemannian(m: &Model) -> Result<&RiemannianCartanChart> {
    need(&m.riemannian, "metric of dimension two or more")
}

/// The chart a check targets and the box its samples come from.
fn target(m: &Model, t: Target) -> Result<(AlgebroidChart, Chart)> {
    match t {
        Target::Action => Ok((
            need(&m.action, "action algebroid")?.chart().clone(),
            need(&m.sample_box, "sample box")?.clone(),
        )),
        Target::Riemannian => {
            let rc = need_riemannian(m)?;
            Ok((rc.chart().clone(), rc.chart().base().clone()))
        }
    }
}

fn default_point(m: &Model, t: Target) -> Result<Vec<f64>> {
    match t {
        Target::Action => Ok(need(&m.base_point, "base point")?.clone()),
        Target::Riemannian => Ok(sample_centre(need_riemannian(m)?.chart().base())),
    }
}

fn sample_centre(c: &Chart) -> Vec<f64> {
    let (lo, hi) = c.sample_region();
    lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// `Γ^a_{ia} += eps·x₀`, which breaks the Cartan condition for any `eps ≠ 0`.
fn perturbed(c: &AlgebroidChart, eps: f64) -> Result<AlgebroidChart> {
    let base = c.conn_fn().clone();
    let r = c.rank();
    let n = c.dim();
    c.with_connection(field_fn(move |x| {
        let mut g = base(x);
        for i in 0..n {
            for a in 0..r {
                g[(i * r + a) * r + a] = &g[(i * r + a) * r + a] + eps * &x[0];
            }
        }
        g
    }))
}

/// Eigenvalues as plain numbers when all are real, else `[re, im]` pairs.
fn eigen_json(m: &DMatrix<f64>) -> (Value, Vec<f64>) {
    let mut ev: Vec<(f64, f64)> = m.clone().complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect();
    ev.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let scale = ev.iter().map(|z| z.0.hypot(z.1)).fold(1.0f64, f64::max);
    if ev.iter().all(|z| z.1.abs() <= 1e-12 * scale) {
        let re: Vec<f64> = ev.iter().map(|z| z.0).collect();
        (json!(re), re)
    } else {
        (
            json!(ev.iter().map(|z| [z.0, z.1]).collect::<Vec<_>>()),
            ev.iter().map(|z| z.0).collect(),
        )
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Slope of an induced transition on the first readout coordinate, for
/// one-dimensional model spaces.
fn transition_multiplier(h: &HomogeneousModel, ind: &InducedMap) -> Result<Option<f64>> {
    let Some(c) = h.complement().first() else { return Ok(None) };
    if h.complement().len() != 1 {
        return Ok(None);
    }
    let real = h.realization();
    let p0 = Coset::new(real.exp(c.as_slice(), 0.0)?)?;
    let p1 = Coset::new(real.exp(c.as_slice(), 1.0)?)?;
    let (Some(a0), Some(a1)) = (h.readout(&p0), h.readout(&p1)) else {
        return Ok(None);
    };
    let (Some(b0), Some(b1)) = (h.readout(&ind.apply(h, &p0)?), h.readout(&ind.apply(h, &p1)?)) else {
        return Ok(None);
    };
    let d = a1[0] - a0[0];
    Ok((d.abs() > 1e-12).then(|| (b1[0] - b0[0]) / d))
}

fn execute(m: &Model, c: &CheckSpec, seed: u64, tol: f64) -> Result<Outcome> {
    let p = &c.params;
    let t = p.target.unwrap_or_default();
    let samples = |region: &Chart, default: usize| region.random_points(p.samples.unwrap_or(default), seed);
    match c.op {
        Op::AnchorHomomorphism => {
            let a = need(&m.action, "action algebroid")?;
            let sign = p.sign.unwrap_or(m.action_sign);
            let rep = check_action_homomorphism(a, &samples(need(&m.sample_box, "sample box")?, 50), sign, tol)?;
            Ok(tensor_outcome(&rep, json!({ "sign": sign })))
        }
        Op::IsCartan | Op::IsFlat => {
            let (mut chart, region) = target(m, t)?;
            let eps = p.perturb.unwrap_or(0.0);
            if eps != 0.0 {
                chart = perturbed(&chart, eps)?;
            }
            let s = samples(&region, 50);
            let rep = if c.op == Op::IsCartan {
                is_cartan(&chart, &s, tol)?
            } else {
                is_flat(&chart, &s, tol)?
            };
            Ok(tensor_outcome(&rep, json!({ "perturb": eps })))
        }
        Op::FiberBracket => {
            let (chart, _) = target(m, t)?;
            let at = match &p.at {
                Some(a) => a.clone(),
                None => default_point(m, t)?,
            };
            let g = fiber_bracket_at(&chart, &at)?;
            let jac = g.check_jacobi(tol);
            let distance = match &p.expect {
                Some(e) => Some(g.distance(&named_algebra(e, Some(g.dim()))?)),
                None => None,
            };
            let residual = jac.residual.max(distance.unwrap_or(0.0));
            Ok(Outcome {
                pass: residual <= tol,
                residual: Some(residual),
                witnesses: vec![witness("point", &at)],
                details: json!({
                    "dim": g.dim(),
                    "brackets": structure_list(&g),
                    "jacobi_residual": jac.residual,
                    "distance_to_expected": distance,
                }),
            })
        }
        Op::Monodromy => {
            let g = need(&m.glued, "glued algebroid")?;
            let chosen: Vec<usize> = match p.loop_index {
                Some(i) if i < m.loops.len() => vec![i],
                Some(i) => return Err(invalid(format!("loop {i} does not exist"))),
                None => (0..m.loops.len()).collect(),
            };
            let mut loops = Vec::new();
            let mut all_eigs = Vec::new();
            let mut eig_values = Vec::new();
            let mut worst = 0.0f64;
            let mut maps = Vec::new();
            for &i in &chosen {
                let mono = monodromy(g, &m.loops[i])?;
                let auto = mono.is_automorphism(tol)?;
                let (ej, ev) = eigen_json(&mono.matrix);
                worst = worst.max(auto.residual);
                loops.push(json!({
                    "loop": i,
                    "matrix": rows(&mono.matrix),
                    "eigenvalues": ej,
                    "automorphism_residual": auto.residual,
                }));
                all_eigs.extend(ev.iter().copied());
                if let Value::Array(a) = ej {
                    eig_values.extend(a);
                }
                maps.push((i, mono.matrix));
            }
            // monodromy of a concatenation is the product, later loop on the left
            let mut multiplicativity = 0.0f64;
            for (i, mi) in &maps {
                for (j, mj) in &maps {
                    let both = monodromy(g, &m.loops[*i].clone().then(m.loops[*j].clone()))?;
                    let prod = mj * mi;
                    multiplicativity = multiplicativity.max((&both.matrix - &prod).norm() / prod.norm().max(1.0));
                }
            }
            worst = worst.max(multiplicativity);
            let mut witnesses = Vec::new();
            if let Some(expect) = &p.eigenvalues {
                let mut want = expect.clone();
                want.sort_by(|a, b| b.total_cmp(a));
                if want.len() != all_eigs.len() {
                    return Err(invalid(format!("expected {} eigenvalues, found {}", want.len(), all_eigs.len())));
                }
                let mut got = all_eigs.clone();
                got.sort_by(|a, b| b.total_cmp(a));
                let err = got.iter().zip(&want).map(|(g, w)| rel_err(*g, *w)).fold(0.0, f64::max);
                witnesses.push(witness("eigenvalue_relative_error", err));
                worst = worst.max(err);
            }
            Ok(Outcome {
                pass: worst <= tol,
                residual: Some(worst),
                witnesses,
                details: json!({
                    "eigenvalues": eig_values,
                    "multiplicativity_residual": multiplicativity,
                    "loops": loops,
                }),
            })
        }
        Op::Cocycle => {
            let g = need(&m.glued, "glued algebroid")?;
            let rep = check_cocycle(g.overlaps(), tol);
            Ok(Outcome {
                pass: rep.pass,
                residual: Some(rep.identity_residual.max(rep.composition_residual)),
                witnesses: vec![],
                details: json!({
                    "overlaps": g.overlaps().len(),
                    "triples_checked": rep.triples_checked,
                    "identity_residual": rep.identity_residual,
                    "composition_residual": rep.composition_residual,
                }),
            })
        }
        Op::Completeness => {
            let g = need(&m.glued, "glued algebroid")?;
            if m.seeds.is_empty() {
                return Err(invalid("the model has no geodesic seeds"));
            }
            let horizon = p.horizon.unwrap_or(100.0);
            let reports = completeness_probe(g, &m.seeds, horizon, p.blowup.unwrap_or(1e6))?;
            let times: Vec<f64> = reports
                .iter()
                .flat_map(|r| [&r.forward, &r.backward])
                .filter_map(|v| match v {
                    crate::transport::CompletenessVerdict::CertifiedIncomplete { t_star } => Some(*t_star),
                    _ => None,
                })
                .collect();
            let witnesses = times.iter().map(|t| witness("t_star", t)).collect();
            let (pass, residual) = match p.t_star {
                Some(want) => {
                    let err = times.iter().map(|t| (t - want).abs()).fold(f64::INFINITY, f64::min);
                    (err <= tol, Some(err))
                }
                None => (times.is_empty(), None),
            };
            Ok(Outcome {
                pass,
                residual: residual.filter(|r| r.is_finite()),
                witnesses,
                details: json!({ "horizon": horizon, "seeds": reports }),
            })
        }
        Op::ScalarFit => {
            let rc = need_riemannian(m)?;
            let pts = rc.chart().base().random_points(p.points.unwrap_or(20), seed);
            let mut fits = Vec::with_capacity(pts.len());
            for q in &pts {
                fits.push(scalar_form_fit(rc.levi_civita(), rc.metric(), q)?);
            }
            let s0 = fits[0].s;
            let spread = fits.iter().map(|f| (f.s - s0).abs()).fold(0.0, f64::max);
            let fit = fits.iter().map(|f| f.residual).fold(0.0, f64::max);
            let off = p.s.map_or(0.0, |want| (s0 - want).abs());
            let residual = spread.max(fit).max(off);
            let smin = fits.iter().map(|f| f.s).fold(f64::INFINITY, f64::min);
            let smax = fits.iter().map(|f| f.s).fold(f64::NEG_INFINITY, f64::max);
            Ok(Outcome {
                pass: residual <= tol,
                residual: Some(residual),
                witnesses: vec![],
                details: json!({ "points": pts.len(), "s": s0, "s_min": smin, "s_max": smax, "fit_residual": fit }),
            })
        }
        Op::Classify => {
            let rc = need_riemannian(m)?;
            let at = p.at.clone().unwrap_or_else(|| sample_centre(rc.chart().base()));
            match classify_constant_curvature(rc, &at, tol) {
                Ok(cl) => {
                    let tag_ok = p.expect.as_deref().is_none_or(|e| e == cl.tag.as_str());
                    Ok(Outcome {
                        pass: tag_ok && cl.signature_matches && cl.structure_residual <= tol && cl.fit_residual <= tol,
                        residual: Some(cl.structure_residual.max(cl.fit_residual)),
                        witnesses: vec![witness("point", &at)],
                        details: json!({
                            "tag": cl.tag,
                            "model": cl.model,
                            "s": cl.s,
                            "fit_residual": cl.fit_residual,
                            "structure_residual": cl.structure_residual,
                            "killing_signature": cl.killing_signature,
                            "signature_matches": cl.signature_matches,
                        }),
                    })
                }
                Err(Error::Inconsistent(why)) => Ok(Outcome {
                    pass: false,
                    residual: None,
                    witnesses: vec![witness("point", &at)],
                    details: json!({ "rejected": why }),
                }),
                Err(e) => Err(e),
            }
        }
        Op::CurvatureFormula => {
            let rc = need_riemannian(m)?;
            let rep = curvature_formula_check(rc, &samples(rc.chart().base(), 10), tol)?;
            Ok(tensor_outcome(&rep, json!({})))
        }
        Op::BracketFormula => {
            let rc = need_riemannian(m)?;
            let rep = bracket_formula_check(rc, &samples(rc.chart().base(), 10), seed, tol)?;
            Ok(tensor_outcome(&rep, json!({})))
        }
        Op::Development => {
            let a = need(&m.action, "action algebroid")?;
            let h = need(&m.homogeneous, "homogeneous model")?;
            let m0 = need(&m.base_point, "base point")?;
            let region = need(&m.sample_box, "sample box")?;
            let k = p.pairs.unwrap_or(10);
            let ends = region.random_points(k, seed);
            let vias = region.random_points(k, seed.wrapping_add(1 << 32));
            let square = h.complement().len() == m0.len();
            let mut worst = 0.0f64;
            let mut worst_end = None;
            let mut min_det = f64::INFINITY;
            for (e, v) in ends.iter().zip(&vias) {
                let straight = BasePath::polyline(0, &[m0.clone(), e.clone()])?;
                let bent = BasePath::polyline(0, &[m0.clone(), v.clone(), e.clone()])?;
                let r = path_independence_check(a, h, &straight, &bent)?;
                if !(r.residual <= worst) {
                    worst = r.residual;
                    worst_end = Some(e.clone());
                }
                if square {
                    let j = develop_jacobian(a, h, m0, e, 1e-5)?;
                    min_det = min_det.min(j.determinant().abs());
                }
            }
            let det_ok = !square || min_det >= MIN_JACOBIAN;
            let mut witnesses: Vec<Witness> = worst_end.iter().map(|e| witness("worst_endpoint", e)).collect();
            if square {
                witnesses.push(witness("min_abs_jacobian", min_det));
            }
            Ok(Outcome {
                pass: worst <= tol && det_ok,
                residual: Some(worst),
                witnesses,
                details: json!({
                    "pairs": k,
                    "min_abs_jacobian": if square { Some(min_det) } else { None },
                }),
            })
        }
        Op::Equivariance => {
            let a = need(&m.action, "action algebroid")?;
            let h = need(&m.homogeneous, "homogeneous model")?;
            let m0 = need(&m.base_point, "base point")?;
            let s = samples(need(&m.sample_box, "sample box")?, 5);
            let mut per = Vec::new();
            let mut worst = 0.0f64;
            for (i, e) in m.symmetries.iter().enumerate() {
                let twist = check_equivariant_twist(a, e, &s, tol)?;
                let diagram = equivariance_diagram_check(a, h, e, m0, &s, tol)?;
                // the induced map of a composite is the composite of the induced maps
                let ee = e.compose(e)?;
                let lhs = induced_affine_map(a, h, &ee, m0)?;
                let one = induced_affine_map(a, h, e, m0)?;
                let rhs = one.compose(h, &one)?;
                let mut comp = 0.0f64;
                for q in &s {
                    let d = develop_straight(a, h, m0, q)?;
                    comp = comp.max(h.coset_distance(&lhs.apply(h, &d)?, &rhs.apply(h, &d)?)?);
                }
                worst = worst.max(twist.max_residual).max(diagram.max_residual).max(comp);
                per.push(json!({
                    "symmetry": i,
                    "twist_residual": twist.max_residual,
                    "diagram_residual": diagram.max_residual,
                    "composition_residual": comp,
                }));
            }
            Ok(Outcome {
                pass: worst <= tol,
                residual: Some(worst),
                witnesses: vec![],
                details: json!({ "samples": s.len(), "symmetries": per }),
            })
        }
        Op::Atlas => {
            let g = need(&m.glued, "glued algebroid")?;
            let h = need(&m.homogeneous, "homogeneous model")?;
            let spec = AtlasSpec {
                base_points: None,
                samples_per_chart: p.samples.unwrap_or(5),
                tol,
            };
            let rep = reconstruct_atlas(g, h, &spec)?;
            let mut transitions = Vec::new();
            let mut worst = rep.transitions.iter().map(|t| t.residual).fold(0.0, f64::max);
            let mut best_fit = f64::INFINITY;
            for tr in &rep.transitions {
                let ind = InducedMap::new(h, to_matrix(&tr.twist), Coset::new(to_matrix(&tr.q))?)?;
                let mult = transition_multiplier(h, &ind)?;
                if let (Some(want), Some(got)) = (p.multiplier, mult) {
                    best_fit = best_fit.min(rel_err(got, want));
                }
                transitions.push(json!({
                    "from": tr.from,
                    "to": tr.to,
                    "twist": tr.twist,
                    "q": tr.q,
                    "multiplier": mult,
                    "residual": tr.residual,
                }));
            }
            let mut witnesses = Vec::new();
            if p.multiplier.is_some() {
                witnesses.push(witness("multiplier_relative_error", best_fit));
                worst = worst.max(best_fit);
            }
            let min_det = rep.charts.iter().filter_map(|c| c.min_abs_det).fold(f64::INFINITY, f64::min);
            Ok(Outcome {
                pass: rep.pass && worst <= tol,
                residual: Some(worst).filter(|r| r.is_finite()),
                witnesses,
                details: json!({
                    "charts": rep.charts.len(),
                    "min_abs_jacobian": min_det.is_finite().then_some(min_det),
                    "closure": rep.closure,
                    "transitions": transitions,
                }),
            })
        }
        Op::InvariantMetric => {
            let a = need(&m.action, "action algebroid")?;
            let g = need(&m.metric, "metric")?;
            let rep = invariant_metric_check(a.chart(), g, &samples(need(&m.sample_box, "sample box")?, 20), tol)?;
            Ok(tensor_outcome(&rep, json!({ "metric": g.name() })))
        }
        Op::Compactness => {
            let g = need(&m.glued, "glued algebroid")?;
            let maps = m.loops.iter().map(|l| Ok(monodromy(g, l)?.matrix)).collect::<Result<Vec<_>>>()?;
            let v = monodromy_compactness_probe(&maps);
            let witnesses = match &v {
                CompactnessVerdict::Unbounded { witness: w, modulus } => vec![witness("word", w), witness("modulus", modulus)],
                CompactnessVerdict::ConsistentWithCompactClosure => vec![],
            };
            Ok(Outcome {
                pass: matches!(v, CompactnessVerdict::ConsistentWithCompactClosure),
                residual: None,
                witnesses,
                details: json!({ "generators": maps.len(), "verdict": v }),
            })
        }
        Op::Isotropy => {
            let a = need(&m.action, "action algebroid")?;
            let at = match &p.at {
                Some(x) => x.clone(),
                None => need(&m.base_point, "base point")?.clone(),
            };
            let iso = isotropy_subalgebra(a.chart(), &at)?;
            let basis: Vec<Vec<f64>> = iso.subalgebra.basis().iter().map(|v| v.as_slice().to_vec()).collect();
            Ok(Outcome {
                pass: !iso.ill_conditioned,
                residual: None,
                witnesses: vec![witness("point", &at)],
                details: json!({
                    "dim": iso.subalgebra.dim(),
                    "basis": basis,
                    "singular_values": iso.singular_values,
                    "gap": iso.gap.is_finite().then_some(iso.gap),
                    "ill_conditioned": iso.ill_conditioned,
                }),
            })
        }
        Op::Closure => {
            let h = need(&m.homogeneous, "homogeneous model")?;
            let v = geometric_closure_probe(h);
            Ok(Outcome {
                pass: !matches!(v, ClosureVerdict::NonclosedWitness { .. }),
                residual: None,
                witnesses: vec![],
                details: json!({ "verdict": v }),
            })
        }
        Op::DualPair => {
            let dp = need(&m.dual_pair, "dual pair")?;
            let rep = check_dual_pair(dp, &samples(dp.chart(), 10), tol)?;
            Ok(tensor_outcome(&rep, json!({})))
        }
        Op::LocalLieGroup => {
            let dp = need(&m.dual_pair, "dual pair")?;
            let at = p.at.clone().unwrap_or_else(|| sample_centre(dp.chart()));
            let rep = local_lie_group_check(dp, &samples(dp.chart(), 10), &at, tol)?;
            let residual = rep
                .nabla_flat
                .max_residual
                .max(rep.nabla_bar_flat.max_residual)
                .max(rep.torsion_parallel.max_residual)
                .max(rep.jacobi.residual);
            Ok(Outcome {
                pass: rep.pass,
                residual: Some(residual),
                witnesses: rep.failed_stage.iter().map(|s| witness("failed_stage", s)).collect(),
                details: json!({
                    "nabla_flat": rep.nabla_flat.max_residual,
                    "nabla_bar_flat": rep.nabla_bar_flat.max_residual,
                    "torsion_parallel": rep.torsion_parallel.max_residual,
                    "jacobi": rep.jacobi.residual,
                    "brackets": structure_list(&rep.bracket),
                    "failed_stage": rep.failed_stage,
                }),
            })
        }
        Op::Obstruction => {
            let dp = need(&m.dual_pair, "dual pair")?;
            let at = p.at.clone().unwrap_or_else(|| sample_centre(dp.chart()));
            let rep = obstruction_form(dp, &at, tol)?;
            let size = rep.w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let shape_ok = match p.expect.as_deref() {
                Some("zero") => size <= ZERO_FORM_TOL,
                Some("nonzero") => size > ZERO_FORM_TOL,
                _ => true,
            };
            Ok(Outcome {
                pass: rep.dw.pass && shape_ok,
                residual: Some(rep.dw.residual),
                witnesses: vec![witness("point", &at)],
                details: json!({ "w": rep.w, "w_max": size, "dw_residual": rep.dw.residual }),
            })
        }
    }
}

pub fn run_checks(s: &Scenario, model: &Model, opts: &RunOptions) -> Result<Report> {
    if !(opts.tol_scale.is_finite() && opts.tol_scale > 0.0) {
        return Err(invalid(format!("tolerance scale must be positive, got {}", opts.tol_scale)));
    }
    let seed = opts.seed.unwrap_or(s.seed);
    let mut checks = Vec::with_capacity(s.checks.len());
    for (k, c) in s.checks.iter().enumerate() {
        let tol = c.tol * opts.tol_scale;
        let started = Instant::now();
        let res = execute(model, c, seed.wrapping_add(k as u64), tol);
        let wall_ms = opts.timings.then(|| started.elapsed().as_secs_f64() * 1e3);
        let report = match res {
            Ok(o) => {
                let finite = o.residual.is_none_or(f64::is_finite);
                let pass = o.pass && finite;
                CheckReport {
                    name: c.name.clone(),
                    op: c.op.as_str().into(),
                    verdict: if pass == c.expect_pass { Verdict::Pass } else { Verdict::Fail },
                    expect_pass: c.expect_pass,
                    outcome: Some(pass),
                    max_residual: o.residual.filter(|r| r.is_finite()),
                    tol,
                    witnesses: o.witnesses,
                    error: None,
                    wall_ms,
                    details: BTreeMap::from([(c.op.as_str().to_string(), o.details)]),
                }
            }
            Err(e) => CheckReport {
                name: c.name.clone(),
                op: c.op.as_str().into(),
                verdict: Verdict::Error,
                expect_pass: c.expect_pass,
                outcome: None,
                max_residual: None,
                tol,
                witnesses: vec![],
                error: Some(e.to_string()),
                wall_ms,
                details: BTreeMap::new(),
            },
        };
        checks.push(report);
    }
    let verdict = if checks.iter().all(|c| c.verdict == Verdict::Pass) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(Report {
        schema: SCHEMA,
        scenario: s.name.clone(),
        model: model.name.clone(),
        seed,
        tol_scale: opts.tol_scale,
        verdict,
        checks,
    })
}

/// Build the model and run every check. Failing checks are recorded in the
/// report; only an unusable model is an error.
pub fn run(s: &Scenario, opts: &RunOptions) -> Result<Report> {
    let model = build_model(&s.model)?;
    run_checks(s, &model, opts)
}

pub fn run_file(path: impl AsRef<Path>, opts: &RunOptions) -> Result<Report> {
    run(&load_scenario(path)?, opts)
}

/// The scenarios shipped with the crate, by file stem.
pub const BUNDLED: [(&str, &str); 9] = [
    ("counterexample_s1", include_str!("../../../scenarios/counterexample_s1.toml")),
    ("flat_torus", include_str!("../../../scenarios/flat_torus.toml")),
    ("sphere2", include_str!("../../../scenarios/sphere2.toml")),
    ("hyperbolic2", include_str!("../../../scenarios/hyperbolic2.toml")),
    ("affine_line_group", include_str!("../../../scenarios/affine_line_group.toml")),
    ("heisenberg", include_str!("../../../scenarios/heisenberg.toml")),
    ("inline_rotations", include_str!("../../../scenarios/inline_rotations.toml")),
    ("inline_circle", include_str!("../../../scenarios/inline_circle.toml")),
    ("empty", include_str!("../../../scenarios/empty.toml")),
];

pub fn bundled(name: &str) -> Result<Scenario> {
    let (_, src) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| invalid(format!("no bundled scenario `{name}`")))?;
    parse_scenario(src)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_and_column_are_one_based() {
        let src = "a = 1\nbb = [\n  x\n]";
        assert_eq!(line_col(src, 0), (1, 1));
        assert_eq!(line_col(src, 8), (2, 3));
        assert_eq!(line_col(src, 100), (4, 2));
    }

    #[test]
    fn parse_errors_carry_positions() {
        let e = parse_scenario("schema = 1\nname = \"x\"\n[model]\ncatalog = \"sphere2\"\n[[checks]]\nop = \"is_cartan\"\nsamples = -3\n")
            .unwrap_err();
        assert!(matches!(e, Error::Parse { line: 5, .. }), "{e}");
        let e = parse_scenario("schema = 1\nname = \"x\"\n[model]\ncatalog = \"sphere2\"\n[[checks]]\nop = \"frobnicate\"\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 5, column: 1, .. }), "{e}");
        let e = parse_scenario("schema = 1\nname = \"x\"\n[model]\ncatalog = \"sphere2\"\n[[checks]]\nop = \"cocycle\"\ntol = 0\n")
            .unwrap_err();
        assert!(e.to_string().contains("positive"), "{e}");
        let e = parse_scenario("schema = 1\nname = \n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse_scenario("schema = 2\nname = \"x\"\n[model]\ncatalog = \"sphere2\"\n").unwrap_err();
        assert!(e.to_string().contains("schema"));
    }

    #[test]
    fn unknown_catalog_is_its_own_error() {
        let e = parse_scenario("schema = 1\nname = \"x\"\n[model]\ncatalog = \"klein_bottle\"\n").unwrap_err();
        assert_eq!(e, Error::UnknownCatalog("klein_bottle".into()));
    }

    #[test]
    fn params_are_checked_per_op() {
        let e = parse_scenario("schema = 1\nname = \"x\"\n[model]\ncatalog = \"sphere2\"\n[[checks]]\nop = \"cocycle\"\nsamples = 3\n")
            .unwrap_err();
        assert!(e.to_string().contains("does not take"), "{e}");
        let e =
            parse_scenario("schema = 1\nname = \"x\"\n[model]\ncatalog = \"sphere2\"\n[[checks]]\nop = \"classify\"\nexpect = \"flat\"\n")
                .unwrap_err();
        assert!(e.to_string().contains("expect"), "{e}");
    }

    #[test]
    fn bundled_scenarios_parse() {
        for (name, _) in BUNDLED {
            bundled(name).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn empty_scenario_passes() {
        let r = run(&bundled("empty").unwrap(), &RunOptions::default()).unwrap();
        assert!(r.checks.is_empty());
        assert!(r.passed());
    }

    #[test]
    fn check_errors_are_recorded() {
        let s = parse_scenario("schema = 1\nname = \"x\"\n[model]\ncatalog = \"heisenberg\"\n[[checks]]\nop = \"classify\"\n").unwrap();
        let r = run(&s, &RunOptions::default()).unwrap();
        assert_eq!(r.checks[0].verdict, Verdict::Error);
        assert!(
            r.checks[0].error.as_deref().unwrap().contains("metric of dimension"),
            "{:?}",
            r.checks[0].error
        );
        assert!(!r.passed());
    }

    #[test]
    fn expected_failures_pass() {
        let s = parse_scenario(
            "schema = 1\nname = \"x\"\n[model]\ncatalog = \"counterexample_s1\"\n\
             [[checks]]\nop = \"invariant_metric\"\nexpect_pass = false\n",
        )
        .unwrap();
        let r = run(&s, &RunOptions::default()).unwrap();
        assert_eq!(r.checks[0].outcome, Some(false));
        assert!(r.passed());
    }

    #[test]
    fn report_round_trips() {
        let s = parse_scenario(
            "schema = 1\nname = \"x\"\n[model]\ncatalog = \"counterexample_s1\"\n\
             [[checks]]\nop = \"monodromy\"\n[[checks]]\nop = \"compactness\"\nexpect_pass = false\n",
        )
        .unwrap();
        let r = run(&s, &RunOptions::default()).unwrap();
        let back = Report::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json(), r.to_json());
        assert!(r.to_text().contains("monodromy"));
        assert!(Report::from_json("{\"schema\": 1}").is_err());
    }

    #[test]
    fn tol_scale_multiplies_tolerances() {
        let s = bundled("counterexample_s1").unwrap();
        let r = run(
            &s,
            &RunOptions {
                tol_scale: 10.0,
                ..Default::default()
            },
        )
        .unwrap();
        for (c, spec) in r.checks.iter().zip(&s.checks) {
            assert_eq!(c.tol, spec.tol * 10.0);
        }
        assert!(run(
            &s,
            &RunOptions {
                tol_scale: 0.0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn formats_parse() {
        assert_eq!("json".parse::<Format>().unwrap(), Format::Json);
        assert!("yaml".parse::<Format>().is_err());
    }
}
