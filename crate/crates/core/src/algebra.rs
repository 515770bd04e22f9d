//! Finite-dimensional Lie algebras given by structure constants, their matrix
//! realizations, and the exponential/logarithm used by the development code.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::Residual;

pub const MAX_DIM: usize = 32;
pub const DEFAULT_TOL: f64 = 1e-9;

/// `[e_i, e_j] = Σ_k c[i][j][k] e_k`, stored densely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LieAlgebra {
    dim: usize,
    c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl LieAlgebra {
    /// Validates exact antisymmetry and the Jacobi identity at [`DEFAULT_TOL`].
    pub fn new(dim: usize, c: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(dim, c, DEFAULT_TOL)
    }

    pub fn with_tolerance(dim: usize, c: Vec<f64>, tol: f64) -> Result<Self> {
        let a = Self::antisymmetric(dim, c)?;
        let rep = a.check_jacobi(tol);
        if !rep.pass {
            return Err(Error::Jacobi {
                residual: rep.residual,
                tol,
            });
        }
        Ok(a)
    }

    /// Only antisymmetry is enforced; use [`LieAlgebra::check_jacobi`] to
    /// validate the rest. Needed for brackets read off numerical data.
    pub fn antisymmetric(dim: usize, c: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Invalid(format!("algebra dimension {dim} outside 1..={MAX_DIM}")));
        }
        if c.len() != dim * dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim * dim,
                found: c.len(),
            });
        }
        if let Some(bad) = c.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("structure constant {bad}")));
        }
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    if c[(i * dim + j) * dim + k] != -c[(j * dim + i) * dim + k] {
                        return Err(Error::NotAntisymmetric { i, j, k });
                    }
                }
            }
        }
        Ok(LieAlgebra { dim, c, labels: None })
    }

    /// Build from the brackets `[e_i, e_j]` with `i < j`; the rest follows by antisymmetry.
    pub fn from_brackets(dim: usize, brackets: &[(usize, usize, usize, f64)]) -> Result<Self> {
        let mut c = vec![0.0; dim * dim * dim];
        for &(i, j, k, v) in brackets {
            if i >= dim || j >= dim || k >= dim {
                return Err(Error::Invalid(format!("bracket index ({i},{j},{k}) out of range")));
            }
            if i == j {
                return Err(Error::NotAntisymmetric { i, j, k });
            }
            c[(i * dim + j) * dim + k] += v;
            c[(j * dim + i) * dim + k] -= v;
        }
        Self::new(dim, c)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        if labels.len() == self.dim {
            self.labels = Some(labels);
        }
        self
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn abelian(dim: usize) -> Self {
        Self::new(dim, vec![0.0; dim * dim * dim]).expect("abelian algebra is valid")
    }

    /// `[e_i, e_j] = ε_ijk e_k`.
    pub fn so3() -> Self {
        Self::from_brackets(3, &[(0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0)]).expect("so(3) is valid")
    }

    /// Lie algebra of the `ax+b` group: `[e_0, e_1] = e_1`.
    pub fn affine_line() -> Self {
        Self::from_brackets(2, &[(0, 1, 1, 1.0)]).expect("aff(1) is valid")
    }

    /// `[e_0, e_1] = e_2`.
    pub fn heisenberg() -> Self {
        Self::from_brackets(3, &[(0, 1, 2, 1.0)]).expect("heisenberg is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn c(&self, i: usize, j: usize, k: usize) -> f64 {
        self.c[(i * self.dim + j) * self.dim + k]
    }

    pub fn structure_constants(&self) -> &[f64] {
        &self.c
    }

    pub fn bracket(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim;
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: y.len(),
            });
        }
        let mut out = vec![0.0; n];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, &yj) in y.iter().enumerate() {
                if yj == 0.0 {
                    continue;
                }
                for (k, o) in out.iter_mut().enumerate() {
                    *o += xi * yj * self.c(i, j, k);
                }
            }
        }
        Ok(out)
    }

    fn basis_vector(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[i] = 1.0;
        v
    }

    /// Max over basis triples of `|[[x,y],z] + [[y,z],x] + [[z,x],y]|`.
    pub fn check_jacobi(&self, tol: f64) -> Residual {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut s = 0.0f64;
                    for out in 0..n {
                        let mut v = 0.0;
                        for l in 0..n {
                            v += self.c(i, j, l) * self.c(l, k, out)
                                + self.c(j, k, l) * self.c(l, i, out)
                                + self.c(k, i, l) * self.c(l, j, out);
                        }
                        s = s.max(v.abs());
                    }
                    worst = worst.max(s);
                }
            }
        }
        Residual::new(worst, tol)
    }

    /// Matrix of `ad(e_i)`: column `j` is `[e_i, e_j]`.
    pub fn ad(&self, i: usize) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_fn(n, n, |k, j| self.c(i, j, k))
    }

    /// `B(e_i, e_j) = tr(ad e_i ∘ ad e_j)`.
    pub fn killing_form(&self) -> DMatrix<f64> {
        let n = self.dim;
        let ads: Vec<_> = (0..n).map(|i| self.ad(i)).collect();
        DMatrix::from_fn(n, n, |i, j| (&ads[i] * &ads[j]).trace())
    }

    pub fn is_abelian(&self, tol: f64) -> bool {
        self.c.iter().all(|v| v.abs() <= tol)
    }

    /// Largest deviation between two tables of structure constants.
    pub fn distance(&self, other: &LieAlgebra) -> f64 {
        if self.dim != other.dim {
            return f64::INFINITY;
        }
        self.c.iter().zip(&other.c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Structure constants in a new basis: `f_a = Σ_i P[i][a] e_i`.
    pub fn change_basis(&self, p: &DMatrix<f64>) -> Result<LieAlgebra> {
        let n = self.dim;
        let pinv = p.clone().try_inverse().ok_or_else(|| Error::Singular("change of basis".into()))?;
        let mut c = vec![0.0; n * n * n];
        for a in 0..n {
            for b in 0..n {
                let x: Vec<f64> = p.column(a).iter().copied().collect();
                let y: Vec<f64> = p.column(b).iter().copied().collect();
                let br = DVector::from_vec(self.bracket(&x, &y)?);
                let coords = &pinv * br;
                for k in 0..n {
                    c[(a * n + b) * n + k] = coords[k];
                }
            }
        }
        antisymmetrize(n, &mut c);
        LieAlgebra::antisymmetric(n, c)
    }
}

/// Replace `c[i][j][·]` by `(c[i][j][·] - c[j][i][·]) / 2`, which makes the
/// table exactly antisymmetric.
pub fn antisymmetrize(n: usize, c: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let a = c[(i * n + j) * n + k];
                let b = c[(j * n + i) * n + k];
                let v = 0.5 * (a - b);
                c[(i * n + j) * n + k] = v;
                c[(j * n + i) * n + k] = -v;
            }
            if i == j {
                for k in 0..n {
                    c[(i * n + i) * n + k] = 0.0;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// matrix realizations

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRealization {
    algebra: LieAlgebra,
    matrix_dim: usize,
    generators: Vec<DMatrix<f64>>,
    gram_inv: DMatrix<f64>,
}

impl MatrixRealization {
    /// Checks `[G_i, G_j] = Σ_k c[i][j][k] G_k` to `tol`.
    pub fn new(algebra: LieAlgebra, generators: Vec<DMatrix<f64>>, tol: f64) -> Result<Self> {
        if generators.len() != algebra.dim() {
            return Err(Error::DimensionMismatch {
                expected: algebra.dim(),
                found: generators.len(),
            });
        }
        let m = generators[0].nrows();
        for g in &generators {
            if g.nrows() != m || g.ncols() != m {
                return Err(Error::Invalid("generators must be square and of equal size".into()));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("generator entry".into()));
            }
        }
        let n = algebra.dim();
        let gram = DMatrix::from_fn(n, n, |i, j| generators[i].dot(&generators[j]));
        let gram_inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Singular("generators are linearly dependent".into()))?;
        let r = MatrixRealization {
            algebra,
            matrix_dim: m,
            generators,
            gram_inv,
        };
        let res = r.closure_residual();
        if res > tol {
            return Err(Error::Inconsistent(format!(
                "commutators do not match structure constants (residual {res:e})"
            )));
        }
        Ok(r)
    }

    pub fn closure_residual(&self) -> f64 {
        let n = self.algebra.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let comm = &self.generators[i] * &self.generators[j] - &self.generators[j] * &self.generators[i];
                let mut rhs = DMatrix::zeros(self.matrix_dim, self.matrix_dim);
                for k in 0..n {
                    rhs += &self.generators[k] * self.algebra.c(i, j, k);
                }
                worst = worst.max((comm - rhs).amax());
            }
        }
        worst
    }

    pub fn algebra(&self) -> &LieAlgebra {
        &self.algebra
    }

    pub fn matrix_dim(&self) -> usize {
        self.matrix_dim
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    /// `Σ ξ_i G_i`.
    pub fn element(&self, xi: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.matrix_dim, self.matrix_dim);
        for (x, g) in xi.iter().zip(&self.generators) {
            if *x != 0.0 {
                m += g * *x;
            }
        }
        m
    }

    /// Least-squares coordinates of `m` in the generator span, and the
    /// Frobenius norm of what is left over.
    pub fn project(&self, m: &DMatrix<f64>) -> (Vec<f64>, f64) {
        let n = self.algebra.dim();
        let rhs = DVector::from_fn(n, |i, _| self.generators[i].dot(m));
        let coords = &self.gram_inv * rhs;
        let back = self.element(coords.as_slice());
        let resid = (m - back).norm();
        (coords.iter().copied().collect(), resid)
    }

    pub fn exp(&self, xi: &[f64], t: f64) -> Result<DMatrix<f64>> {
        if xi.len() != self.algebra.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.algebra.dim(),
                found: xi.len(),
            });
        }
        if !t.is_finite() || xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("exp_matrix argument".into()));
        }
        let out = expm(&(self.element(xi) * t));
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("exp_matrix overflow".into()));
        }
        Ok(out)
    }

    /// Principal logarithm projected onto the generator span.
    pub fn log(&self, g: &DMatrix<f64>, span_tol: f64) -> Result<LogResult> {
        let l = log_matrix(g)?;
        let (coords, residual) = self.project(&l);
        if residual > span_tol {
            return Err(Error::NotInSpan { residual });
        }
        Ok(LogResult { coords, residual })
    }

    /// Matrix of `Ad_g` in the generator basis: column `j` holds the
    /// coordinates of `g G_j g⁻¹`.
    pub fn adjoint(&self, g: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
        let ginv = g.clone().try_inverse().ok_or_else(|| Error::Singular("group element".into()))?;
        let n = self.algebra.dim();
        let mut out = DMatrix::zeros(n, n);
        let mut worst = 0.0f64;
        for j in 0..n {
            let conj = g * &self.generators[j] * &ginv;
            let (coords, r) = self.project(&conj);
            worst = worst.max(r);
            for i in 0..n {
                out[(i, j)] = coords[i];
            }
        }
        Ok((out, worst))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogResult {
    pub coords: Vec<f64>,
    pub residual: f64,
}

/// Realization of so(3) by rotation generators, `(G_i)_{jk} = -ε_ijk`.
pub fn so3_realization() -> MatrixRealization {
    let mut gens = Vec::new();
    for i in 0..3 {
        let mut g = DMatrix::zeros(3, 3);
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        g[(j, k)] = -1.0;
        g[(k, j)] = 1.0;
        gens.push(g);
    }
    MatrixRealization::new(LieAlgebra::so3(), gens, DEFAULT_TOL).expect("so(3) realization")
}

/// Translations of `ℝⁿ` as `(n+1)×(n+1)` affine matrices.
pub fn translation_realization(n: usize) -> MatrixRealization {
    let gens = (0..n)
        .map(|i| {
            let mut g = DMatrix::zeros(n + 1, n + 1);
            g[(i, n)] = 1.0;
            g
        })
        .collect();
    MatrixRealization::new(LieAlgebra::abelian(n), gens, DEFAULT_TOL).expect("translations")
}

/// The `ax+b` algebra as 2×2 matrices: scaling `[[1,0],[0,0]]`, translation `[[0,1],[0,0]]`.
pub fn affine_line_realization() -> MatrixRealization {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    MatrixRealization::new(LieAlgebra::affine_line(), vec![a, b], DEFAULT_TOL).expect("aff(1)")
}

pub fn heisenberg_realization() -> MatrixRealization {
    let e = |r: usize, c: usize| {
        let mut m = DMatrix::zeros(3, 3);
        m[(r, c)] = 1.0;
        m
    };
    MatrixRealization::new(LieAlgebra::heisenberg(), vec![e(0, 1), e(1, 2), e(0, 2)], DEFAULT_TOL).expect("heisenberg")
}

/// The 2-torus algebra as two commuting rotation blocks in 4×4 matrices.
pub fn torus_realization() -> MatrixRealization {
    let mut a = DMatrix::zeros(4, 4);
    a[(0, 1)] = -1.0;
    a[(1, 0)] = 1.0;
    let mut b = DMatrix::zeros(4, 4);
    b[(2, 3)] = -1.0;
    b[(3, 2)] = 1.0;
    MatrixRealization::new(LieAlgebra::abelian(2), vec![a, b], DEFAULT_TOL).expect("torus")
}

// ---------------------------------------------------------------------------
// matrix exponential and logarithm

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Scaling and squaring with a Taylor series on the scaled matrix.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = one_norm(a);
    let mut s = 0i32;
    if norm > 0.25 {
        s = (norm / 0.25).log2().ceil() as i32;
    }
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..40 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if one_norm(&term) <= f64::EPSILON * one_norm(&sum) {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Spectral radius of `g - I`, from the real Schur form.
pub fn spectral_radius_from_identity(g: &DMatrix<f64>) -> Result<f64> {
    let n = g.nrows();
    let m = g - DMatrix::<f64>::identity(n, n);
    let schur = nalgebra::linalg::Schur::try_new(m, 1e-14, 10_000)
        .ok_or_else(|| Error::Singular("eigenvalue iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Principal logarithm for `g` with `ρ(g − I) < 1` (inverse scaling and squaring).
pub fn log_matrix(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log_matrix argument".into()));
    }
    let radius = spectral_radius_from_identity(g)?;
    if radius >= 1.0 {
        return Err(Error::LogOutsideRegion { radius });
    }
    log_by_roots(g)
}

/// Principal logarithm via repeated square roots; no region guard. The
/// caller is responsible for `g` having no eigenvalues on the closed
/// negative real axis.
pub fn log_by_roots(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut a = g.clone();
    let mut k = 0;
    while one_norm(&(&a - &id)) > 0.2 {
        a = sqrtm(&a)?;
        k += 1;
        if k > 60 {
            return Err(Error::Inconsistent("matrix square roots did not approach identity".into()));
        }
    }
    let x = &a - &id;
    let mut term = x.clone();
    let mut sum = x.clone();
    for j in 2..200 {
        term = &term * &x;
        let t = &term / j as f64;
        if j % 2 == 0 {
            sum -= &t;
        } else {
            sum += &t;
        }
        if one_norm(&t) <= f64::EPSILON * one_norm(&sum).max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(sum * 2f64.powi(k))
}

/// Principal square root by the Denman–Beavers iteration.
pub fn sqrtm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().ok_or_else(|| Error::Singular("sqrtm".into()))?;
        let zi = z.clone().try_inverse().ok_or_else(|| Error::Singular("sqrtm".into()))?;
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let delta = one_norm(&(&y_next - &y));
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * one_norm(&y) {
            return Ok(y);
        }
    }
    Err(Error::Inconsistent("matrix square root did not converge".into()))
}

// ---------------------------------------------------------------------------
// subalgebras and maps

#[derive(Debug, Clone, PartialEq)]
pub struct Subalgebra {
    parent: LieAlgebra,
    basis: Vec<DVector<f64>>,
    orthonormal: Vec<DVector<f64>>,
}

impl Subalgebra {
    pub fn new(parent: LieAlgebra, basis: Vec<Vec<f64>>, tol: f64) -> Result<Self> {
        let n = parent.dim();
        let mut vecs = Vec::new();
        for b in basis {
            if b.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: b.len(),
                });
            }
            vecs.push(DVector::from_vec(b));
        }
        let orthonormal = gram_schmidt(&vecs, 1e-12);
        if orthonormal.len() != vecs.len() {
            return Err(Error::Invalid("subalgebra basis is linearly dependent".into()));
        }
        let s = Subalgebra {
            parent,
            basis: vecs,
            orthonormal,
        };
        let r = s.closure_residual();
        if r > tol {
            return Err(Error::Inconsistent(format!(
                "subspace is not closed under the bracket (residual {r:e})"
            )));
        }
        Ok(s)
    }

    pub fn zero(parent: LieAlgebra) -> Self {
        Subalgebra {
            parent,
            basis: vec![],
            orthonormal: vec![],
        }
    }

    pub fn closure_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in &self.basis {
            for b in &self.basis {
                let br = self.parent.bracket(a.as_slice(), b.as_slice()).expect("dimensions checked");
                worst = worst.max(self.orthogonal_part(&br).norm());
            }
        }
        worst
    }

    pub fn parent(&self) -> &LieAlgebra {
        &self.parent
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis
    }

    pub fn orthonormal_basis(&self) -> &[DVector<f64>] {
        &self.orthonormal
    }

    /// Component of `v` orthogonal to the subalgebra.
    pub fn orthogonal_part(&self, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::from_column_slice(v);
        for q in &self.orthonormal {
            let d = q.dot(&out);
            out -= q * d;
        }
        out
    }
}

pub fn gram_schmidt(vecs: &[DVector<f64>], tol: f64) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for v in vecs {
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &out {
                let d = q.dot(&w);
                w -= q * d;
            }
        }
        let n = w.norm();
        if n > tol * v.norm().max(1.0) {
            out.push(w / n);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraMap {
    pub source: LieAlgebra,
    pub target: LieAlgebra,
    pub matrix: DMatrix<f64>,
}

impl AlgebraMap {
    pub fn new(source: LieAlgebra, target: LieAlgebra, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != target.dim() || matrix.ncols() != source.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim() * source.dim(),
                found: matrix.nrows() * matrix.ncols(),
            });
        }
        Ok(AlgebraMap { source, target, matrix })
    }

    pub fn identity(a: &LieAlgebra) -> Self {
        let n = a.dim();
        AlgebraMap {
            source: a.clone(),
            target: a.clone(),
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(x)).iter().copied().collect()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &AlgebraMap) -> Result<AlgebraMap> {
        if inner.target.dim() != self.source.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.source.dim(),
                found: inner.target.dim(),
            });
        }
        AlgebraMap::new(inner.source.clone(), self.target.clone(), &self.matrix * &inner.matrix)
    }

    pub fn inverse(&self) -> Result<AlgebraMap> {
        let inv = self
            .matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("algebra map".into()))?;
        AlgebraMap::new(self.target.clone(), self.source.clone(), inv)
    }

    /// `max_{i,j} |M[e_i, e_j] − [M e_i, M e_j]|`, comparing against the
    /// bracket of `self.source` on both sides.
    pub fn is_automorphism(&self, tol: f64) -> Result<Residual> {
        is_automorphism(&self.source, self, tol)
    }
}

pub fn is_automorphism(a: &LieAlgebra, m: &AlgebraMap, tol: f64) -> Result<Residual> {
    let n = a.dim();
    if m.matrix.nrows() != n || m.matrix.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            found: m.matrix.nrows() * m.matrix.ncols(),
        });
    }
    let sv = m.matrix.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smax == 0.0 || smin <= 1e-12 * smax {
        return Err(Error::Singular("automorphism candidate".into()));
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let ei = a.basis_vector(i);
            let ej = a.basis_vector(j);
            let lhs = m.apply(&a.bracket(&ei, &ej)?);
            let rhs = a.bracket(&m.apply(&ei), &m.apply(&ej))?;
            for (l, r) in lhs.iter().zip(&rhs) {
                worst = worst.max((l - r).abs());
            }
        }
    }
    Ok(Residual::new(worst, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn brackets() {
        let ab = LieAlgebra::abelian(2);
        assert_eq!(ab.bracket(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        let so3 = LieAlgebra::so3();
        assert_eq!(so3.bracket(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        let x = [0.3, -1.2, 2.0];
        assert_eq!(so3.bracket(&x, &x).unwrap(), vec![0.0; 3]);
        assert!(matches!(
            so3.bracket(&[1.0], &x),
            Err(Error::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn so3_structure_constants_match_rotation_commutators() {
        // independent oracle: the 3×3 generators, commuted by hand
        let r = so3_realization();
        let g = r.generators();
        let comm = &g[0] * &g[1] - &g[1] * &g[0];
        assert!((comm - &g[2]).amax() < 1e-15);
        assert!(r.closure_residual() < 1e-15);
    }

    #[test]
    fn jacobi_checks() {
        assert!(LieAlgebra::so3().check_jacobi(1e-12).residual == 0.0);
        assert_eq!(LieAlgebra::abelian(4).check_jacobi(0.0).residual, 0.0);
        // [e0,e1] = e2 + 0.1 e0 breaks Jacobi with residual 0.1
        let mut c = LieAlgebra::so3().structure_constants().to_vec();
        c[1 * 3] += 0.1; // c[0][1][0]
        c[3 * 3] -= 0.1; // c[1][0][0]
        let bad = LieAlgebra::antisymmetric(3, c.clone()).unwrap();
        let rep = bad.check_jacobi(1e-9);
        assert!(!rep.pass);
        assert!(rep.residual > 0.01);
        assert!((rep.residual - 0.1).abs() < 1e-12);
        assert!(matches!(LieAlgebra::new(3, c), Err(Error::Jacobi { .. })));
    }

    #[test]
    fn scaling_one_bracket_of_so3_keeps_jacobi() {
        // every 3-dim algebra with [e1,e2]=a e3, [e2,e3]=b e1, [e3,e1]=c e2 is Lie
        let a = LieAlgebra::from_brackets(3, &[(0, 1, 2, 1.1), (1, 2, 0, 1.0), (2, 0, 1, 1.0)]).unwrap();
        assert!(a.check_jacobi(1e-12).pass);
    }

    #[test]
    fn construction_rejects_broken_antisymmetry() {
        let mut c = LieAlgebra::so3().structure_constants().to_vec();
        c[(0 * 3 + 1) * 3 + 2] += 0.1;
        assert!(matches!(LieAlgebra::new(3, c), Err(Error::NotAntisymmetric { .. })));
        assert!(LieAlgebra::new(0, vec![]).is_err());
    }

    #[test]
    fn exponential_examples() {
        let r = so3_realization();
        let id = r.exp(&[0.3, 0.2, 0.1], 0.0).unwrap();
        assert!((id - DMatrix::<f64>::identity(3, 3)).amax() == 0.0);
        // Rodrigues: rotation by π/2 about z sends x to y
        let rz = r.exp(&[0.0, 0.0, 1.0], PI / 2.0).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((rz - expect).amax() < 1e-14);
        let one = MatrixRealization::new(LieAlgebra::abelian(1), vec![DMatrix::from_element(1, 1, 1.0)], 1e-12).unwrap();
        let e = one.exp(&[1.0], 2.0 * PI).unwrap();
        assert!((e[(0, 0)] / (2.0 * PI).exp() - 1.0).abs() < 1e-14);
        assert!(one.exp(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn logarithm_examples() {
        let r = so3_realization();
        let l = r.log(&DMatrix::identity(3, 3), 1e-9).unwrap();
        assert_eq!(l.coords, vec![0.0; 3]);
        let xi = [0.1, -0.2, 0.15];
        let g = r.exp(&xi, 1.0).unwrap();
        let l = r.log(&g, 1e-9).unwrap();
        for (a, b) in l.coords.iter().zip(&xi) {
            assert!((a - b).abs() < 1e-9);
        }
        let flip = r.exp(&[0.0, 0.0, 1.0], PI).unwrap();
        assert!(matches!(r.log(&flip, 1e-9), Err(Error::LogOutsideRegion { .. })));
    }

    #[test]
    fn log_detects_elements_outside_span() {
        let r = so3_realization();
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.1, 1.0, 1.0]));
        assert!(matches!(r.log(&g, 1e-9), Err(Error::NotInSpan { .. })));
    }

    #[test]
    fn log_handles_non_diagonalizable_elements() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let l = log_matrix(&g).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.0, 0.0]);
        assert!((l - expect).amax() < 1e-14);
    }

    #[test]
    fn automorphism_examples() {
        let so3 = LieAlgebra::so3();
        let id = AlgebraMap::identity(&so3);
        let r = id.is_automorphism(1e-12).unwrap();
        assert!(r.pass && r.residual == 0.0);

        let line = LieAlgebra::abelian(1);
        let m = AlgebraMap::new(line.clone(), line, DMatrix::from_element(1, 1, (2.0 * PI).exp())).unwrap();
        assert!(m.is_automorphism(1e-12).unwrap().pass);

        let swap = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let sm = AlgebraMap::new(so3.clone(), so3.clone(), swap).unwrap();
        let r = sm.is_automorphism(1e-9).unwrap();
        assert!(!r.pass);
        assert!((r.residual - 2.0).abs() < 1e-12);

        let sing = AlgebraMap::new(so3.clone(), so3, DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(sing.is_automorphism(1e-9), Err(Error::Singular(_))));
    }

    #[test]
    fn adjoint_of_rotation_is_the_rotation() {
        let r = so3_realization();
        let g = r.exp(&[0.2, -0.5, 0.9], 1.0).unwrap();
        let (ad, resid) = r.adjoint(&g).unwrap();
        assert!(resid < 1e-12);
        assert!((ad - g).amax() < 1e-12);
    }

    #[test]
    fn subalgebras() {
        let so3 = LieAlgebra::so3();
        let h = Subalgebra::new(so3.clone(), vec![vec![0.0, 0.0, 2.0]], 1e-12).unwrap();
        assert_eq!(h.dim(), 1);
        assert!(h.orthogonal_part(&[0.0, 0.0, 5.0]).norm() < 1e-15);
        assert!(Subalgebra::new(so3, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], 1e-9).is_err());
    }

    #[test]
    fn killing_form_signatures() {
        let k = LieAlgebra::so3().killing_form();
        assert!((k - DMatrix::<f64>::identity(3, 3) * -2.0).amax() < 1e-14);
        assert_eq!(LieAlgebra::heisenberg().killing_form().amax(), 0.0);
    }

    proptest! {
        #[test]
        fn exp_is_a_one_parameter_group(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            s in -10.0f64..10.0, t in -10.0f64..10.0,
        ) {
            let r = so3_realization();
            let xi = [x, y, z];
            let lhs = r.exp(&xi, s).unwrap() * r.exp(&xi, t).unwrap();
            let rhs = r.exp(&xi, s + t).unwrap();
            prop_assert!((lhs - rhs).amax() < 1e-9);
        }

        #[test]
        fn log_inverts_exp_on_small_vectors(
            x in -0.28f64..0.28, y in -0.28f64..0.28, z in -0.28f64..0.28,
        ) {
            let r = so3_realization();
            let xi = [x, y, z];
            prop_assume!(x * x + y * y + z * z <= 0.25);
            let back = r.log(&r.exp(&xi, 1.0).unwrap(), 1e-9).unwrap();
            for (a, b) in back.coords.iter().zip(&xi) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }

        #[test]
        fn composition_of_automorphisms_is_an_automorphism(
            a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, d in -3.0f64..3.0,
        ) {
            let r = so3_realization();
            let so3 = LieAlgebra::so3();
            let m1 = AlgebraMap::new(so3.clone(), so3.clone(), r.exp(&[a, b, 0.0], 1.0).unwrap()).unwrap();
            let m2 = AlgebraMap::new(so3.clone(), so3.clone(), r.exp(&[0.0, c, d], 1.0).unwrap()).unwrap();
            prop_assert!(m1.is_automorphism(1e-9).unwrap().pass);
            prop_assert!(m2.is_automorphism(1e-9).unwrap().pass);
            prop_assert!(m1.compose(&m2).unwrap().is_automorphism(1e-9).unwrap().pass);
        }
    }
}
