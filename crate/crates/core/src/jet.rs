//! Forward-mode differentiation with several independent infinitesimals.
//!
//! A [`Jet`] is a truncated polynomial in nilpotent directions
//! `ε_0, ε_1, …` with `ε_i² = 0` (but `ε_i ε_j ≠ 0` for `i ≠ j`). The
//! coefficient stored at bitmask `S` multiplies `Π_{i∈S} ε_i`, so a jet with
//! `k` directions carries `2^k` coefficients and encodes every mixed partial
//! derivative up to order `k` exactly.
//!
//! Nesting derivatives amounts to adding one more direction: [`directional`]
//! always allocates the first direction not used by any of its inputs, so a
//! function that itself differentiates (a Christoffel field computed from a
//! metric, say) can be differentiated again without any bookkeeping by the
//! caller.

use smallvec::{smallvec, SmallVec};
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

#[derive(Clone, PartialEq)]
pub struct Jet {
    c: SmallVec<[f64; 8]>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.c.len() == 1 {
            write!(f, "Jet({})", self.c[0])
        } else {
            write!(f, "Jet{:?}", self.c.as_slice())
        }
    }
}

impl Default for Jet {
    fn default() -> Self {
        Jet::constant(0.0)
    }
}

impl From<f64> for Jet {
    fn from(v: f64) -> Self {
        Jet::constant(v)
    }
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet { c: smallvec![v] }
    }

    /// `v + ε_dir`.
    pub fn variable(v: f64, dir: usize) -> Self {
        let mut j = Jet::constant(v).lifted(dir + 1);
        j.c[1 << dir] = 1.0;
        j
    }

    /// The infinitesimal `ε_dir` itself.
    pub fn epsilon(dir: usize) -> Self {
        Jet::variable(0.0, dir)
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Number of infinitesimal directions this jet carries.
    pub fn order(&self) -> usize {
        self.c.len().trailing_zeros() as usize
    }

    pub fn coef(&self, mask: usize) -> f64 {
        self.c.get(mask).copied().unwrap_or(0.0)
    }

    pub fn coefs(&self) -> &[f64] {
        &self.c
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }

    /// Same jet, viewed with `order` directions (zero-padded). Never truncates.
    pub fn lifted(&self, order: usize) -> Self {
        let len = 1usize << order;
        if len <= self.c.len() {
            return self.clone();
        }
        let mut c = self.c.clone();
        c.resize(len, 0.0);
        Jet { c }
    }

    /// Coefficient of `ε_dir`, as a jet in the remaining directions.
    pub fn eps_part(&self, dir: usize) -> Jet {
        let bit = 1usize << dir;
        if bit >= self.c.len() {
            return Jet::constant(0.0);
        }
        let mut c: SmallVec<[f64; 8]> = smallvec![0.0; self.c.len()];
        for (m, v) in self.c.iter().enumerate() {
            if m & bit != 0 {
                c[m ^ bit] = *v;
            }
        }
        let mut out = Jet { c };
        out.trim();
        out
    }

    /// Drop trailing directions whose coefficients are all zero.
    fn trim(&mut self) {
        while self.c.len() > 1 {
            let half = self.c.len() / 2;
            if self.c[half..].iter().all(|v| *v == 0.0) {
                self.c.truncate(half);
            } else {
                break;
            }
        }
    }

    fn zip_with(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        let len = self.c.len().max(other.c.len());
        let mut c: SmallVec<[f64; 8]> = SmallVec::with_capacity(len);
        for i in 0..len {
            c.push(f(self.coef(i), other.coef(i)));
        }
        Jet { c }
    }

    fn mul_jet(&self, other: &Jet) -> Jet {
        if self.c.len() == 1 {
            return other.scale(self.c[0]);
        }
        if other.c.len() == 1 {
            return self.scale(other.c[0]);
        }
        let len = self.c.len().max(other.c.len());
        let full = len - 1;
        let mut c: SmallVec<[f64; 8]> = smallvec![0.0; len];
        for a in 0..self.c.len() {
            let x = self.c[a];
            if x == 0.0 {
                continue;
            }
            let comp = full & !a;
            // all subsets b of comp, including 0
            let mut b = comp;
            loop {
                if b < other.c.len() {
                    let y = other.c[b];
                    if y != 0.0 {
                        c[a | b] += x * y;
                    }
                }
                if b == 0 {
                    break;
                }
                b = (b - 1) & comp;
            }
        }
        Jet { c }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            c: self.c.iter().map(|v| v * s).collect(),
        }
    }

    /// Apply a scalar function given its derivatives at the real part:
    /// `derivs[j] = f^(j)(value)`, needed for `j ≤ order`.
    fn taylor(&self, derivs: &[f64]) -> Jet {
        let mut out = Jet::constant(derivs[0]);
        if self.c.len() == 1 {
            return out;
        }
        let mut nil = self.clone();
        nil.c[0] = 0.0;
        let mut power = Jet::constant(1.0);
        let mut fact = 1.0;
        for (j, d) in derivs.iter().enumerate().skip(1) {
            power = power.mul_jet(&nil);
            if power.c.iter().all(|v| *v == 0.0) {
                break;
            }
            fact *= j as f64;
            out += power.scale(d / fact);
        }
        out
    }

    fn nderivs(&self) -> usize {
        self.order() + 1
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        self.taylor(&vec![e; self.nderivs()])
    }

    pub fn ln(&self) -> Jet {
        let x = self.value();
        let mut d = vec![x.ln()];
        // f^(j) = (-1)^(j-1) (j-1)! / x^j
        let mut fact = 1.0;
        for j in 1..self.nderivs() {
            if j > 1 {
                fact *= (j - 1) as f64;
            }
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            d.push(sign * fact / x.powi(j as i32));
        }
        self.taylor(&d)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cyc = [s, c, -s, -c];
        let d: Vec<f64> = (0..self.nderivs()).map(|j| cyc[j % 4]).collect();
        self.taylor(&d)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        let cyc = [c, -s, -c, s];
        let d: Vec<f64> = (0..self.nderivs()).map(|j| cyc[j % 4]).collect();
        self.taylor(&d)
    }

    pub fn tan(&self) -> Jet {
        self.sin() / self.cos()
    }

    pub fn sinh(&self) -> Jet {
        let (s, c) = (self.value().sinh(), self.value().cosh());
        let d: Vec<f64> = (0..self.nderivs()).map(|j| if j % 2 == 0 { s } else { c }).collect();
        self.taylor(&d)
    }

    pub fn cosh(&self) -> Jet {
        let (s, c) = (self.value().sinh(), self.value().cosh());
        let d: Vec<f64> = (0..self.nderivs()).map(|j| if j % 2 == 0 { c } else { s }).collect();
        self.taylor(&d)
    }

    pub fn tanh(&self) -> Jet {
        self.sinh() / self.cosh()
    }

    /// `x^p` for real `p`; derivatives are the falling factorials of `p`.
    pub fn powf(&self, p: f64) -> Jet {
        let x = self.value();
        let mut d = Vec::with_capacity(self.nderivs());
        let mut coef = 1.0;
        for j in 0..self.nderivs() {
            d.push(coef * x.powf(p - j as f64));
            coef *= p - j as f64;
        }
        self.taylor(&d)
    }

    pub fn powi(&self, n: i32) -> Jet {
        if n >= 0 {
            let mut out = Jet::constant(1.0);
            let mut base = self.clone();
            let mut k = n as u32;
            while k > 0 {
                if k & 1 == 1 {
                    out = out.mul_jet(&base);
                }
                base = base.mul_jet(&base);
                k >>= 1;
            }
            out
        } else {
            self.powi(-n).recip()
        }
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn recip(&self) -> Jet {
        self.powf(-1.0)
    }
}

macro_rules! jet_binop {
    ($tr:ident, $m:ident, $body:expr) => {
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(&self, &rhs)
            }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(&self, rhs)
            }
        }
        impl $tr<Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(self, &rhs)
            }
        }
        impl $tr<&Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(self, rhs)
            }
        }
        impl $tr<f64> for Jet {
            type Output = Jet;
            fn $m(self, rhs: f64) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(&self, &Jet::constant(rhs))
            }
        }
        impl $tr<f64> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: f64) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(self, &Jet::constant(rhs))
            }
        }
        impl $tr<Jet> for f64 {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(&Jet::constant(self), &rhs)
            }
        }
        impl $tr<&Jet> for f64 {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                let f: fn(&Jet, &Jet) -> Jet = $body;
                f(&Jet::constant(self), rhs)
            }
        }
    };
}

jet_binop!(Add, add, |a, b| a.zip_with(b, |x, y| x + y));
jet_binop!(Sub, sub, |a, b| a.zip_with(b, |x, y| x - y));
jet_binop!(Mul, mul, |a, b| a.mul_jet(b));
jet_binop!(Div, div, |a, b| {
    if b.c.len() == 1 {
        a.scale(1.0 / b.c[0])
    } else {
        a.mul_jet(&b.recip())
    }
});

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl AddAssign<Jet> for Jet {
    fn add_assign(&mut self, rhs: Jet) {
        *self = self.zip_with(&rhs, |x, y| x + y);
    }
}

impl AddAssign<&Jet> for Jet {
    fn add_assign(&mut self, rhs: &Jet) {
        *self = self.zip_with(rhs, |x, y| x + y);
    }
}

impl SubAssign<Jet> for Jet {
    fn sub_assign(&mut self, rhs: Jet) {
        *self = self.zip_with(&rhs, |x, y| x - y);
    }
}

impl SubAssign<&Jet> for Jet {
    fn sub_assign(&mut self, rhs: &Jet) {
        *self = self.zip_with(rhs, |x, y| x - y);
    }
}

impl MulAssign<f64> for Jet {
    fn mul_assign(&mut self, rhs: f64) {
        for v in self.c.iter_mut() {
            *v *= rhs;
        }
    }
}

impl std::iter::Sum for Jet {
    fn sum<I: Iterator<Item = Jet>>(iter: I) -> Jet {
        iter.fold(Jet::constant(0.0), |a, b| a + b)
    }
}

// ---------------------------------------------------------------------------
// vectors of jets

pub fn consts(x: &[f64]) -> Vec<Jet> {
    x.iter().map(|v| Jet::constant(*v)).collect()
}

pub fn values(x: &[Jet]) -> Vec<f64> {
    x.iter().map(Jet::value).collect()
}

/// First direction index not used by any of the given jets.
pub fn free_direction<'a>(groups: impl IntoIterator<Item = &'a [Jet]>) -> usize {
    groups.into_iter().flat_map(|g| g.iter().map(Jet::order)).max().unwrap_or(0)
}

/// Exact directional derivative `Df(x)[v]`, with `x` and `v` possibly jets themselves.
pub fn directional<F>(f: F, x: &[Jet], v: &[Jet]) -> Vec<Jet>
where
    F: FnOnce(&[Jet]) -> Vec<Jet>,
{
    let dir = free_direction([x, v]);
    let eps = Jet::epsilon(dir);
    let shifted: Vec<Jet> = x.iter().zip(v).map(|(xi, vi)| xi + vi * &eps).collect();
    f(&shifted).iter().map(|y| y.eps_part(dir)).collect()
}

/// Exact partial derivative along coordinate axis `axis`.
pub fn partial<F>(f: F, x: &[Jet], axis: usize) -> Vec<Jet>
where
    F: FnOnce(&[Jet]) -> Vec<Jet>,
{
    let dir = free_direction([x]);
    let mut shifted = x.to_vec();
    shifted[axis] = &shifted[axis] + Jet::epsilon(dir);
    f(&shifted).iter().map(|y| y.eps_part(dir)).collect()
}

/// All partial derivatives: `out[axis]` is `∂f/∂x_axis`.
pub fn gradient<F>(f: F, x: &[Jet]) -> Vec<Vec<Jet>>
where
    F: Fn(&[Jet]) -> Vec<Jet>,
{
    (0..x.len()).map(|i| partial(&f, x, i)).collect()
}

// ---------------------------------------------------------------------------
// small dense linear algebra over jets (row-major storage)

pub fn mat_mul(a: &[Jet], b: &[Jet], rows: usize, inner: usize, cols: usize) -> Vec<Jet> {
    let mut out = vec![Jet::constant(0.0); rows * cols];
    for i in 0..rows {
        for k in 0..inner {
            let aik = &a[i * inner + k];
            if aik.coefs().iter().all(|v| *v == 0.0) {
                continue;
            }
            for j in 0..cols {
                out[i * cols + j] += aik * &b[k * cols + j];
            }
        }
    }
    out
}

pub fn mat_vec(a: &[Jet], x: &[Jet], rows: usize, cols: usize) -> Vec<Jet> {
    mat_mul(a, x, rows, cols, 1)
}

pub fn transpose(a: &[Jet], rows: usize, cols: usize) -> Vec<Jet> {
    let mut out = vec![Jet::constant(0.0); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j].clone();
        }
    }
    out
}

/// Inverse of an `n×n` matrix by Gauss–Jordan elimination, pivoting on real parts.
pub fn mat_inverse(a: &[Jet], n: usize) -> Option<Vec<Jet>> {
    let mut m = a.to_vec();
    let mut inv = vec![Jet::constant(0.0); n * n];
    for i in 0..n {
        inv[i * n + i] = Jet::constant(1.0);
    }
    let scale = a.iter().map(|v| v.value().abs()).fold(0.0, f64::max).max(1e-300);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&p, &q| m[p * n + col].value().abs().total_cmp(&m[q * n + col].value().abs()))
            .unwrap();
        if m[piv * n + col].value().abs() <= 1e-14 * scale {
            return None;
        }
        if piv != col {
            for j in 0..n {
                m.swap(piv * n + j, col * n + j);
                inv.swap(piv * n + j, col * n + j);
            }
        }
        let p = m[col * n + col].recip();
        for j in 0..n {
            m[col * n + j] = &m[col * n + j] * &p;
            inv[col * n + j] = &inv[col * n + j] * &p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r * n + col].clone();
            if f.coefs().iter().all(|v| *v == 0.0) {
                continue;
            }
            for j in 0..n {
                let t = &f * &m[col * n + j];
                m[r * n + j] -= t;
                let t = &f * &inv[col * n + j];
                inv[r * n + j] -= t;
            }
        }
    }
    Some(inv)
}

/// Upper-triangular `R` with `Rᵀ R = a` for symmetric positive-definite `a`.
pub fn cholesky_upper(a: &[Jet], n: usize) -> Option<Vec<Jet>> {
    let mut r = vec![Jet::constant(0.0); n * n];
    for j in 0..n {
        let mut d = a[j * n + j].clone();
        for k in 0..j {
            d -= &r[k * n + j] * &r[k * n + j];
        }
        if d.value() <= 0.0 || !d.value().is_finite() {
            return None;
        }
        let djj = d.sqrt();
        let inv = djj.recip();
        for i in (j + 1)..n {
            let mut s = a[j * n + i].clone();
            for k in 0..j {
                s -= &r[k * n + j] * &r[k * n + i];
            }
            r[j * n + i] = s * &inv;
        }
        r[j * n + j] = djj;
    }
    Some(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn first_derivatives_of_elementary_functions() {
        let x = Jet::variable(0.7, 0);
        let cases: Vec<(Jet, f64)> = vec![
            (x.exp(), fd(f64::exp, 0.7)),
            (x.ln(), fd(f64::ln, 0.7)),
            (x.sin(), fd(f64::sin, 0.7)),
            (x.cos(), fd(f64::cos, 0.7)),
            (x.tan(), fd(f64::tan, 0.7)),
            (x.sqrt(), fd(f64::sqrt, 0.7)),
            (x.powf(2.5), fd(|t| t.powf(2.5), 0.7)),
            (x.powi(-3), fd(|t| t.powi(-3), 0.7)),
            (x.sinh(), fd(f64::sinh, 0.7)),
            (x.tanh(), fd(f64::tanh, 0.7)),
        ];
        for (j, expect) in cases {
            assert!((j.coef(1) - expect).abs() < 1e-8, "{j:?} vs {expect}");
        }
    }

    #[test]
    fn polynomial_mixed_partials_are_exact() {
        // f(x, y) = x^3 y^2 + 2xy ; f_xy = 6 x^2 y + 2
        let x = Jet::variable(1.3, 0);
        let y = Jet::variable(-0.4, 1);
        let f = x.powi(3) * y.powi(2) + 2.0 * &x * &y;
        let (xv, yv) = (1.3f64, -0.4f64);
        assert!((f.coef(1) - (3.0 * xv * xv * yv * yv + 2.0 * yv)).abs() < 1e-12);
        assert!((f.coef(2) - (2.0 * xv.powi(3) * yv + 2.0 * xv)).abs() < 1e-12);
        assert!((f.coef(3) - (6.0 * xv * xv * yv + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn repeated_direction_gives_second_derivative() {
        // second derivative of sin at 0.3 via two directions along the same axis
        let x = Jet::constant(0.3) + Jet::epsilon(0) + Jet::epsilon(1);
        let s = x.sin();
        assert!((s.coef(3) + 0.3f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn nested_directional_derivatives_compose() {
        let f = |p: &[Jet]| vec![&p[0] * &p[0] * &p[1]];
        let g = |p: &[Jet]| partial(f, p, 0);
        let x = consts(&[2.0, 3.0]);
        // ∂x(x² y) = 2xy = 12 ; ∂y of that = 2x = 4
        assert!((g(&x)[0].value() - 12.0).abs() < 1e-14);
        let h = partial(g, &x, 1);
        assert!((h[0].value() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn eps_part_of_unrelated_direction_is_zero() {
        let x = Jet::variable(2.0, 0);
        assert_eq!(x.eps_part(3), Jet::constant(0.0));
        assert_eq!(x.eps_part(0), Jet::constant(1.0));
    }

    #[test]
    fn inverse_and_cholesky() {
        let t = Jet::variable(0.5, 0);
        let a = vec![Jet::constant(2.0) + &t, Jet::constant(0.3), Jet::constant(0.3), &t * &t + 1.0];
        let inv = mat_inverse(&a, 2).unwrap();
        let id = mat_mul(&a, &inv, 2, 2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[i * 2 + j].value() - e).abs() < 1e-14);
                assert!(id[i * 2 + j].coef(1).abs() < 1e-14);
            }
        }
        let r = cholesky_upper(&a, 2).unwrap();
        let rt = transpose(&r, 2, 2);
        let back = mat_mul(&rt, &r, 2, 2, 2);
        for k in 0..4 {
            assert!((back[k].value() - a[k].value()).abs() < 1e-14);
            assert!((back[k].coef(1) - a[k].coef(1)).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_matrix_has_no_inverse() {
        let a = consts(&[1.0, 2.0, 2.0, 4.0]);
        assert!(mat_inverse(&a, 2).is_none());
        assert!(cholesky_upper(&consts(&[1.0, 0.0, 0.0, -1.0]), 2).is_none());
    }
}
