//! Residual reports shared by the checking operations.

use serde::{Deserialize, Serialize};

/// A single scalar residual compared against a tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Residual {
    pub fn new(residual: f64, tol: f64) -> Self {
        Residual {
            residual,
            tol,
            pass: residual <= tol,
        }
    }
}

/// Residual of a tensor identity evaluated over sample points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorReport {
    pub op: String,
    pub points: Vec<Vec<f64>>,
    pub per_point: Vec<f64>,
    pub max_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

impl TensorReport {
    pub fn from_samples(op: impl Into<String>, points: Vec<Vec<f64>>, per_point: Vec<f64>, tol: f64) -> Self {
        // NaN never compares <= tol, so a NaN residual fails the check
        let max_residual = per_point
            .iter()
            .copied()
            .fold(0.0f64, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) });
        TensorReport {
            op: op.into(),
            points,
            per_point,
            max_residual,
            tol,
            pass: max_residual <= tol,
        }
    }

    /// Index of the worst sample.
    pub fn worst(&self) -> Option<usize> {
        self.per_point.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_matches_residual() {
        let r = TensorReport::from_samples("x", vec![vec![0.0], vec![1.0]], vec![1e-9, 3e-8], 1e-8);
        assert!(!r.pass);
        assert_eq!(r.max_residual, 3e-8);
        assert_eq!(r.worst(), Some(1));
        let r = TensorReport::from_samples("x", vec![vec![0.0]], vec![f64::NAN], 1.0);
        assert!(!r.pass);
        assert!(TensorReport::from_samples("x", vec![], vec![], 0.0).pass);
    }
}
