//! Deterministic sample points: Halton sequences for overlap checks and a
//! seeded ChaCha stream for random probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Number of points used for every overlap intertwining check.
pub const OVERLAP_SAMPLES: usize = 17;

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= b;
        r += f * (index % base as u64) as f64;
        index /= base as u64;
    }
    r
}

/// `count` Halton points in the box, skipping the origin of the sequence and
/// staying `margin` (relative to each side length) away from the faces.
pub fn halton_points(lower: &[f64], upper: &[f64], count: usize, margin: f64) -> Vec<Vec<f64>> {
    (1..=count as u64)
        .map(|k| {
            lower
                .iter()
                .zip(upper)
                .enumerate()
                .map(|(d, (lo, hi))| {
                    let u = halton(k, PRIMES[d % PRIMES.len()]);
                    let w = hi - lo;
                    lo + w * (margin + (1.0 - 2.0 * margin) * u)
                })
                .collect()
        })
        .collect()
}

/// Seeded random points, uniform in the box shrunk by `margin` on each side.
pub fn random_points(lower: &[f64], upper: &[f64], count: usize, margin: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            lower
                .iter()
                .zip(upper)
                .map(|(lo, hi)| {
                    let w = hi - lo;
                    lo + w * (margin + (1.0 - 2.0 * margin) * rng.random::<f64>())
                })
                .collect()
        })
        .collect()
}

/// Seeded standard-normal-ish vectors (uniform on [-1, 1]); used for random
/// fiber and tangent arguments.
pub fn random_vectors(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Regular grid with `per_axis` nodes on each axis, faces included.
pub fn grid_points(lower: &[f64], upper: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let n = lower.len();
    let total = per_axis.pow(n as u32);
    let step = |d: usize| {
        if per_axis > 1 {
            (upper[d] - lower[d]) / (per_axis - 1) as f64
        } else {
            0.0
        }
    };
    (0..total)
        .map(|mut k| {
            (0..n)
                .map(|d| {
                    let i = k % per_axis;
                    k /= per_axis;
                    lower[d] + step(d) * i as f64
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_first_terms() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert_eq!(halton(3, 2), 0.75);
        assert!((halton(1, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((halton(4, 3) - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn points_stay_inside_and_are_reproducible() {
        let lo = [-1.0, 2.0];
        let hi = [1.0, 3.0];
        for p in halton_points(&lo, &hi, OVERLAP_SAMPLES, 0.05)
            .iter()
            .chain(random_points(&lo, &hi, 50, 0.05, 7).iter())
        {
            assert!(p[0] > -1.0 && p[0] < 1.0 && p[1] > 2.0 && p[1] < 3.0);
        }
        assert_eq!(random_points(&lo, &hi, 5, 0.0, 42), random_points(&lo, &hi, 5, 0.0, 42));
        assert_ne!(random_points(&lo, &hi, 5, 0.0, 42), random_points(&lo, &hi, 5, 0.0, 43));
    }

    #[test]
    fn grid_has_corners() {
        let g = grid_points(&[0.0, 0.0], &[1.0, 2.0], 3);
        assert_eq!(g.len(), 9);
        assert!(g.contains(&vec![1.0, 2.0]));
        assert!(g.contains(&vec![0.5, 1.0]));
    }
}
