//! Adaptive Dormand–Prince 5(4) integration with blow-up detection, plus a
//! fixed-step classical RK4 used as a cross-check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub atol: f64,
    pub rtol: f64,
    /// Defaults to 1/64 of the integration span.
    pub max_step: Option<f64>,
    pub min_step: f64,
    /// State or derivative magnitude treated as blow-up.
    pub blowup: f64,
    pub max_steps: usize,
    /// Width to which a blow-up/escape time is bracketed.
    pub time_resolution: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            atol: 1e-9,
            rtol: 1e-9,
            max_step: None,
            min_step: 1e-12,
            blowup: 1e6,
            max_steps: 500_000,
            time_resolution: 1e-3,
        }
    }
}

impl OdeOptions {
    pub fn tight() -> Self {
        OdeOptions {
            atol: 1e-12,
            rtol: 1e-12,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Status {
    Completed,
    /// State or derivative exceeded the blow-up threshold.
    BlowUp {
        t_star: f64,
    },
    /// Step size fell below the minimum.
    StepCollapse {
        t_star: f64,
    },
    /// The right-hand side could not be evaluated (typically: left the chart).
    Escaped {
        t_star: f64,
        reason: String,
    },
}

impl Status {
    pub fn t_star(&self) -> Option<f64> {
        match self {
            Status::Completed => None,
            Status::BlowUp { t_star } | Status::StepCollapse { t_star } | Status::Escaped { t_star, .. } => Some(*t_star),
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, Status::Completed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub status: Status,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.y.last().expect("trajectory holds the initial state")
    }

    pub fn t_last(&self) -> f64 {
        *self.t.last().expect("trajectory holds the initial state")
    }

    /// The final state, or an error if integration stopped early.
    pub fn into_final(self) -> Result<Vec<f64>> {
        match self.status {
            Status::Completed => Ok(self.y.into_iter().last().expect("nonempty")),
            s => Err(Error::Ode(format!("integration stopped early: {s:?}"))),
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| if b.is_nan() { f64::NAN } else { a.max(b.abs()) })
}

enum Failure {
    BlowUp,
    Collapse,
    Rhs(String),
}

// Dormand–Prince tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// Never returns an error for blow-up or escape; those are reported in the
/// trajectory status with the failure time bracketed to
/// `opts.time_resolution`.
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions) -> Trajectory
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let (traj, failure) = run(&mut f, t0, y0, t1, opts);
    let Some((fail, t_bad)) = failure else {
        return traj;
    };
    let mut t_good = traj.t_last();
    let mut y_good = traj.last().to_vec();
    let mut t_bad = t_bad;
    let mut kind = fail;
    let mut traj = traj;
    // bisect the failure time
    while (t_bad - t_good).abs() > opts.time_resolution {
        let mid = 0.5 * (t_good + t_bad);
        let (sub, sub_fail) = run(&mut f, t_good, &y_good, mid, opts);
        match sub_fail {
            None => {
                traj.t.extend_from_slice(&sub.t[1..]);
                traj.y.extend(sub.y.into_iter().skip(1));
                t_good = mid;
                y_good = traj.last().to_vec();
            }
            Some((k, tb)) => {
                traj.t.extend_from_slice(&sub.t[1..]);
                traj.y.extend(sub.y.into_iter().skip(1));
                t_good = traj.t_last();
                y_good = traj.last().to_vec();
                t_bad = tb;
                kind = k;
            }
        }
    }
    let t_star = 0.5 * (t_good + t_bad);
    traj.status = match kind {
        Failure::BlowUp => Status::BlowUp { t_star },
        Failure::Collapse => Status::StepCollapse { t_star },
        Failure::Rhs(reason) => Status::Escaped { t_star, reason },
    };
    traj
}

fn run<F>(f: &mut F, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions) -> (Trajectory, Option<(Failure, f64)>)
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let mut traj = Trajectory {
        t: vec![t0],
        y: vec![y0.to_vec()],
        status: Status::Completed,
    };
    let span = t1 - t0;
    if span == 0.0 {
        return (traj, None);
    }
    let dir = span.signum();
    let hmax = opts.max_step.unwrap_or(span.abs() / 64.0).max(opts.min_step);
    let mut h = (hmax / 16.0).max(opts.min_step);
    let mut t = t0;
    let mut y = y0.to_vec();
    let n = y.len();

    let mut k1 = match f(t, &y) {
        Ok(v) => v,
        Err(e) => return (traj, Some((Failure::Rhs(e.to_string()), t0))),
    };
    if !(inf_norm(&y) <= opts.blowup && inf_norm(&k1) <= opts.blowup) {
        return (traj, Some((Failure::BlowUp, t0)));
    }
    let mut k = vec![vec![0.0; n]; 7];
    let mut steps = 0usize;
    while (t1 - t) * dir > 0.0 {
        steps += 1;
        if steps > opts.max_steps {
            return (traj, Some((Failure::Collapse, t)));
        }
        let last = (t1 - t).abs() <= h;
        let hs = if last { t1 - t } else { dir * h };
        k[0].clone_from(&k1);
        let mut stage_fail = None;
        let mut tmp = vec![0.0; n];
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += hs * A[s][j] * kj[i];
                }
                tmp[i] = acc;
            }
            match f(t + C[s] * hs, &tmp) {
                Ok(v) if v.iter().all(|x| x.is_finite()) => k[s] = v,
                Ok(_) => {
                    stage_fail = Some(Failure::BlowUp);
                    break;
                }
                Err(e) => {
                    stage_fail = Some(Failure::Rhs(e.to_string()));
                    break;
                }
            }
        }
        if let Some(fail) = stage_fail {
            // shrink and retry; a failing right-hand side close to `t` means escape
            h *= 0.25;
            if h < opts.min_step {
                let fail = match fail {
                    Failure::Rhs(r) => Failure::Rhs(r),
                    _ => Failure::Collapse,
                };
                return (traj, Some((fail, t + dir * 4.0 * h)));
            }
            continue;
        }
        let mut y5 = vec![0.0; n];
        let mut err = 0.0;
        for i in 0..n {
            let mut s5 = 0.0;
            let mut s4 = 0.0;
            for s in 0..7 {
                s5 += B5[s] * k[s][i];
                s4 += B4[s] * k[s][i];
            }
            y5[i] = y[i] + hs * s5;
            let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            let e = hs * (s5 - s4) / sc;
            err += e * e;
        }
        let err = (err / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            h *= 0.25;
            if h < opts.min_step {
                return (traj, Some((Failure::Collapse, t)));
            }
            continue;
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + hs };
            y = y5;
            // FSAL: the seventh stage is f at the new point
            k1.clone_from(&k[6]);
            traj.t.push(t);
            traj.y.push(y.clone());
            if !(inf_norm(&y) <= opts.blowup && inf_norm(&k1) <= opts.blowup) {
                traj.t.pop();
                traj.y.pop();
                return (traj, Some((Failure::BlowUp, t)));
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * factor).min(hmax);
        if h < opts.min_step {
            return (traj, Some((Failure::Collapse, t + dir * opts.min_step)));
        }
    }
    (traj, None)
}

/// Classical fixed-step RK4.
pub fn rk4<F>(mut f: F, t0: f64, y0: &[f64], t1: f64, steps: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let steps = steps.max(1);
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.to_vec();
    let axpy = |y: &[f64], k: &[f64], a: f64| -> Vec<f64> { y.iter().zip(k).map(|(u, v)| u + a * v).collect() };
    for s in 0..steps {
        let t = t0 + h * s as f64;
        let k1 = f(t, &y)?;
        let k2 = f(t + 0.5 * h, &axpy(&y, &k1, 0.5 * h))?;
        let k3 = f(t + 0.5 * h, &axpy(&y, &k2, 0.5 * h))?;
        let k4 = f(t + h, &axpy(&y, &k3, h))?;
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("rk4 state at t = {}", t + h)));
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth_matches_closed_form() {
        let traj = integrate(|_, y| Ok(vec![y[0]]), 0.0, &[1.0], 2.0, &OdeOptions::default());
        assert!(traj.status.is_completed());
        assert!((traj.last()[0] - 2f64.exp()).abs() < 1e-8 * 2f64.exp());
        let back = integrate(|_, y| Ok(vec![y[0]]), 0.0, &[1.0], -2.0, &OdeOptions::default());
        assert!((back.last()[0] - (-2f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn agrees_with_rk4_on_a_rotation() {
        let f = |_: f64, y: &[f64]| Ok(vec![-y[1], y[0]]);
        let a = integrate(f, 0.0, &[1.0, 0.0], 3.0, &OdeOptions::default()).into_final().unwrap();
        let b = rk4(f, 0.0, &[1.0, 0.0], 3.0, 2000).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8);
        assert!((a[0] - 3f64.cos()).abs() < 1e-8);
    }

    #[test]
    fn detects_finite_time_blow_up() {
        // y' = y², y(0) = 1 blows up at t = 1
        let traj = integrate(|_, y| Ok(vec![y[0] * y[0]]), 0.0, &[1.0], 5.0, &OdeOptions::default());
        let t = traj.status.t_star().unwrap();
        assert!((t - 1.0).abs() < 1e-3, "t* = {t}");
    }

    #[test]
    fn reports_escape_when_rhs_fails() {
        let f = |_: f64, y: &[f64]| {
            if y[0] > 0.5 {
                Err(Error::OutsideChart { point: y.to_vec() })
            } else {
                Ok(vec![1.0])
            }
        };
        let traj = integrate(f, 0.0, &[0.0], 2.0, &OdeOptions::default());
        match traj.status {
            Status::Escaped { t_star, .. } => assert!((t_star - 0.5).abs() < 1e-3),
            s => panic!("unexpected {s:?}"),
        }
    }
}
