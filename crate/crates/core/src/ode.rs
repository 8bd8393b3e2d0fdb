//! Dormand–Prince 5(4) integrator with step-size control and dense output.
//!
//! Works on flat real state vectors; complex states are stored interleaved
//! `(re, im)`. Output is produced on a caller-supplied time grid through the
//! method's fourth-order continuous extension, so the grid never constrains
//! the internal step size.

use crate::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

struct Work {
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
    cont: [Vec<f64>; 5],
}

impl Work {
    fn new(n: usize) -> Self {
        Work {
            k: std::array::from_fn(|_| vec![0.0; n]),
            y_stage: vec![0.0; n],
            y_new: vec![0.0; n],
            err: vec![0.0; n],
            cont: std::array::from_fn(|_| vec![0.0; n]),
        }
    }
}

/// Integrates `y' = f(t, y)` from `outputs[0]` through `outputs.last()`.
///
/// `observe(i, t, y)` is called once per output time, in order; `post_step`
/// may project the state after every accepted step (e.g. to restore a
/// symmetry that round-off erodes).
pub fn integrate<F, P, O>(
    mut f: F,
    y0: &[f64],
    outputs: &[f64],
    tol: &Tolerances,
    mut post_step: P,
    mut observe: O,
) -> Result<Stats>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    P: FnMut(&mut [f64]),
    O: FnMut(usize, f64, &[f64]),
{
    let Some(&t0) = outputs.first() else {
        return Ok(Stats::default());
    };
    let t_end = *outputs.last().unwrap();
    if outputs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("output times must be ascending"));
    }
    if !(tol.rel > 0.0 && tol.abs > 0.0 && tol.max_step > 0.0) {
        return Err(Error::param("tolerances and max step must be positive"));
    }

    let n = y0.len();
    let mut w = Work::new(n);
    let mut y = y0.to_vec();
    let mut stats = Stats::default();
    let mut next_out = 0;
    while next_out < outputs.len() && outputs[next_out] <= t0 {
        observe(next_out, outputs[next_out], &y);
        next_out += 1;
    }
    if next_out == outputs.len() {
        return Ok(stats);
    }

    f(t0, &y, &mut w.k[0]);
    stats.evaluations += 1;
    let mut h = initial_step(&mut f, t0, &y, &w.k[0].clone(), tol, &mut stats)
        .min(tol.max_step)
        .min(t_end - t0);
    let mut t = t0;
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;
    let mut dense = vec![0.0; n];

    while t < t_end {
        if stats.accepted + stats.rejected >= tol.max_steps {
            return Err(Error::Integration {
                t,
                reason: format!("exceeded {} steps", tol.max_steps),
            });
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Integration {
                t,
                reason: "step size underflow".into(),
            });
        }
        let last = t + 1.01 * h >= t_end;
        if last {
            h = t_end - t;
        }

        stage(&mut w, &y, h, &[(0, A21)], 1, t + C2 * h, &mut f);
        stage(&mut w, &y, h, &[(0, A31), (1, A32)], 2, t + C3 * h, &mut f);
        stage(&mut w, &y, h, &[(0, A41), (1, A42), (2, A43)], 3, t + C4 * h, &mut f);
        stage(
            &mut w,
            &y,
            h,
            &[(0, A51), (1, A52), (2, A53), (3, A54)],
            4,
            t + C5 * h,
            &mut f,
        );
        // Stage 6 state is not kept: the 5th-order solution is built next.
        for i in 0..n {
            w.y_stage[i] = y[i]
                + h * (A61 * w.k[0][i] + A62 * w.k[1][i] + A63 * w.k[2][i] + A64 * w.k[3][i] + A65 * w.k[4][i]);
        }
        f(t + h, &w.y_stage, &mut w.k[5]);
        for i in 0..n {
            w.y_new[i] = y[i]
                + h * (A71 * w.k[0][i] + A73 * w.k[2][i] + A74 * w.k[3][i] + A75 * w.k[4][i] + A76 * w.k[5][i]);
        }
        f(t + h, &w.y_new, &mut w.k[6]);
        stats.evaluations += 6;

        let mut sum = 0.0;
        for i in 0..n {
            w.err[i] = h
                * (E1 * w.k[0][i] + E3 * w.k[2][i] + E4 * w.k[3][i] + E5 * w.k[4][i] + E6 * w.k[5][i]
                    + E7 * w.k[6][i]);
            let scale = tol.abs + tol.rel * y[i].abs().max(w.y_new[i].abs());
            let r = w.err[i] / scale;
            sum += r * r;
        }
        let err = (sum / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            stats.rejected += 1;
            h *= FAC_MIN;
            last_rejected = true;
            continue;
        }

        let fac11 = err.powf(0.2 - 0.75 * BETA);
        if err <= 1.0 {
            stats.accepted += 1;
            let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            fac_old = err.max(1e-4);

            // Continuous extension over [t, t + h].
            for i in 0..n {
                let ydiff = w.y_new[i] - y[i];
                let bspl = h * w.k[0][i] - ydiff;
                w.cont[0][i] = y[i];
                w.cont[1][i] = ydiff;
                w.cont[2][i] = bspl;
                w.cont[3][i] = ydiff - h * w.k[6][i] - bspl;
                w.cont[4][i] = h
                    * (D1 * w.k[0][i] + D3 * w.k[2][i] + D4 * w.k[3][i] + D5 * w.k[4][i] + D6 * w.k[5][i]
                        + D7 * w.k[6][i]);
            }
            let t_new = if last { t_end } else { t + h };
            while next_out < outputs.len() && outputs[next_out] <= t_new {
                let theta = ((outputs[next_out] - t) / h).clamp(0.0, 1.0);
                let theta1 = 1.0 - theta;
                for i in 0..n {
                    dense[i] = w.cont[0][i]
                        + theta
                            * (w.cont[1][i]
                                + theta1 * (w.cont[2][i] + theta * (w.cont[3][i] + theta1 * w.cont[4][i])));
                }
                if outputs[next_out] == t_new {
                    dense.copy_from_slice(&w.y_new);
                }
                observe(next_out, outputs[next_out], &dense);
                next_out += 1;
            }

            std::mem::swap(&mut y, &mut w.y_new);
            post_step(&mut y);
            // FSAL: the last stage is the derivative at the new point.
            w.k.swap(0, 6);
            t = t_new;

            let mut h_new = (h / fac).min(tol.max_step);
            if last_rejected {
                h_new = h_new.min(h);
            }
            last_rejected = false;
            h = h_new;
        } else {
            stats.rejected += 1;
            h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
            last_rejected = true;
        }
    }
    Ok(stats)
}

fn stage<F>(w: &mut Work, y: &[f64], h: f64, coeffs: &[(usize, f64)], out: usize, t: f64, f: &mut F)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    w.y_stage[..n].copy_from_slice(y);
    for &(j, a) in coeffs {
        let ha = h * a;
        for (ys, kj) in w.y_stage.iter_mut().zip(&w.k[j]) {
            *ys += ha * kj;
        }
    }
    f(t, &w.y_stage, &mut w.k[out]);
}

/// Starting step from the Hairer–Nørsett–Wanner heuristic.
fn initial_step<F>(f: &mut F, t0: f64, y0: &[f64], f0: &[f64], tol: &Tolerances, stats: &mut Stats) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len().max(1) as f64;
    let scale = |i: usize| tol.abs + tol.rel * y0[i].abs();
    let norm = |v: &dyn Fn(usize) -> f64| -> f64 {
        ((0..y0.len()).map(|i| (v(i) / scale(i)).powi(2)).sum::<f64>() / n).sqrt()
    };
    let d0 = norm(&|i| y0[i]);
    let d1 = norm(&|i| f0[i]);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(tol.max_step);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, d)| y + h0 * d).collect();
    let mut f1 = vec![0.0; y0.len()];
    f(t0 + h0, &y1, &mut f1);
    stats.evaluations += 1;
    let d2 = norm(&|i| f1[i] - f0[i]) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (1e-6f64).max(h0 * 1e-3)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol(rel: f64, abs: f64) -> Tolerances {
        Tolerances {
            rel,
            abs,
            max_step: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }

    #[test]
    fn exponential_decay() {
        let ts: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let mut out = vec![0.0; ts.len()];
        integrate(
            |_, y, dy| dy[0] = -y[0],
            &[1.0],
            &ts,
            &tol(1e-10, 1e-12),
            |_| {},
            |i, _, y| out[i] = y[0],
        )
        .unwrap();
        for (t, y) in ts.iter().zip(&out) {
            assert!((y - (-t).exp()).abs() < 1e-9, "t={t}: {y}");
        }
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let ts: Vec<f64> = (0..=400).map(|i| i as f64 * 0.05).collect();
        let mut out = vec![[0.0; 2]; ts.len()];
        let stats = integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -4.0 * y[0];
            },
            &[1.0, 0.0],
            &ts,
            &tol(1e-9, 1e-11),
            |_| {},
            |i, _, y| out[i] = [y[0], y[1]],
        )
        .unwrap();
        assert!(stats.accepted > 0);
        for (t, y) in ts.iter().zip(&out) {
            assert!((y[0] - (2.0 * t).cos()).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn step_limit_reports_time() {
        let ts = [0.0, 100.0];
        let t = Tolerances {
            max_steps: 5,
            ..tol(1e-12, 1e-14)
        };
        let err = integrate(|_, y, dy| dy[0] = 50.0 * y[0].cos(), &[0.0], &ts, &t, |_| {}, |_, _, _| {})
            .unwrap_err();
        assert!(matches!(err, Error::Integration { .. }));
    }
}
