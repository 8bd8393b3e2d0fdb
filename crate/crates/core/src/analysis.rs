//! Decay-constant extraction and the derived studies built on it.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::constants::TWO_PI;
use crate::dynamics::{simulate, Engine, IntegratorConfig, Trajectory};
use crate::model::{initial_state, InitialKind, ModelMatrices};
use crate::stm::{EnsembleSpec, RetainedSet};
use crate::{Error, Result};

/// Smallest rebound (absolute population) counted as coherent exchange.
pub const OSCILLATION_THRESHOLD: f64 = 1e-3;
/// Minimum peak prominence used for envelope fits.
pub const PEAK_PROMINENCE: f64 = 1e-3;
/// Only points above this level seed the log-linear regression.
const LOG_FIT_FLOOR: f64 = 1e-4;
/// A trace that keeps more than this fraction of its start value is unresolved.
const RESOLVED_FRACTION: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// μs
    pub t1: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub residual_rms: f64,
    pub oscillatory: bool,
    /// Peaks `(t, value)` the envelope was fitted to; empty unless oscillatory.
    pub envelope_peaks: Vec<(f64, f64)>,
}

/// Decay constant of the qubit population.
pub fn fit_t1(traj: &Trajectory) -> Result<DecayFit> {
    fit_decay(&traj.t, &traj.p_qubit)
}

/// Decay constant of `|ρ01|` for a trajectory started in the superposition.
pub fn fit_t2(traj: &Trajectory) -> Result<f64> {
    match traj.coherence_abs.first() {
        Some(c) if (c - 0.5).abs() <= 1e-9 => {}
        _ => {
            return Err(Error::param(
                "T2 needs a trajectory started in the equal superposition",
            ))
        }
    }
    fit_decay(&traj.t, &traj.coherence_abs).map(|f| f.t1)
}

/// Fits `A·exp(−t/T) + C` to `y(t)`, or to its peak envelope when `y`
/// oscillates.
pub fn fit_decay(t: &[f64], y: &[f64]) -> Result<DecayFit> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(Error::Fit("need at least three samples".into()));
    }
    if !(y[0] > 0.0) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("signal must start positive and stay finite".into()));
    }
    let n = y.len();
    let span = t[n - 1] - t[0];
    if y[n - 1] > RESOLVED_FRACTION * y[0] {
        return Err(Error::UnresolvedDecay {
            lower_bound: span / -RESOLVED_FRACTION.ln(),
        });
    }
    let (oscillatory, _) = detect_oscillation(y);
    if oscillatory {
        let peaks = envelope_peaks(t, y);
        if peaks.len() < 2 {
            return Err(Error::Fit("too few envelope peaks".into()));
        }
        let (pt, py): (Vec<f64>, Vec<f64>) = peaks.iter().copied().unzip();
        let mut fit = if peaks.len() >= 4 {
            exp_fit(&pt, &py)?
        } else {
            let (a, k) = log_linear(&pt, &py)?;
            finish(&pt, &py, a, k, 0.0)?
        };
        fit.oscillatory = true;
        fit.envelope_peaks = peaks;
        Ok(fit)
    } else {
        exp_fit(t, y)
    }
}

/// Whether `y` falls to a local minimum and then climbs back by at least
/// [`OSCILLATION_THRESHOLD`]. The metric is the largest such rise.
pub fn detect_oscillation(y: &[f64]) -> (bool, f64) {
    let mut low = f64::INFINITY;
    let mut rise: f64 = 0.0;
    for &v in y {
        low = low.min(v);
        rise = rise.max(v - low);
    }
    (rise >= OSCILLATION_THRESHOLD, rise)
}

/// The starting point plus every interior local maximum whose prominence
/// exceeds [`PEAK_PROMINENCE`].
pub fn envelope_peaks(t: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let n = y.len();
    let mut peaks = vec![(t[0], y[0])];
    let mut i = 1;
    while i + 1 < n {
        if y[i] > y[i - 1] {
            // Flat tops count once, at their first sample.
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] && prominence(y, i, j) > PEAK_PROMINENCE {
                peaks.push((t[i], y[i]));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

fn prominence(y: &[f64], first: usize, last: usize) -> f64 {
    let h = y[first];
    let mut left = h;
    for k in (0..first).rev() {
        if y[k] > h {
            break;
        }
        left = left.min(y[k]);
    }
    let mut right = h;
    for &v in &y[last + 1..] {
        if v > h {
            break;
        }
        right = right.min(v);
    }
    h - left.max(right)
}

/// Least-squares line through `ln y` for samples above the floor; returns
/// `(A, k)` with `y ≈ A·exp(−k·t)`.
fn log_linear(t: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > LOG_FIT_FLOOR)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit("too few samples above the log floor".into()));
    }
    let m = pts.len() as f64;
    let (st, sl) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mt, ml) = (st / m, sl / m);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (t, l) in &pts {
        sxx += (t - mt) * (t - mt);
        sxy += (t - mt) * (l - ml);
    }
    if sxx == 0.0 {
        return Err(Error::Fit("degenerate time axis".into()));
    }
    let slope = sxy / sxx;
    Ok(((ml - slope * mt).exp(), -slope))
}

/// Levenberg–Marquardt on `(A, k, C)` seeded by [`log_linear`].
fn exp_fit(t: &[f64], y: &[f64]) -> Result<DecayFit> {
    let (a0, k0) = log_linear(t, y)?;
    let k0 = if k0 > 0.0 {
        k0
    } else {
        1.0 / (t[t.len() - 1] - t[0])
    };
    let mut p = Vector3::new(a0, k0, 0.0);
    let mut cost = sse(t, y, &p);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (&ti, &yi) in t.iter().zip(y) {
            let e = (-p[1] * ti).exp();
            let row = Vector3::new(e, -p[0] * ti * e, 1.0);
            let r = yi - (p[0] * e + p[2]);
            jtj += row * row.transpose();
            jtr += row * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for d in 0..3 {
                damped[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let c = sse(t, y, &trial);
            if c.is_finite() && c <= cost {
                let done = (cost - c) <= 1e-15 * cost.max(1e-300)
                    || step.norm() <= 1e-13 * p.norm();
                p = trial;
                cost = c;
                lambda = (lambda / 10.0).max(1e-15);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    finish(t, y, p[0], p[1], p[2])
}

fn sse(t: &[f64], y: &[f64], p: &Vector3<f64>) -> f64 {
    t.iter()
        .zip(y)
        .map(|(&ti, &yi)| (yi - p[0] * (-p[1] * ti).exp() - p[2]).powi(2))
        .sum()
}

fn finish(t: &[f64], y: &[f64], amplitude: f64, rate: f64, offset: f64) -> Result<DecayFit> {
    if !(rate > 0.0 && rate.is_finite() && amplitude.is_finite() && offset.is_finite()) {
        return Err(Error::Fit(format!("no decaying solution (rate {rate})")));
    }
    let residual_rms = (sse(t, y, &Vector3::new(amplitude, rate, offset)) / t.len() as f64).sqrt();
    Ok(DecayFit {
        t1: 1.0 / rate,
        amplitude,
        offset,
        residual_rms,
        oscillatory: false,
        envelope_peaks: Vec::new(),
    })
}

/// Relaxation trace of the qubit for a retained set.
pub fn relaxation(
    set: &RetainedSet,
    qubit_freq_hz: f64,
    kind: InitialKind,
    engine: Engine,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let model = ModelMatrices::build(set, qubit_freq_hz)?;
    let init = initial_state(kind, model.dim)?;
    simulate(&model, &init, engine, cfg)
}

/// T1 of one configuration, or the lower bound if the decay is unresolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T1Estimate {
    /// μs
    pub t1_us: f64,
    /// `t1_us` is only a lower bound.
    pub censored: bool,
    pub oscillatory: bool,
}

impl T1Estimate {
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let oscillatory = detect_oscillation(&traj.p_qubit).0;
        match fit_t1(traj) {
            Ok(fit) => Ok(T1Estimate {
                t1_us: fit.t1,
                censored: false,
                oscillatory: fit.oscillatory,
            }),
            Err(Error::UnresolvedDecay { lower_bound }) => Ok(T1Estimate {
                t1_us: lower_bound,
                censored: true,
                oscillatory,
            }),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug)]
pub struct ConvergencePoint {
    pub k: usize,
    pub t1: Result<T1Estimate>,
}

/// Re-runs the same ranked set truncated to each `k`.
pub fn convergence_study(
    set: &RetainedSet,
    qubit_freq_hz: f64,
    k_list: &[usize],
    engine: Engine,
    cfg: &IntegratorConfig,
) -> Result<Vec<ConvergencePoint>> {
    if k_list.is_empty() || k_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("k list must be non-empty and strictly ascending"));
    }
    if k_list[0] == 0 || k_list[k_list.len() - 1] > set.len() {
        return Err(Error::Size {
            requested: k_list[k_list.len() - 1],
            available: set.len(),
        });
    }
    Ok(k_list
        .iter()
        .map(|&k| ConvergencePoint {
            k,
            t1: set.truncated(k).and_then(|sub| {
                let traj = relaxation(&sub, qubit_freq_hz, InitialKind::Excited, engine, cfg)?;
                T1Estimate::from_trajectory(&traj)
            }),
        })
        .collect())
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

const THRESHOLD_BISECTIONS: usize = 3;

/// Smallest `t1_min` (μs) at which the relaxation trace oscillates, refined by
/// bisection in log space between the bracketing grid points. `None` when no
/// grid point oscillates.
pub fn find_t1min_threshold(
    set: &RetainedSet,
    qubit_freq_hz: f64,
    grid: &[f64],
    engine: Engine,
    cfg: &IntegratorConfig,
) -> Result<Option<f64>> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) || !(grid[0] > 0.0) {
        return Err(Error::param("t1_min grid must be positive and strictly ascending"));
    }
    if grid[grid.len() - 1] / grid[0] < 100.0 - 1e-9 {
        return Err(Error::param("t1_min grid must span at least two decades"));
    }
    let oscillates = |t1_min: f64| -> Result<bool> {
        let traj = relaxation(&set.with_t1_min(t1_min), qubit_freq_hz, InitialKind::Excited, engine, cfg)?;
        Ok(detect_oscillation(&traj.p_qubit).0)
    };
    let mut below: Option<f64> = None;
    for &g in grid {
        if oscillates(g)? {
            let Some(mut lo) = below else {
                return Ok(Some(g));
            };
            let mut hi = g;
            for _ in 0..THRESHOLD_BISECTIONS {
                let mid = (0.5 * (lo.ln() + hi.ln())).exp();
                if oscillates(mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some(hi));
        }
        below = Some(g);
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistanceCategory {
    #[serde(rename = "<0.3 μm")]
    Junction,
    #[serde(rename = "0.3–5 μm")]
    Near,
    #[serde(rename = ">5 μm")]
    Distant,
}

impl DistanceCategory {
    pub const ALL: [DistanceCategory; 3] = [
        DistanceCategory::Junction,
        DistanceCategory::Near,
        DistanceCategory::Distant,
    ];

    pub fn from_distance(d_um: f64) -> Self {
        if d_um < 0.3 {
            DistanceCategory::Junction
        } else if d_um <= 5.0 {
            DistanceCategory::Near
        } else {
            DistanceCategory::Distant
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DistanceCategory::Junction => "<0.3 μm",
            DistanceCategory::Near => "0.3–5 μm",
            DistanceCategory::Distant => ">5 μm",
        }
    }
}

/// The top-ranked defect of a retained set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongestTls {
    pub distance_to_jj_um: f64,
    /// |p|·|E|/ħ expressed in Hz.
    pub pe_hz: f64,
    pub delta0_norm: f64,
    /// Ω in Hz.
    pub omega_hz: f64,
    pub category: DistanceCategory,
}

pub fn strongest_tls_stats(set: &RetainedSet) -> Result<StrongestTls> {
    let d = set
        .defects
        .first()
        .ok_or_else(|| Error::param("retained set is empty"))?;
    Ok(StrongestTls {
        distance_to_jj_um: d.distance_to_jj_um,
        pe_hz: d.pe_over_hbar() / TWO_PI,
        delta0_norm: d.delta0_norm,
        omega_hz: d.omega / TWO_PI,
        category: DistanceCategory::from_distance(d.distance_to_jj_um),
    })
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub seed: u64,
    pub spec: EnsembleSpec,
    /// μs; a lower bound when `censored`.
    pub t1_q: Option<f64>,
    pub censored: bool,
    pub t2_q: Option<f64>,
    pub oscillatory: bool,
    pub oscillation_metric: f64,
    pub strongest: Option<StrongestTls>,
    pub retained_k: usize,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn failed(trial_id: usize, spec: EnsembleSpec, error: &Error) -> Self {
        TrialRecord {
            trial_id,
            seed: spec.seed,
            spec,
            t1_q: None,
            censored: false,
            t2_q: None,
            oscillatory: false,
            oscillation_metric: 0.0,
            strongest: None,
            retained_k: 0,
            error: Some(error.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// Resolved T1 (not censored, no failure).
    pub fn resolved_t1(&self) -> Option<f64> {
        if self.censored {
            None
        } else {
            self.t1_q
        }
    }
}
