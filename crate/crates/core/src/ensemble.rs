//! Run configuration, trial ensembles, parameter sweeps and their CSV output.
//!
//! Trial `i` always uses seed `master_seed + i`, and results are collected in
//! trial order, so every output file is independent of the worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    convergence_study, detect_oscillation, find_t1min_threshold, fit_t2, log_grid, relaxation,
    strongest_tls_stats, DistanceCategory, T1Estimate, TrialRecord,
};
use crate::device::{
    DeviceGeometry, FieldMap, FieldSource, Position, SyntheticField, SyntheticFieldParams,
};
use crate::dynamics::{Engine, IntegratorConfig, Trajectory};
use crate::model::InitialKind;
use crate::stm::{sample_retained, EnsembleSpec, RetainedHeader, RetainedSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    #[default]
    Trials,
    Convergence,
    T1minSweep,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    /// Field-map file; the analytic synthetic field is used when absent.
    pub path: Option<PathBuf>,
    /// Energy of the simulated field solution, J. Needed only for maps that
    /// are not yet scaled to a single photon.
    pub sim_energy_j: Option<f64>,
    pub synthetic: SyntheticFieldParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub k_list: Vec<usize>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            k_list: vec![1, 5, 10, 25, 50, 100, 150, 200],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Trial whose defect geometry is reused across the grid.
    pub trial: usize,
    pub dipoles: Vec<f64>,
    /// μs
    pub t1_min_us: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            trial: 0,
            dipoles: vec![0.1, 0.5, 1.1, 2.0, 3.0, 4.0],
            t1_min_us: log_grid(1e-3, 1e2, 11),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub dipoles: Vec<f64>,
    /// μs
    pub grid_min_us: f64,
    /// μs
    pub grid_max_us: f64,
    pub grid_points: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            dipoles: vec![1.1, 2.0, 3.0, 4.0],
            grid_min_us: 1e-3,
            grid_max_us: 1e2,
            grid_points: 16,
        }
    }
}

impl ThresholdConfig {
    pub fn grid(&self) -> Vec<f64> {
        log_grid(self.grid_min_us, self.grid_max_us, self.grid_points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub study: StudyKind,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub engine: Engine,
    /// Also run the superposition state and fit T2.
    pub compute_t2: bool,
    /// Write each trial's retained set for replay.
    pub save_retained: bool,
    pub field: FieldConfig,
    pub geometry: DeviceGeometry,
    pub ensemble: EnsembleSpec,
    pub integrator: IntegratorConfig,
    pub convergence: ConvergenceConfig,
    pub sweep: SweepConfig,
    pub threshold: ThresholdConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            study: StudyKind::Trials,
            trials: 1,
            seed: 0,
            out: PathBuf::from("out"),
            engine: Engine::Fast,
            compute_t2: true,
            save_retained: false,
            field: FieldConfig::default(),
            geometry: DeviceGeometry::default(),
            ensemble: EnsembleSpec::default(),
            integrator: IntegratorConfig::default(),
            convergence: ConvergenceConfig::default(),
            sweep: SweepConfig::default(),
            threshold: ThresholdConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        if self.trials == 0 {
            return Err(Error::Config("trial count must be at least 1".into()));
        }
        if let Some(p) = &self.field.path {
            if !p.is_file() {
                return Err(Error::Config(format!("field map {} does not exist", p.display())));
            }
        }
        self.field.synthetic.validate().map_err(wrap)?;
        self.geometry.validate().map_err(wrap)?;
        self.ensemble.validate().map_err(wrap)?;
        self.integrator.validate().map_err(wrap)?;
        let k = &self.convergence.k_list;
        if k.is_empty() || k.windows(2).any(|w| w[0] >= w[1]) || k[0] == 0 {
            return Err(Error::Config("convergence.k_list must be ascending and positive".into()));
        }
        if k[k.len() - 1] > self.ensemble.retain_k {
            return Err(Error::Config("convergence.k_list exceeds ensemble.retain_k".into()));
        }
        let dipoles_ok = |d: &[f64]| !d.is_empty() && d.iter().all(|&x| (0.1..=4.0).contains(&x));
        if !dipoles_ok(&self.sweep.dipoles) || !dipoles_ok(&self.threshold.dipoles) {
            return Err(Error::Config("dipole lists must be non-empty and within [0.1, 4] Debye".into()));
        }
        if self.sweep.t1_min_us.is_empty() || self.sweep.t1_min_us.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Config("sweep.t1_min_us must be non-empty and positive".into()));
        }
        let th = &self.threshold;
        if !(th.grid_min_us > 0.0 && th.grid_max_us >= 100.0 * th.grid_min_us && th.grid_points >= 2) {
            return Err(Error::Config(
                "threshold grid must be positive, span two decades and have two points".into(),
            ));
        }
        Ok(())
    }

    /// Ensemble parameters of trial `trial_id`.
    pub fn trial_spec(&self, trial_id: usize) -> EnsembleSpec {
        EnsembleSpec {
            seed: self.seed.wrapping_add(trial_id as u64),
            ..self.ensemble.clone()
        }
    }

    /// Loads or builds the field the defects are sampled in.
    pub fn field(&self) -> Result<Field> {
        match &self.field.path {
            None => Ok(Field::Synthetic(SyntheticField::new(
                self.geometry.clone(),
                self.field.synthetic,
            )?)),
            Some(path) => {
                let map = FieldMap::load(path)?;
                if map.photon_scaled {
                    return Ok(Field::Map(map));
                }
                let energy = self.field.sim_energy_j.ok_or_else(|| {
                    Error::Config(format!(
                        "{} is not scaled to a single photon; set field.sim_energy_j",
                        path.display()
                    ))
                })?;
                let omega_q = crate::constants::TWO_PI * self.ensemble.qubit_freq_hz;
                Ok(Field::Map(map.scale_to_single_photon(energy, omega_q)?))
            }
        }
    }
}

/// The field a run samples from.
#[derive(Debug, Clone)]
pub enum Field {
    Map(FieldMap),
    Synthetic(SyntheticField),
}

impl FieldSource for Field {
    fn field_at(&self, pos: &Position) -> Result<[f64; 3]> {
        match self {
            Field::Map(m) => m.field_at(pos),
            Field::Synthetic(s) => s.field_at(pos),
        }
    }
}

fn isolate<T>(f: impl FnOnce() -> Result<T>) -> Result<T> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            Err(Error::Integration {
                t: f64::NAN,
                reason: format!("worker panicked: {msg}"),
            })
        }
    }
}

/// Everything one trial produced.
#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub record: TrialRecord,
    pub relaxation: Option<Trajectory>,
    pub dephasing: Option<Trajectory>,
    pub retained: Option<RetainedSet>,
}

pub fn sample_trial(cfg: &RunConfig, field: &Field, spec: &EnsembleSpec) -> Result<RetainedSet> {
    sample_retained(spec, &cfg.geometry, field)
}

/// Simulates an already-sampled retained set and fits it.
pub fn evaluate_set(
    cfg: &RunConfig,
    trial_id: usize,
    spec: EnsembleSpec,
    set: RetainedSet,
) -> TrialOutput {
    let strongest = strongest_tls_stats(&set).ok();
    let qf = spec.qubit_freq_hz;
    let result = isolate(|| {
        let relax = relaxation(&set, qf, InitialKind::Excited, cfg.engine, &cfg.integrator)?;
        let est = T1Estimate::from_trajectory(&relax)?;
        let dephase = if cfg.compute_t2 {
            Some(relaxation(&set, qf, InitialKind::Superposition, cfg.engine, &cfg.integrator)?)
        } else {
            None
        };
        Ok((relax, est, dephase))
    });
    match result {
        Ok((relax, est, dephase)) => {
            let t2 = dephase.as_ref().and_then(|d| fit_t2(d).ok());
            let record = TrialRecord {
                trial_id,
                seed: spec.seed,
                spec,
                t1_q: Some(est.t1_us),
                censored: est.censored,
                t2_q: t2,
                oscillatory: est.oscillatory,
                oscillation_metric: detect_oscillation(&relax.p_qubit).1,
                strongest,
                retained_k: set.len(),
                error: None,
            };
            TrialOutput {
                record,
                relaxation: Some(relax),
                dephasing: dephase,
                retained: Some(set),
            }
        }
        Err(e) => {
            let mut record = TrialRecord::failed(trial_id, spec, &e);
            record.strongest = strongest;
            record.retained_k = set.len();
            TrialOutput {
                record,
                relaxation: None,
                dephasing: None,
                retained: Some(set),
            }
        }
    }
}

pub fn run_trial(cfg: &RunConfig, field: &Field, trial_id: usize) -> TrialOutput {
    let spec = cfg.trial_spec(trial_id);
    match isolate(|| sample_trial(cfg, field, &spec)) {
        Ok(set) => evaluate_set(cfg, trial_id, spec, set),
        Err(e) => TrialOutput {
            record: TrialRecord::failed(trial_id, spec, &e),
            relaxation: None,
            dephasing: None,
            retained: None,
        },
    }
}

pub fn run_trials(cfg: &RunConfig, field: &Field) -> Vec<TrialOutput> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, field, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: DistanceCategory,
    pub count: usize,
    /// Mean over resolved trials, μs.
    pub mean_t1_us: Option<f64>,
    pub std_t1_us: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub trials: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub censored: usize,
    pub oscillatory: usize,
    /// Median over successful trials, counting censored lower bounds as
    /// values (they all exceed every resolved T1 that could change the rank).
    pub median_t1_us: Option<f64>,
    pub mean_t1_us: Option<f64>,
    pub std_t1_us: Option<f64>,
    pub min_t1_us: Option<f64>,
    pub max_t1_us: Option<f64>,
    pub categories: Vec<CategorySummary>,
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}

pub fn summarize(records: &[TrialRecord]) -> EnsembleSummary {
    let ok: Vec<&TrialRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let all_t1: Vec<f64> = ok.iter().filter_map(|r| r.t1_q).collect();
    let resolved: Vec<f64> = ok.iter().filter_map(|r| r.resolved_t1()).collect();
    let ms = mean_std(&resolved);
    let categories = DistanceCategory::ALL
        .iter()
        .map(|&c| {
            let members: Vec<&&TrialRecord> = ok
                .iter()
                .filter(|r| r.strongest.map(|s| s.category) == Some(c))
                .collect();
            let t1: Vec<f64> = members.iter().filter_map(|r| r.resolved_t1()).collect();
            let ms = mean_std(&t1);
            CategorySummary {
                category: c,
                count: members.len(),
                mean_t1_us: ms.map(|m| m.0),
                std_t1_us: ms.map(|m| m.1),
            }
        })
        .collect();
    EnsembleSummary {
        trials: records.len(),
        succeeded: ok.len(),
        failed: records.len() - ok.len(),
        censored: ok.iter().filter(|r| r.censored).count(),
        oscillatory: ok.iter().filter(|r| r.oscillatory).count(),
        median_t1_us: median(&all_t1),
        mean_t1_us: ms.map(|m| m.0),
        std_t1_us: ms.map(|m| m.1),
        min_t1_us: resolved.iter().copied().reduce(f64::min),
        max_t1_us: resolved.iter().copied().reduce(f64::max),
        categories,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub trial_id: usize,
    pub k: usize,
    pub t1_us: Option<f64>,
    pub censored: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrial {
    pub trial_id: usize,
    pub seed: u64,
    pub category: Option<DistanceCategory>,
    pub rows: Vec<ConvergenceRow>,
    pub error: Option<String>,
}

impl ConvergenceTrial {
    pub fn t1_at(&self, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.k == k).and_then(|r| r.t1_us)
    }
}

pub fn run_convergence(cfg: &RunConfig, field: &Field) -> Vec<ConvergenceTrial> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|trial_id| {
            let spec = cfg.trial_spec(trial_id);
            let out = isolate(|| {
                let set = sample_trial(cfg, field, &spec)?;
                let category = strongest_tls_stats(&set).ok().map(|s| s.category);
                let points = convergence_study(
                    &set,
                    spec.qubit_freq_hz,
                    &cfg.convergence.k_list,
                    cfg.engine,
                    &cfg.integrator,
                )?;
                Ok((category, points))
            });
            match out {
                Ok((category, points)) => ConvergenceTrial {
                    trial_id,
                    seed: spec.seed,
                    category,
                    rows: points
                        .into_iter()
                        .map(|p| match p.t1 {
                            Ok(est) => ConvergenceRow {
                                trial_id,
                                k: p.k,
                                t1_us: Some(est.t1_us),
                                censored: est.censored,
                                error: None,
                            },
                            Err(e) => ConvergenceRow {
                                trial_id,
                                k: p.k,
                                t1_us: None,
                                censored: false,
                                error: Some(e.to_string()),
                            },
                        })
                        .collect(),
                    error: None,
                },
                Err(e) => ConvergenceTrial {
                    trial_id,
                    seed: spec.seed,
                    category: None,
                    rows: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dipole_debye: f64,
    pub t1_min_us: f64,
    pub t1_us: Option<f64>,
    pub censored: bool,
    pub oscillatory: bool,
    pub error: Option<String>,
}

/// Evaluates `set` rescaled to one (dipole, t1_min) cell.
pub fn sweep_cell(cfg: &RunConfig, set: &RetainedSet, qf: f64, dipole: f64, t1_min: f64) -> SweepRow {
    let r = isolate(|| {
        let cell = set.with_dipole(dipole).with_t1_min(t1_min);
        let traj = relaxation(&cell, qf, InitialKind::Excited, cfg.engine, &cfg.integrator)?;
        T1Estimate::from_trajectory(&traj)
    });
    match r {
        Ok(est) => SweepRow {
            dipole_debye: dipole,
            t1_min_us: t1_min,
            t1_us: Some(est.t1_us),
            censored: est.censored,
            oscillatory: est.oscillatory,
            error: None,
        },
        Err(e) => SweepRow {
            dipole_debye: dipole,
            t1_min_us: t1_min,
            t1_us: None,
            censored: false,
            oscillatory: false,
            error: Some(e.to_string()),
        },
    }
}

/// Dipole × t1_min grid over one fixed defect geometry.
pub fn run_sweep(cfg: &RunConfig, field: &Field) -> Result<Vec<SweepRow>> {
    let spec = cfg.trial_spec(cfg.sweep.trial);
    let set = sample_trial(cfg, field, &spec)?;
    let cells: Vec<(f64, f64)> = cfg
        .sweep
        .dipoles
        .iter()
        .flat_map(|&d| cfg.sweep.t1_min_us.iter().map(move |&t| (d, t)))
        .collect();
    Ok(cells
        .into_par_iter()
        .map(|(d, t)| sweep_cell(cfg, &set, spec.qubit_freq_hz, d, t))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub trial_id: usize,
    pub seed: u64,
    pub dipole_debye: f64,
    /// μs; `None` when no grid point oscillates.
    pub threshold_us: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub dipole_debye: f64,
    pub found: usize,
    pub threshold_mean_us: Option<f64>,
    pub threshold_std_us: Option<f64>,
    pub threshold_min_us: Option<f64>,
}

pub fn run_threshold(cfg: &RunConfig, field: &Field) -> Vec<ThresholdRow> {
    let grid = cfg.threshold.grid();
    let sets: Vec<(EnsembleSpec, Result<RetainedSet>)> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| {
            let spec = cfg.trial_spec(i);
            let set = isolate(|| sample_trial(cfg, field, &spec));
            (spec, set)
        })
        .collect();
    let jobs: Vec<(usize, f64)> = (0..cfg.trials)
        .flat_map(|i| cfg.threshold.dipoles.iter().map(move |&d| (i, d)))
        .collect();
    jobs.into_par_iter()
        .map(|(i, dipole)| {
            let (spec, set) = &sets[i];
            let r = match set {
                Ok(set) => isolate(|| {
                    find_t1min_threshold(
                        &set.with_dipole(dipole),
                        spec.qubit_freq_hz,
                        &grid,
                        cfg.engine,
                        &cfg.integrator,
                    )
                }),
                Err(e) => Err(Error::Integration {
                    t: 0.0,
                    reason: format!("sampling failed: {e}"),
                }),
            };
            let (threshold_us, error) = match r {
                Ok(t) => (t, None),
                Err(e) => (None, Some(e.to_string())),
            };
            ThresholdRow {
                trial_id: i,
                seed: spec.seed,
                dipole_debye: dipole,
                threshold_us,
                error,
            }
        })
        .collect()
}

pub fn summarize_thresholds(rows: &[ThresholdRow]) -> Vec<ThresholdSummary> {
    let mut by_dipole: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let e = by_dipole
            .entry(r.dipole_debye.to_bits())
            .or_insert((r.dipole_debye, Vec::new()));
        if let Some(t) = r.threshold_us {
            e.1.push(t);
        }
    }
    let mut out: Vec<ThresholdSummary> = by_dipole
        .into_values()
        .map(|(d, v)| {
            let ms = mean_std(&v);
            ThresholdSummary {
                dipole_debye: d,
                found: v.len(),
                threshold_mean_us: ms.map(|m| m.0),
                threshold_std_us: ms.map(|m| m.1),
                threshold_min_us: v.iter().copied().reduce(f64::min),
            }
        })
        .collect();
    out.sort_by(|a, b| a.dipole_debye.total_cmp(&b.dipole_debye));
    out
}

/// Results of one study, ready to be written as CSV.
pub enum StudyOutputs<'a> {
    Trials(&'a [TrialOutput]),
    Convergence(&'a [ConvergenceTrial]),
    Sweep(&'a [SweepRow]),
    Threshold(&'a [ThresholdRow]),
}

pub const FIG2_HEADER: &str = "t_us,p_qubit,p_tls_total,coherence_abs";
pub const FIG3_HEADER: &str = "trial_id,t_us,p_qubit";
pub const FIG4_STATS_HEADER: &str =
    "trial_id,seed,t1_us,censored,t2_us,oscillatory,category,distance_to_jj_um,pe_hz,delta0_norm,omega_hz";
pub const FIG4_CONVERGENCE_HEADER: &str = "k,t1_us,trial_id";
pub const FIG5_SWEEP_HEADER: &str = "dipole_debye,t1_min_us,t1_us,censored,oscillatory";
pub const FIG5_THRESHOLD_HEADER: &str = "dipole_debye,threshold_mean_us,threshold_std_us";
pub const THRESHOLD_TRIALS_HEADER: &str = "trial_id,seed,dipole_debye,threshold_us";
/// Time points per trial in `fig3_trials.csv`.
pub const FIG3_MAX_POINTS: usize = 200;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, body)?;
    Ok(path)
}

/// Indices of at most `max` evenly strided samples, always including the last.
pub fn downsample_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let stride = (n - 1).div_ceil(max - 1);
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if *idx.last().unwrap() != n - 1 {
        idx.push(n - 1);
    }
    idx
}

/// Writes the figure CSVs (and record files) for one study into `dir`.
pub fn emit_figure_data(dir: &Path, outputs: &StudyOutputs) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match outputs {
        StudyOutputs::Trials(trials) => {
            let first = trials
                .iter()
                .find(|t| t.relaxation.is_some())
                .ok_or_else(|| Error::MissingInput("no successful trial for fig2_decay.csv".into()))?;
            let relax = first.relaxation.as_ref().unwrap();
            let mut s = String::from(FIG2_HEADER);
            s.push('\n');
            for i in 0..relax.len() {
                let coh = first.dephasing.as_ref().map(|d| d.coherence_abs[i]);
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    relax.t[i],
                    relax.p_qubit[i],
                    relax.p_tls_total[i],
                    opt(coh)
                );
            }
            written.push(write_file(dir, "fig2_decay.csv", &s)?);

            let mut s = String::from(FIG3_HEADER);
            s.push('\n');
            for t in trials.iter() {
                if let Some(r) = &t.relaxation {
                    for i in downsample_indices(r.len(), FIG3_MAX_POINTS) {
                        let _ = writeln!(s, "{},{},{}", t.record.trial_id, r.t[i], r.p_qubit[i]);
                    }
                }
            }
            written.push(write_file(dir, "fig3_trials.csv", &s)?);

            let mut s = String::from(FIG4_STATS_HEADER);
            s.push('\n');
            for t in trials.iter() {
                let r = &t.record;
                let st = r.strongest;
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    r.trial_id,
                    r.seed,
                    opt(r.t1_q),
                    r.censored,
                    opt(r.t2_q),
                    r.oscillatory,
                    st.map(|s| s.category.label()).unwrap_or_default(),
                    opt(st.map(|s| s.distance_to_jj_um)),
                    opt(st.map(|s| s.pe_hz)),
                    opt(st.map(|s| s.delta0_norm)),
                    opt(st.map(|s| s.omega_hz)),
                );
            }
            written.push(write_file(dir, "fig4_stats.csv", &s)?);

            let records: Vec<TrialRecord> = trials.iter().map(|t| t.record.clone()).collect();
            written.push(write_file(dir, "trials.jsonl", &jsonl(&records)?)?);
            let summary = summarize(&records);
            written.push(write_file(
                dir,
                "summary.json",
                &(serde_json::to_string_pretty(&summary)? + "\n"),
            )?);
        }
        StudyOutputs::Convergence(trials) => {
            if trials.iter().all(|t| t.rows.is_empty()) {
                return Err(Error::MissingInput("no convergence results for fig4_convergence.csv".into()));
            }
            let mut s = String::from(FIG4_CONVERGENCE_HEADER);
            s.push('\n');
            for t in trials.iter() {
                for r in &t.rows {
                    let _ = writeln!(s, "{},{},{}", r.k, opt(r.t1_us), r.trial_id);
                }
            }
            written.push(write_file(dir, "fig4_convergence.csv", &s)?);
            written.push(write_file(dir, "convergence.jsonl", &jsonl(trials)?)?);
        }
        StudyOutputs::Sweep(rows) => {
            if rows.is_empty() {
                return Err(Error::MissingInput("no sweep cells for fig5_sweep.csv".into()));
            }
            let mut s = String::from(FIG5_SWEEP_HEADER);
            s.push('\n');
            for r in rows.iter() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    r.dipole_debye,
                    r.t1_min_us,
                    opt(r.t1_us),
                    r.censored,
                    r.oscillatory
                );
            }
            written.push(write_file(dir, "fig5_sweep.csv", &s)?);
        }
        StudyOutputs::Threshold(rows) => {
            if rows.is_empty() {
                return Err(Error::MissingInput("no threshold results for fig5_threshold.csv".into()));
            }
            let mut s = String::from(FIG5_THRESHOLD_HEADER);
            s.push('\n');
            for t in summarize_thresholds(rows) {
                let _ = writeln!(
                    s,
                    "{},{},{}",
                    t.dipole_debye,
                    opt(t.threshold_mean_us),
                    opt(t.threshold_std_us)
                );
            }
            written.push(write_file(dir, "fig5_threshold.csv", &s)?);
            let mut s = String::from(THRESHOLD_TRIALS_HEADER);
            s.push('\n');
            for r in rows.iter() {
                let _ = writeln!(s, "{},{},{},{}", r.trial_id, r.seed, r.dipole_debye, opt(r.threshold_us));
            }
            written.push(write_file(dir, "threshold_trials.csv", &s)?);
        }
    }
    Ok(written)
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it)?);
        s.push('\n');
    }
    Ok(s)
}

/// Writes each trial's retained set as `retained/trial_<id>.jsonl`.
pub fn save_retained_sets(dir: &Path, trials: &[TrialOutput]) -> Result<()> {
    let sub = dir.join("retained");
    fs::create_dir_all(&sub)?;
    for t in trials {
        if let Some(set) = &t.retained {
            let header = RetainedHeader::new(&t.record.spec);
            set.write_jsonl(&sub.join(format!("trial_{}.jsonl", t.record.trial_id)), &header)?;
        }
    }
    Ok(())
}
