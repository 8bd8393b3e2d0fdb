use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tlsbath::analysis::{fit_t1, TrialRecord};
use tlsbath::device::synthetic_field;
use tlsbath::dynamics::Engine;
use tlsbath::ensemble::{
    emit_figure_data, evaluate_set, run_convergence, run_sweep, run_threshold, run_trials,
    save_retained_sets, summarize, summarize_thresholds, RunConfig, StudyKind, StudyOutputs,
};
use tlsbath::stm::{RetainedSet, RETAINED_FORMAT};
use tlsbath::Error;

/// Qubit relaxation from resonant two-level-system defects.
#[derive(Parser)]
#[command(name = "tlsbath", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Independent trials: sample, simulate, fit T1 (and T2).
    Trials,
    /// T1 as a function of the number of retained defects.
    Convergence,
    /// Dipole × T1min grid over one fixed defect geometry.
    Sweep,
    /// Smallest T1min at which coherent exchange appears.
    Threshold,
    /// Rasterize the synthetic field into a field-map file.
    SynthesizeField,
    /// Re-run trials from a record file (trials.jsonl) or a retained-set file.
    Replay { record: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Fast,
    Full,
}

#[derive(Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; trial i uses seed + i.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Number of retained defects.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Dipole moment, Debye.
    #[arg(long, global = true)]
    dipole: Option<f64>,
    /// Shortest defect relaxation time, μs.
    #[arg(long, global = true)]
    t1min: Option<f64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    engine: Option<EngineArg>,
    /// Simulated time, μs.
    #[arg(long, global = true)]
    horizon: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.trials {
            cfg.trials = n;
        }
        if let Some(k) = self.k {
            cfg.ensemble.retain_k = k;
            cfg.convergence.k_list.retain(|&x| x <= k);
            if cfg.convergence.k_list.last() != Some(&k) {
                cfg.convergence.k_list.push(k);
            }
        }
        if let Some(d) = self.dipole {
            cfg.ensemble.dipole_debye = d;
            cfg.sweep.dipoles = vec![d];
            cfg.threshold.dipoles = vec![d];
        }
        if let Some(t) = self.t1min {
            cfg.ensemble.t1_min_us = t;
            cfg.sweep.t1_min_us = vec![t];
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(e) = self.engine {
            cfg.engine = match e {
                EngineArg::Fast => Engine::Fast,
                EngineArg::Full => Engine::Full,
            };
        }
        if let Some(h) = self.horizon {
            cfg.integrator.horizon = h;
        }
    }
}

enum Failure {
    Config(Error),
    Run(Error),
    AllTrialsFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::AllTrialsFailed) => {
            eprintln!("error: every trial failed");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.overrides.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.study = match cli.command {
        Command::Convergence => StudyKind::Convergence,
        Command::Sweep => StudyKind::T1minSweep,
        Command::Threshold => StudyKind::Threshold,
        _ => StudyKind::Trials,
    };
    cfg.validate().map_err(Failure::Config)?;
    let field = cfg.field().map_err(Failure::Config)?;
    let out = cfg.out.clone();
    let run_err = Failure::Run;

    match cli.command {
        Command::Trials => {
            let trials = run_trials(&cfg, &field);
            let records: Vec<TrialRecord> = trials.iter().map(|t| t.record.clone()).collect();
            for r in &records {
                if let Some(e) = &r.error {
                    eprintln!("trial {} (seed {}) failed: {e}", r.trial_id, r.seed);
                }
            }
            if records.iter().all(|r| !r.is_ok()) {
                return Err(Failure::AllTrialsFailed);
            }
            emit_figure_data(&out, &StudyOutputs::Trials(&trials)).map_err(run_err)?;
            if cfg.save_retained {
                save_retained_sets(&out, &trials).map_err(Failure::Run)?;
            }
            let s = summarize(&records);
            println!(
                "{} trials, {} ok, {} censored; median T1 {} μs",
                s.trials,
                s.succeeded,
                s.censored,
                fmt(s.median_t1_us)
            );
            for c in &s.categories {
                println!(
                    "  {:>9}: {:4} trials, mean T1 {} μs",
                    c.category.label(),
                    c.count,
                    fmt(c.mean_t1_us)
                );
            }
        }
        Command::Convergence => {
            let trials = run_convergence(&cfg, &field);
            if trials.iter().all(|t| t.error.is_some()) {
                return Err(Failure::AllTrialsFailed);
            }
            emit_figure_data(&out, &StudyOutputs::Convergence(&trials)).map_err(run_err)?;
            println!("{} trials written to {}", trials.len(), out.display());
        }
        Command::Sweep => {
            let rows = run_sweep(&cfg, &field).map_err(run_err)?;
            if rows.iter().all(|r| r.error.is_some()) {
                return Err(Failure::AllTrialsFailed);
            }
            emit_figure_data(&out, &StudyOutputs::Sweep(&rows)).map_err(run_err)?;
            for r in &rows {
                println!(
                    "dipole {} D, t1_min {} μs: T1 {} μs{}",
                    r.dipole_debye,
                    r.t1_min_us,
                    fmt(r.t1_us),
                    if r.oscillatory { " (oscillatory)" } else { "" }
                );
            }
        }
        Command::Threshold => {
            let rows = run_threshold(&cfg, &field);
            if rows.iter().all(|r| r.error.is_some()) {
                return Err(Failure::AllTrialsFailed);
            }
            emit_figure_data(&out, &StudyOutputs::Threshold(&rows)).map_err(run_err)?;
            for s in summarize_thresholds(&rows) {
                println!(
                    "dipole {} D: {} thresholds, mean {} μs, min {} μs",
                    s.dipole_debye,
                    s.found,
                    fmt(s.threshold_mean_us),
                    fmt(s.threshold_min_us)
                );
            }
        }
        Command::SynthesizeField => {
            let map = synthetic_field(&cfg.geometry, &cfg.field.synthetic).map_err(run_err)?;
            std::fs::create_dir_all(&out).map_err(|e| Failure::Run(e.into()))?;
            let path = out.join("fieldmap.txt");
            map.write(&path).map_err(run_err)?;
            println!("{}", path.display());
        }
        Command::Replay { record } => replay(&cfg, &record, &out)?,
    }
    Ok(())
}

fn replay(cfg: &RunConfig, record: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(record).map_err(|e| Failure::Config(e.into()))?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Run(e.into()))?;
    let is_retained = text
        .lines()
        .next()
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .and_then(|v| v.get("format").and_then(|f| f.as_str().map(|s| s == RETAINED_FORMAT)))
        .unwrap_or(false);
    let jobs: Vec<(usize, tlsbath::stm::EnsembleSpec, Option<RetainedSet>)> = if is_retained {
        let (header, set) = RetainedSet::read_jsonl(record).map_err(Failure::Config)?;
        vec![(0, header.spec, Some(set))]
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str::<TrialRecord>(l)
                    .map(|r| (r.trial_id, r.spec, None))
                    .map_err(|e| Failure::Config(e.into()))
            })
            .collect::<Result<_, _>>()?
    };
    let field = cfg.field().map_err(Failure::Config)?;
    let mut any_ok = false;
    for (trial_id, spec, set) in jobs {
        let set = match set {
            Some(s) => s,
            None => tlsbath::ensemble::sample_trial(cfg, &field, &spec).map_err(Failure::Run)?,
        };
        let result = evaluate_set(cfg, trial_id, spec, set);
        match &result.relaxation {
            Some(traj) => {
                any_ok = true;
                let path = out.join(format!("replay_{trial_id}.csv"));
                std::fs::write(&path, traj.to_csv()).map_err(|e| Failure::Run(e.into()))?;
                let t1 = fit_t1(traj).map(|f| f.t1).ok();
                println!(
                    "trial {trial_id} (seed {}): T1 {} μs -> {}",
                    result.record.seed,
                    fmt(t1.or(result.record.t1_q)),
                    path.display()
                );
            }
            None => eprintln!(
                "trial {trial_id} failed: {}",
                result.record.error.unwrap_or_default()
            ),
        }
    }
    if any_ok {
        Ok(())
    } else {
        Err(Failure::AllTrialsFailed)
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into())
}
