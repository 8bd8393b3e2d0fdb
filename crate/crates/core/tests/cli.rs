use std::path::Path;
use std::process::{Command, Output};

use tlsbath::analysis::TrialRecord;
use tlsbath::device::FieldMap;
use tlsbath::ensemble::{FIG2_HEADER, FIG3_HEADER, FIG4_CONVERGENCE_HEADER, FIG5_SWEEP_HEADER, FIG5_THRESHOLD_HEADER};

fn tlsbath(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlsbath"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

const SMALL: &[&str] = &["--trials", "2", "--k", "5", "--horizon", "100", "--seed", "21"];

#[test]
fn trials_are_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&tlsbath(&[&["trials"], SMALL].concat(), &a));
    ok(&tlsbath(&[&["trials"], SMALL].concat(), &b));
    for f in ["trials.jsonl", "fig2_decay.csv", "fig3_trials.csv", "fig4_stats.csv", "summary.json"] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert!(!x.is_empty() && x == y, "{f} differs between runs");
    }
    assert_eq!(first_line(&a.join("fig2_decay.csv")), FIG2_HEADER);
    assert_eq!(first_line(&a.join("fig3_trials.csv")), FIG3_HEADER);

    let text = std::fs::read_to_string(a.join("trials.jsonl")).unwrap();
    let records: Vec<TrialRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].seed, 21);
    assert_eq!(records[1].seed, 22);
    assert!(records.iter().all(|r| r.is_ok() && r.retained_k == 5));
}

#[test]
fn replay_reproduces_recorded_trial() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&tlsbath(&["trials", "--trials", "1", "--k", "5", "--horizon", "100", "--seed", "4"], &run));
    let replay = dir.path().join("replay");
    let rec = run.join("trials.jsonl");
    ok(&tlsbath(&["replay", rec.to_str().unwrap(), "--horizon", "100"], &replay));
    let csv = std::fs::read_to_string(replay.join("replay_0.csv")).unwrap();
    let fig2 = std::fs::read_to_string(run.join("fig2_decay.csv")).unwrap();
    let p_end = |s: &str| -> f64 { s.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap() };
    assert_eq!(p_end(&csv), p_end(&fig2));
}

#[test]
fn retained_sets_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "save_retained = true\ncompute_t2 = false\n").unwrap();
    let run = dir.path().join("run");
    ok(&tlsbath(&["trials", "--config", cfg.to_str().unwrap(), "--trials", "1", "--k", "4", "--horizon", "50"], &run));
    let retained = run.join("retained").join("trial_0.jsonl");
    assert!(retained.is_file());
    ok(&tlsbath(&["replay", retained.to_str().unwrap(), "--horizon", "50"], &dir.path().join("r")));
    assert!(dir.path().join("r").join("replay_0.csv").is_file());
}

#[test]
fn study_outputs_have_documented_headers() {
    let dir = tempfile::tempdir().unwrap();
    let conv = dir.path().join("conv");
    ok(&tlsbath(&["convergence", "--trials", "1", "--k", "10", "--horizon", "100"], &conv));
    assert_eq!(first_line(&conv.join("fig4_convergence.csv")), FIG4_CONVERGENCE_HEADER);

    let sweep = dir.path().join("sweep");
    ok(&tlsbath(&["sweep", "--k", "5", "--horizon", "50", "--dipole", "2", "--t1min", "1"], &sweep));
    let rows = std::fs::read_to_string(sweep.join("fig5_sweep.csv")).unwrap();
    assert_eq!(rows.lines().next().unwrap(), FIG5_SWEEP_HEADER);
    assert_eq!(rows.lines().count(), 2);

    let th = dir.path().join("th");
    ok(&tlsbath(&["threshold", "--trials", "1", "--k", "3", "--horizon", "50", "--dipole", "4"], &th));
    assert_eq!(first_line(&th.join("fig5_threshold.csv")), FIG5_THRESHOLD_HEADER);
}

#[test]
fn synthesized_field_map_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("field");
    ok(&tlsbath(&["synthesize-field"], &out));
    let map = out.join("fieldmap.txt");
    assert!(FieldMap::load(&map).unwrap().photon_scaled);
    let cfg = dir.path().join("map.toml");
    std::fs::write(&cfg, format!("[field]\npath = {:?}\n", map.to_str().unwrap())).unwrap();
    ok(&tlsbath(
        &["trials", "--config", cfg.to_str().unwrap(), "--trials", "1", "--k", "3", "--horizon", "50"],
        &dir.path().join("run"),
    ));
}

#[test]
fn bad_configuration_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "no_such_key = 3\n").unwrap();
    let o = tlsbath(&["trials", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));

    let o = tlsbath(&["trials", "--dipole", "9"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = tlsbath(&["trials", "--trials", "0"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn all_trials_failing_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // Covers only a corner of the chip, so sampling leaves the grid.
    let mut map = FieldMap::new(2, 2, (0.0, 0.0), (1.0, 1.0), vec![[1.0, 0.0, 0.0]; 4]).unwrap();
    map.photon_scaled = true;
    map.omega_q = Some(std::f64::consts::TAU * 5e9);
    let path = dir.path().join("tiny.txt");
    map.write(&path).unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, format!("[field]\npath = {:?}\n", path.to_str().unwrap())).unwrap();
    let o = tlsbath(&["trials", "--config", cfg.to_str().unwrap(), "--trials", "2"], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
