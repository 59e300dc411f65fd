use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ordqr::cli::{CliError, EXIT_NUMERICAL, EXIT_USER};
use ordqr::gibbs::GibbsError;

fn ordqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ordqr")).args(args).output().unwrap()
}

/// Run and return the printed run directory, asserting success.
fn ok(args: &[&str]) -> PathBuf {
    let out = ordqr(args);
    assert!(out.status.success(), "{:?} failed: {}", args, String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout).unwrap().trim())
}

fn code(args: &[&str]) -> (i32, String) {
    let out = ordqr(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TOY: &str = "subject,time,y,x1,x2\n\
1,1,1,0.5,-1.0\n1,2,2,-0.2,0.3\n1,3,3,1.0,0.1\n\
2,1,1,-0.7,0.8\n2,2,2,0.4,-0.5\n\
3,1,3,0.9,0.9\n3,2,2,-0.1,-0.2\n3,3,1,-1.2,0.4\n\
4,1,2,0.3,0.3\n4,2,3,0.6,-0.6\n";

fn toy_file(dir: &Path) -> PathBuf {
    let p = dir.join("toy.csv");
    fs::write(&p, TOY).unwrap();
    p
}

fn lines(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn fit_bookkeeping_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_file(dir.path());
    let before = fs::read(&data).unwrap();
    let args = ["fit", "--data", s(&data), "--theta", "0.5", "--iterations", "100", "--burn-in", "20", "--seed", "7"];
    let a = ok(&[&args[..], &["--out", s(&dir.path().join("a"))]].concat());
    let b = ok(&[&args[..], &["--out", s(&dir.path().join("b"))]].concat());
    assert!(a.ends_with("fit-7"));
    assert_eq!(lines(&a.join("draws-theta0.5.csv")), 1 + 80);
    assert_eq!(fs::read(a.join("draws-theta0.5.csv")).unwrap(), fs::read(b.join("draws-theta0.5.csv")).unwrap());
    assert!(a.join("summary-theta0.5.txt").exists());
    assert!(a.join("manifest.json").exists());
    assert!(a.join("draws-theta0.5.csv.meta.json").exists());
    assert_eq!(fs::read(&data).unwrap(), before);
}

#[test]
fn fit_two_quantiles_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let sim = ok(&["simulate", "--scenario", "sim2", "--n-per-subject", "5", "--seed", "3", "--out", s(&out)]);
    let fit = ok(&[
        "fit", "--data", s(&sim.join("data.csv")), "--theta", "0.25", "--theta", "0.5", "--iterations", "1500", "--burn-in", "500",
        "--chains", "2", "--dic", "--seed", "4", "--out", s(&out), "--delta-min", "-3", "--delta-max", "3",
    ]);
    for t in ["0.25", "0.5"] {
        let summary = fs::read_to_string(fit.join(format!("summary-theta{t}.csv"))).unwrap();
        assert!(summary.contains("beta_3,") && summary.contains("alpha_40,"));
        assert!(fit.join(format!("mpsrf-theta{t}.dat")).exists());
        assert!(fit.join(format!("dic-theta{t}.txt")).exists());
    }
    let side_by_side = fs::read_to_string(fit.join("summary.txt")).unwrap();
    assert!(side_by_side.contains("theta = 0.25") && side_by_side.contains("theta = 0.5"));
    assert!(side_by_side.lines().nth(1).unwrap().matches("Mean").count() == 2);
}

#[test]
fn simulate_shapes_and_equivalence() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let a = ok(&["simulate", "--scenario", "sim1", "--subjects", "40", "--n-per-subject", "5", "--seed", "9", "--out", out]);
    assert_eq!(lines(&a.join("data.csv")), 201);
    assert!(a.join("data.csv.meta.json").exists());
    let b = ok(&["simulate", "--scenario", "sim2", "--random-effect-sd", "0", "--n-per-subject", "5", "--seed", "9", "--out", &format!("{out}/b")]);
    let ys = |p: &Path| -> Vec<String> {
        fs::read_to_string(p).unwrap().lines().map(|l| l.split(',').nth(2).unwrap().to_string()).collect()
    };
    assert_eq!(ys(&a.join("data.csv")), ys(&b.join("data.csv")));
}

#[test]
fn omitted_seed_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let run = ok(&["simulate", "--scenario", "sim1", "--n-per-subject", "2", "--out", s(dir.path())]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let seed = manifest["seed"].as_u64().unwrap();
    assert!(run.ends_with(format!("simulate-{seed}")));
    assert_eq!(manifest["settings"]["seed"].as_u64(), Some(seed));
}

#[test]
fn user_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(code(&["simulate", "--scenario", "sim9", "--out", out]).0, EXIT_USER);
    assert_eq!(code(&["replicate", "--scenario", "sim1", "--replications", "0", "--out", out]).0, EXIT_USER);
    assert_eq!(code(&["fit", "--data", "/nonexistent.csv", "--out", out]).0, EXIT_USER);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "subject,time,y,x1\n1,1,1,0.5\n1,2,oops,0.1\n").unwrap();
    let (c, msg) = code(&["fit", "--data", s(&bad), "--iterations", "10", "--burn-in", "0", "--out", out]);
    assert_eq!(c, EXIT_USER);
    assert!(msg.contains("row 3"), "{msg}");
    let data = toy_file(dir.path());
    assert_eq!(code(&["fit", "--data", s(&data), "--iterations", "10", "--burn-in", "10", "--out", out]).0, EXIT_USER);
    assert_eq!(code(&["fit", "--data", s(&data), "--theta", "1.5", "--iterations", "10", "--burn-in", "0", "--out", out]).0, EXIT_USER);
}

#[test]
fn numerical_failures_map_to_3() {
    let e: CliError = GibbsError::Numerical { chain: 0, sweep: 3, parameter: "beta".into() }.into();
    assert_eq!(e.exit_code(), EXIT_NUMERICAL);
    let e: CliError = GibbsError::CutPoint { chain: 0, sweep: 3, cut: 1, lower: 1.0, upper: 0.0 }.into();
    assert_eq!(e.exit_code(), EXIT_NUMERICAL);
}

#[test]
fn replicate_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let run = ok(&[
        "replicate", "--scenario", "sim1", "--replications", "2", "--subjects", "10", "--n-per-subject", "5", "--theta", "0.5", "--theta",
        "0.25", "--iterations", "300", "--burn-in", "100", "--seed", "5", "--out", s(dir.path()),
    ]);
    let report = fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 7 * 2);
    for name in ["beta_1", "beta_2", "beta_3", "delta_1", "delta_2", "delta_3", "delta_4"] {
        assert!(report.contains(&format!(",{name},")));
    }
    assert!(fs::read_to_string(run.join("report.txt")).unwrap().contains("attrition 0"));
    assert_eq!(lines(&run.join("replications.csv")), 1 + 2 * 2);
}

#[test]
fn diagnose_stored_chains() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let data = toy_file(dir.path());
    let fit = ok(&["fit", "--data", s(&data), "--iterations", "600", "--burn-in", "100", "--seed", "2", "--out", out]);
    let draws = fit.join("draws-theta0.5.csv");
    let diag = ok(&["diagnose", "--draws", s(&draws), "--draws", s(&draws), "--mpsrf-every", "100", "--seed", "1", "--out", out]);
    let series = fs::read_to_string(diag.join("mpsrf.csv")).unwrap();
    for line in series.lines().skip(1) {
        let mut f = line.split(',');
        let t: f64 = f.next().unwrap().parse().unwrap();
        let v: f64 = f.next().unwrap().parse().unwrap();
        let n = t - 100.0;
        assert!((v - (n - 1.0) / n).abs() < 1e-12, "{line}");
    }
    assert!(diag.join("mpsrf.dat").exists());
    assert_eq!(code(&["diagnose", "--draws", s(&draws), "--mpsrf", "--out", out]).0, EXIT_USER);
    // a file with different columns
    let other = dir.path().join("other.csv");
    fs::write(&other, "chain,iteration,beta_1\n1,1,0.5\n1,2,0.4\n").unwrap();
    assert_eq!(code(&["diagnose", "--draws", s(&draws), "--draws", s(&other), "--out", out]).0, EXIT_USER);
}

#[test]
fn dic_from_stored_draws_matches_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let data = toy_file(dir.path());
    let fit = ok(&["fit", "--data", s(&data), "--iterations", "300", "--burn-in", "100", "--dic", "--seed", "3", "--out", out]);
    let diag = ok(&["diagnose", "--draws", s(&fit.join("draws-theta0.5.csv")), "--data", s(&data), "--theta", "0.5", "--seed", "3", "--out", out]);
    assert_eq!(fs::read(fit.join("dic-theta0.5.csv")).unwrap(), fs::read(diag.join("dic.csv")).unwrap());
}

#[test]
fn config_file_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_file(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("data = {:?}\niterations = 5000\nburn_in = 50\ntheta = [0.3]\nchains = 2\nseed = 11\n", s(&data))).unwrap();
    let run = ok(&["fit", "--config", s(&cfg), "--iterations", "150", "--out", s(&dir.path().join("first"))]);
    assert_eq!(lines(&run.join("draws-theta0.3.csv")), 1 + 2 * 100);
    let again = ok(&["replay", s(&run.join("manifest.json")), "--out", s(&dir.path().join("second"))]);
    let names: Vec<_> = fs::read_dir(&run).unwrap().map(|e| e.unwrap().file_name()).filter(|n| n != "manifest.json").collect();
    assert!(names.len() >= 6);
    for n in names {
        assert_eq!(fs::read(run.join(&n)).unwrap(), fs::read(again.join(&n)).unwrap(), "{n:?}");
    }
}
