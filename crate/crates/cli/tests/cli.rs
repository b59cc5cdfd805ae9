use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_adaptspecx"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const CONFIG: &str = "[chain]\niterations = 30\nburn_in = 10\nthin = 2\nchunk_size = 4\n\
[prior]\nn_basis = 6\nmin_segment_length = 16\n[mixture]\nn_components = 3\nn_gp_basis = 2\n";

/// Simulated data plus a fitted store under `dir`.
fn fitted(dir: &Path, threads: &str) {
    let d = dir.to_str().unwrap();
    ok(&["simulate", "--out", &format!("{d}/data"), "--n-series", "8", "--length", "64", "--seed", "3"]);
    fs::write(dir.join("run.toml"), CONFIG).unwrap();
    ok(&[
        "fit",
        "--series",
        &format!("{d}/data/series.csv"),
        "--covariates",
        &format!("{d}/data/covariates.csv"),
        "--config",
        &format!("{d}/run.toml"),
        "--out",
        &format!("{d}/store"),
        "--threads",
        threads,
    ]);
}

#[test]
fn simulate_fit_summarize_predict_mse_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    fitted(tmp.path(), "1");
    for f in ["series.csv", "covariates.csv", "truth.csv", "evaluation_points.csv"] {
        assert!(tmp.path().join("data").join(f).exists(), "{f}");
    }
    for f in ["manifest.json", "chain_0/chain.json", "chain_0/diagnostics.csv", "chain_0/checkpoint.msgpack", "chain_0/chunk_00000.msgpack"] {
        assert!(tmp.path().join("store").join(f).exists(), "{f}");
    }
    ok(&["summarize", "--store", &format!("{d}/store"), "--out", &format!("{d}/sum.csv"), "--predicate", "mu(60) < mu(5)"]);
    let sum = fs::read_to_string(tmp.path().join("sum.csv")).unwrap();
    assert!(sum.starts_with("t,omega,point,statistic,value\n"));
    for stat in ["mu_mean", "mu_q0.025", "mu_q0.5", "mu_q0.975", "sigma2_mean", "sigma2_q0.5", "log_f_mean", "prob:mu(60) < mu(5)"] {
        assert!(sum.contains(&format!(",{stat},")), "{stat}");
    }
    // 8 series, 64 times, 128 frequencies
    assert_eq!(sum.lines().filter(|l| l.contains(",log_f_mean,")).count(), 8 * 64 * 128);

    ok(&["predict", "--store", &format!("{d}/store"), "--points", &format!("{d}/data/evaluation_points.csv"), "--out", &format!("{d}/pred.csv")]);
    let out = run(&["mse", "--estimate", &format!("{d}/pred.csv"), "--truth", &format!("{d}/data/truth.csv")]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "point,mse_mean,mse_spec");
    assert_eq!(lines.len(), 9);
    for l in &lines[1..] {
        let v: Vec<f64> = l.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0), "{l}");
    }
}

#[test]
fn predict_at_observed_covariate_equals_plug_in_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    fitted(tmp.path(), "0");
    let covs = fs::read_to_string(tmp.path().join("data/covariates.csv")).unwrap();
    let mut lines = covs.lines();
    let header = lines.next().unwrap();
    let row = lines.nth(2).unwrap();
    let (name, values) = row.split_once(',').unwrap();
    let (_, cov_names) = header.split_once(',').unwrap();
    fs::write(tmp.path().join("pts.csv"), format!("point,{cov_names}\nP,{values}\n")).unwrap();
    let pred = ["--predicate", "sigma2(10) > sigma2(50)"];
    let store = format!("{d}/store");
    let mut a = vec!["predict", "--store", &store];
    let pts = format!("{d}/pts.csv");
    let pa = format!("{d}/a.csv");
    a.extend(["--points", &pts, "--out", &pa]);
    a.extend(pred);
    ok(&a);
    let series = format!("{name}=P");
    let pb = format!("{d}/b.csv");
    let mut b = vec!["summarize", "--store", &store, "--series", &series, "--weighting", "plug-in", "--out", &pb];
    b.extend(pred);
    ok(&b);
    assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    fitted(a.path(), "1");
    fitted(b.path(), "3");
    for f in ["manifest.json", "chain_0/chain.json", "chain_0/diagnostics.csv", "chain_0/checkpoint.msgpack", "chain_0/chunk_00000.msgpack", "chain_0/chunk_00001.msgpack"] {
        assert_eq!(fs::read(a.path().join("store").join(f)).unwrap(), fs::read(b.path().join("store").join(f)).unwrap(), "{f}");
    }
    for (dir, threads) in [(a.path(), "1"), (b.path(), "4")] {
        let d = dir.to_str().unwrap();
        ok(&["summarize", "--store", &format!("{d}/store"), "--out", &format!("{d}/s.csv"), "--threads", threads, "--no-spectrum"]);
    }
    assert_eq!(fs::read(a.path().join("s.csv")).unwrap(), fs::read(b.path().join("s.csv")).unwrap());
}

#[test]
fn validation_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    ok(&["simulate", "--out", &format!("{d}/data"), "--n-series", "6", "--length", "64"]);
    let series = format!("{d}/data/series.csv");
    let covs = format!("{d}/data/covariates.csv");
    let store = format!("{d}/store");
    let out = run(&["fit", "--series", &series, "--covariates", &covs, "--out", &store, "--iterations", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iterations must exceed burn-in"));

    fs::write(tmp.path().join("bad.toml"), "[chain]\niterations = 10\nburn_in = [1]\n").unwrap();
    let cfg = format!("{d}/bad.toml");
    let out = run(&["fit", "--series", &series, "--covariates", &covs, "--out", &store, "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3, column 11"), "{}", String::from_utf8_lossy(&out.stderr));

    let text = fs::read_to_string(&series).unwrap().replacen("\n2,", "\n2,oops", 1);
    fs::write(&series, text).unwrap();
    let out = run(&["fit", "--series", &series, "--covariates", &covs, "--out", &store, "--iterations", "5", "--burn-in", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3, column"), "{}", String::from_utf8_lossy(&out.stderr));
}
