use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bmc(args);
    assert!(
        out.status.success(),
        "bmc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const SMALL: [&str; 10] =
    ["--dims", "12x10", "--rank", "2", "--trials", "2", "--max-iters", "40", "--rho", "0.5"];

fn synth(cmd: &str, extra: &[&str], out: &Path) -> String {
    let mut args = vec![cmd];
    args.extend_from_slice(&SMALL);
    if !extra.contains(&"--seed") {
        args.extend_from_slice(&["--seed", "9"]);
    }
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", out.to_str().unwrap()]);
    ok(&args)
}

#[test]
fn sweeps_write_expected_tables() {
    let dir = tempfile::tempdir().unwrap();
    synth("synth-punu", &["--points", "3"], dir.path());
    synth("synth-pnu", &["--points", "3"], dir.path());
    synth("synth-tri", &["--m", "2"], dir.path());
    for (name, header, rows) in [
        ("punu", "gamma,mean_error,std_error", 3),
        ("pnu", "eta,mean_error,std_error", 3),
        ("tri", "gamma_pn,gamma_pu,gamma_nu,mean_error,std_error", 6),
    ] {
        let csv = read(&dir.path().join(format!("{name}.csv")));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], header);
        assert_eq!(lines.len(), rows + 1, "{name}");
        let manifest = read(&dir.path().join(format!("{name}.manifest")));
        assert!(manifest.contains("seed=9"), "{manifest}");
        assert!(manifest.contains("argv.0="));
        assert!(manifest.contains("point.0.risk_sum="));
        assert!(manifest.contains("point.0.risk_mean="));
    }
    let pnu = read(&dir.path().join("pnu.csv"));
    assert!(pnu.lines().nth(1).unwrap().starts_with("-1,"));
    assert!(pnu.lines().nth(3).unwrap().starts_with("1,"));
}

#[test]
fn identical_runs_and_reruns_agree_bitwise() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    synth("synth-pnu", &["--points", "3"], a.path());
    synth("synth-pnu", &["--points", "3"], b.path());
    let first = read(&a.path().join("pnu.csv"));
    assert_eq!(first, read(&b.path().join("pnu.csv")));

    let manifest = a.path().join("pnu.manifest");
    ok(&["rerun", manifest.to_str().unwrap(), "--out", c.path().to_str().unwrap()]);
    assert_eq!(first, read(&c.path().join("pnu.csv")));
}

#[test]
fn observations_export_and_rho_mismatch_note() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["synth-punu", "--points", "2", "--export-observations"];
    args.extend_from_slice(&["--rho-assumed", "0.4"]);
    let out_dir = dir.path().to_str().unwrap();
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(&["--out", out_dir]);
    let run = bmc(&args);
    assert!(run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("rho=0.4"));
    for t in 0..2 {
        let csv = read(&dir.path().join(format!("observations_trial{t}.csv")));
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("i,j,value"));
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            assert!(f[0].parse::<usize>().unwrap() < 12 && f[1].parse::<usize>().unwrap() < 10);
            assert!(f[2] == "1" || f[2] == "-1");
        }
    }
}

#[test]
fn different_seeds_differ() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth("synth-punu", &["--points", "2"], a.path());
    synth("synth-punu", &["--points", "2", "--seed", "10"], b.path());
    assert_ne!(read(&a.path().join("punu.csv")), read(&b.path().join("punu.csv")));
}

#[test]
fn constants_prints_logistic_values() {
    let out = ok(&["constants", "--alpha", "1"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "qpf,alpha,l_alpha,beta_alpha,u_alpha");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[1], "1");
    assert_eq!(fields[2].parse::<f64>().unwrap(), 1.0);
    let beta: f64 = fields[3].parse().unwrap();
    let e = std::f64::consts::E;
    let expected = (1.0 + e) * (1.0 + e) / e;
    assert!((beta - expected).abs() <= 1e-9 * expected);
}

#[test]
fn invalid_inputs_exit_with_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    for args in [
        vec!["synth-punu", "--rho", "1.5", "--out", out_dir],
        vec!["synth-punu", "--dims", "0x4", "--out", out_dir],
        vec!["synth-tri", "--m", "0", "--out", out_dir],
        vec!["constants", "--alpha", "-1"],
        vec!["movielens", "--data", "/nonexistent/u.data", "--out", out_dir],
        vec!["rerun", "/nonexistent/run.manifest"],
    ] {
        let out = bmc(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"), "{args:?}");
    }
}

fn write_ratings(path: &Path) {
    let mut text = String::new();
    for user in 1..=12u32 {
        for item in 1..=15u32 {
            if (user + 2 * item) % 3 != 0 {
                let rating = 1 + (user * 7 + item * 3) % 5;
                text.push_str(&format!("{user}\t{item}\t{rating}\t{}\n", user * 1000 + item));
            }
        }
    }
    fs::write(path, text).unwrap();
}

#[test]
fn movielens_small_run_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("u.data");
    write_ratings(&data);
    let out = dir.path().join("out");
    ok(&[
        "movielens", "--data", data.to_str().unwrap(), "--n-validation", "20", "--n-test", "20",
        "--alphas", "1", "--ranks", "2", "--m", "2", "--trials", "2", "--max-iters", "30",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(
        read(&out.join("movielens_stage1.csv")).lines().next(),
        Some("alpha,rank,validation_error")
    );
    for name in ["pn_validation", "pn_test", "tri_validation", "tri_test"] {
        let csv = read(&out.join(format!("movielens_{name}.csv")));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "rating,count,error");
        assert_eq!(lines.len(), 7);
        assert!(lines[6].starts_with("overall,40,"), "{name}: {}", lines[6]);
    }
    assert_eq!(read(&out.join("movielens_weights_validation.csv")).lines().count(), 7);
    let manifest = read(&out.join("movielens.manifest"));
    assert!(manifest.contains("tri.trial.1.seed="));
}

#[test]
fn movielens_without_validation_only_trains() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("u.data");
    write_ratings(&data);
    let out = dir.path().join("out");
    let stdout = ok(&[
        "movielens", "--data", data.to_str().unwrap(), "--n-validation", "0", "--n-test", "0",
        "--alphas", "1", "--ranks", "2", "--max-iters", "20", "--out", out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("training-only"));
    assert!(!out.join("movielens_pn_validation.csv").exists());
}
