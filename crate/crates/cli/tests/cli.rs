use std::path::PathBuf;
use std::process::{Command, Output};

fn kernel(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../kernels").join(name)
}

fn pwl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwl")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Data rows of a CSV with `#` metadata, split into fields.
fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn validate_reports_moments() {
    let o = pwl(&["validate", "--kernel", kernel("lazy_1d.json").to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["B"][0][0].as_f64(), Some(0.5));
    assert!((v["d"][0].as_f64().unwrap() - 0.2).abs() < 1e-15);
    assert_eq!(v["periodic"], false);
}

#[test]
fn validate_failures_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"dim":1,"P":[{"u":[-1],"w":0.25},{"u":[0],"w":0.5},{"u":[1],"w":0.25}],
            "a":[{"u":[1],"w":0.1},{"u":[-1],"w":-0.2}]}"#,
    )
    .unwrap();
    let o = pwl(&["validate", "--kernel", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NotAntisymmetric"));

    let o = pwl(&["validate", "--kernel", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = pwl(&["profile", "--kernel"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn profile_one_dimension() {
    let k = kernel("lazy_1d.json");
    let args = ["profile", "--kernel", k.to_str().unwrap(), "--n", "400", "--x-min", "-40", "--x-max", "40"];
    let o = pwl(&args);
    assert_eq!(o.status.code(), Some(0));
    let csv = stdout(&o);
    assert!(csv.contains("x_1,exact_total,gaussian,exact_correction,delta_sum,delta_quadrature,delta_closed,psi_residual"));
    let r = rows(&csv);
    assert_eq!(r.len(), 81);
    for (row, mirror) in r.iter().zip(r.iter().rev()) {
        for col in 4..=7 {
            let (a, b): (f64, f64) = (row[col].parse().unwrap(), mirror[col].parse().unwrap());
            assert!((a + b).abs() <= 1e-15, "column {col} at x = {}", row[0]);
        }
    }
    // Byte-stable across runs.
    assert_eq!(pwl(&args).stdout, o.stdout);
}

#[test]
fn profile_without_perturbation_has_no_correction() {
    let k = kernel("lazy_1d_free.json");
    let o = pwl(&["profile", "--kernel", k.to_str().unwrap(), "--n", "200", "--x-min", "-20", "--x-max", "20"]);
    assert_eq!(o.status.code(), Some(0));
    for row in rows(&stdout(&o)) {
        for v in &row[3..] {
            assert!(v.parse::<f64>().unwrap().abs() <= 1e-12);
        }
    }
}

#[test]
fn profile_two_dimensions() {
    let k = kernel("lazy_2d.json");
    let o = pwl(&["profile", "--kernel", k.to_str().unwrap(), "--n", "100", "--x-min", "-20", "--x-max", "20"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(rows(&stdout(&o)).len(), 41 * 41);
}

#[test]
fn scale_guard_and_box_policy() {
    let k = kernel("lazy_1d.json");
    let k = k.to_str().unwrap();
    let far = ["profile", "--kernel", k, "--n", "100", "--x-min", "-60", "--x-max", "60"];
    assert_eq!(pwl(&far).status.code(), Some(2));
    let mut unsafe_args = far.to_vec();
    unsafe_args.push("--unsafe-scale");
    let o = pwl(&unsafe_args);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let o = pwl(&["profile", "--kernel", k, "--n", "10", "--x-min", "-2", "--x-max", "2", "--radius", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("BoxTooSmall"));
    let periodic = kernel("nn_2d.json");
    let o = pwl(&["profile", "--kernel", periodic.to_str().unwrap(), "--n", "10", "--x-min", "-2", "--x-max", "2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_ladder_csv() {
    let k = kernel("lazy_1d.json");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ladder.csv");
    let o = pwl(&[
        "sweep", "--kernel", k.to_str().unwrap(), "--n", "100,200,400", "--x-min", "1", "--x-max", "3",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(out).unwrap();
    assert!(csv.contains("n,x_1,exact_correction,delta_quadrature,scaled_remainder"));
    let r = rows(&csv);
    assert_eq!(r.len(), 9);
    // The remainder at x = 3 halves with each doubling of n.
    let at3: Vec<f64> = r.iter().filter(|row| row[1] == "3").map(|row| row[4].parse().unwrap()).collect();
    assert!(at3.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn sample_is_reproducible_and_thread_independent() {
    let k = kernel("lazy_2d.json");
    let args = ["sample", "--kernel", k.to_str().unwrap(), "--n", "8", "--samples", "200000", "--seed", "9"];
    let a = pwl(&args);
    assert_eq!(a.status.code(), Some(0));
    let b = Command::new(env!("CARGO_BIN_EXE_pwl")).args(args).env("PWL_THREADS", "1").output().unwrap();
    assert_eq!(a.stdout, b.stdout);
    let total: u64 = rows(&stdout(&a)).iter().map(|r| r[3].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 200_000);
    let o = Command::new(env!("CARGO_BIN_EXE_pwl")).args(args).env("PWL_THREADS", "0").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn quick_verification_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let started = std::time::Instant::now();
    let o = pwl(&["verify", "--quick", "--out", out.to_str().unwrap()]);
    assert!(started.elapsed().as_secs() < 30);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["measured"].is_number() && c["tolerance"].is_number()));
    assert!(checks.iter().any(|c| c["name"] == "return_probability_identity"));
}
