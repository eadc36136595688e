use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dfa-fusion");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, profile: &str, seed: &str, duration: &str) {
    let out = run(&["simulate", "--profile", profile, "--duration", duration, "--seed", seed, "--out-dir", p(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn fuse(dir: &Path, mode: &str, tag: &str) -> Output {
    let f = |name: &str| dir.join(format!("{tag}_{name}"));
    run(&[
        "fuse",
        "--gps",
        p(&dir.join("gps.nmea")),
        "--imu",
        p(&dir.join("imu.csv")),
        "--mode",
        mode,
        "--out-traj",
        p(&f("traj.csv")),
        "--out-err",
        p(&f("err.csv")),
        "--out-models",
        p(&f("models.csv")),
        "--out-report",
        p(&f("report.json")),
        "--out-geojson",
        p(&f("traj.geojson")),
        "--truth",
        p(&dir.join("truth.csv")),
    ])
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn simulate_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "varying_speed", "5", "60");
    let gps = read(&dir.path().join("gps.nmea"));
    assert_eq!(gps.lines().count(), 60);
    assert!(gps.lines().all(|l| l.starts_with("$GPGGA,")));
    let imu = read(&dir.path().join("imu.csv"));
    assert_eq!(imu.lines().next(), Some("t,ax,ay,az"));
    assert_eq!(imu.lines().count(), 3001);
    let truth = read(&dir.path().join("truth.csv"));
    assert_eq!(truth.lines().next(), Some("t,east,north,up,ve,vn,vu"));
    let meta: serde_json::Value = serde_json::from_str(&read(&dir.path().join("meta.json"))).unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["gps_sigma_m"], 2.5);
}

#[test]
fn fuse_outputs_are_consistent_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "varying_speed", "2", "60");
    for tag in ["a", "b"] {
        let out = fuse(dir.path(), "dfa", tag);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("truth rms"));
    }
    for name in ["traj.csv", "err.csv", "models.csv", "traj.geojson"] {
        let a = std::fs::read(dir.path().join(format!("a_{name}"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b_{name}"))).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }

    let report: serde_json::Value = serde_json::from_str(&read(&dir.path().join("a_report.json"))).unwrap();
    let traj = read(&dir.path().join("a_traj.csv"));
    assert_eq!(traj.lines().count() as u64 - 1, report["cycles"].as_u64().unwrap());
    let occ: f64 = report["occupancy"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((occ - 1.0).abs() < 1e-9);

    // every magnitude is recomputable from its own row
    for line in read(&dir.path().join("a_err.csv")).lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[5], (v[2] * v[2] + v[3] * v[3] + v[4] * v[4]).sqrt());
    }

    let geo: serde_json::Value = serde_json::from_str(&read(&dir.path().join("a_traj.geojson"))).unwrap();
    let features = geo["features"].as_array().unwrap();
    assert!(!features.is_empty());
    for pair in features.windows(2) {
        assert_ne!(pair[0]["properties"]["model"], pair[1]["properties"]["model"]);
        let last = pair[0]["geometry"]["coordinates"].as_array().unwrap().last().unwrap().clone();
        assert_eq!(last, pair[1]["geometry"]["coordinates"][0]);
    }
}

#[test]
fn static_mode_only_reports_p1() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "scripted_waypoints", "3", "40");
    assert!(fuse(dir.path(), "static", "s").status.success());
    let models = read(&dir.path().join("s_models.csv"));
    assert!(models.lines().skip(1).all(|l| l.ends_with(",1,1")));
    assert!(read(&dir.path().join("s_traj.csv")).lines().skip(1).all(|l| l.ends_with(",1")));
}

#[test]
fn compare_reports_improvement_and_rejects_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "stationary", "1", "30");
    assert!(fuse(dir.path(), "dfa", "d").status.success());
    assert!(fuse(dir.path(), "static", "s").status.success());
    let a = dir.path().join("d_report.json");
    let b = dir.path().join("s_report.json");
    let json = dir.path().join("cmp.json");
    let out = run(&["compare", "--a", p(&a), "--b", p(&b), "--out", p(&json)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("improvement"));
    let cmp: serde_json::Value = serde_json::from_str(&read(&json)).unwrap();
    let (ra, rb) = (cmp["rms_a_m"].as_f64().unwrap(), cmp["rms_b_m"].as_f64().unwrap());
    assert!((cmp["improvement_pct"].as_f64().unwrap() - (rb - ra) / rb * 100.0).abs() < 1e-9);

    let same = run(&["compare", "--a", p(&a), "--b", p(&a)]);
    assert!(String::from_utf8_lossy(&same.stdout).contains("improvement 0.00%"));

    let other = tempfile::tempdir().unwrap();
    simulate(other.path(), "stationary", "2", "30");
    assert!(fuse(other.path(), "static", "s").status.success());
    let out = run(&["compare", "--a", p(&a), "--b", p(&other.path().join("s_report.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different inputs"));
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "stationary", "1", "10");
    let gps = dir.path().join("gps.nmea");
    let missing = run(&["fuse", "--gps", p(&dir.path().join("nope.nmea")), "--imu", p(&dir.path().join("imu.csv"))]);
    assert_eq!(missing.status.code(), Some(1));

    let bad_imu = dir.path().join("bad.csv");
    std::fs::write(&bad_imu, "t,ax,ay,az\n0,0,0,0\n0.02,zero,0,0\n").unwrap();
    let out = run(&["fuse", "--gps", p(&gps), "--imu", p(&bad_imu)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:3"));

    // IMU log entirely after the GPS log
    let late = dir.path().join("late.csv");
    let rows: String = (0..100).map(|k| format!("{},0,0,0\n", 1000.0 + k as f64 * 0.02)).collect();
    std::fs::write(&late, format!("t,ax,ay,az\n{rows}")).unwrap();
    let out = run(&["fuse", "--gps", p(&gps), "--imu", p(&late)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlap"));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "sigma_gsp_m = 1\n").unwrap();
    let out = run(&["fuse", "--gps", p(&gps), "--imu", p(&dir.path().join("imu.csv")), "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["simulate", "--profile", "sprint", "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn degenerate_noise_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "stationary", "1", "10");
    // every variance underflows to zero, so the innovation covariance is singular
    let cfg = dir.path().join("zero.cfg");
    std::fs::write(&cfg, "sigma_gps_m = 1e-200\nsigma_accel = 1e-200\np0_pos_m = 1e-200\np0_vel = 1e-200\n").unwrap();
    let out = run(&[
        "fuse",
        "--gps",
        p(&dir.path().join("gps.nmea")),
        "--imu",
        p(&dir.path().join("imu.csv")),
        "--config",
        p(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
