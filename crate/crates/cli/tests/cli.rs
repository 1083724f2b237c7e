use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn analyze(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_analyze"))
        .args(args)
        .env_remove("ANALYZE_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) {
    let out = analyze(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data rows of a CSV, skipping the provenance line and the header.
fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn same_files(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn global_writes_provenance_and_is_reproducible() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&["global", "-m", "f3", "--samples", "20000", "--seed", "3", "-o", s(&a)]);
    ok(&["global", "-m", "f3", "--samples", "20000", "--seed", "3", "-o", s(&b), "--workers", "1"]);
    same_files(&a, &b);

    let text = fs::read_to_string(a.join("global_metrics.csv")).unwrap();
    let mut lines = text.lines();
    let prov = lines.next().unwrap();
    assert!(prov.starts_with("# analyze ") && prov.contains(" config=") && prov.ends_with(" seed=3"), "{prov}");
    assert_eq!(lines.next().unwrap(), "metric,x1,x2");
    let labels: Vec<String> = rows(&a.join("global_metrics.csv")).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(labels, ["activity", "activity_raw", "mu", "mu_star", "sigma", "S_i", "S_Ti"]);
    let sub: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("global_subspace.json")).unwrap()).unwrap();
    assert_eq!(sub["eigenvalues"].as_array().unwrap().len(), 2);
}

#[test]
fn usage_errors_exit_with_two() {
    let t = TempDir::new().unwrap();
    let o = t.path().join("o");
    for args in [
        vec!["global", "-o", s(&o)],
        vec!["global", "-m", "f9", "-o", s(&o)],
        vec!["global", "-m", "f1", "--methods", "activity,magic", "-o", s(&o)],
        vec!["gradfield", "-m", "lotka-volterra", "-o", s(&o)],
        vec!["surrogate", "-m", "f3", "--region", "7,0", "--bins", "4", "-o", s(&o)],
        vec!["surrogate", "-m", "f3", "-o", s(&o)],
        vec!["surrogate", "-m", "f3", "--bounds", "0:2,0:1", "-o", s(&o)],
        vec!["calibrate", "-m", "f1", "--ks", "3", "-o", s(&o)],
        vec!["run", "-m", "f1", "-o", s(&o)],
        vec!["bogus"],
    ] {
        let out = analyze(&args);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn config_file_is_validated_and_flags_override_it() {
    let t = TempDir::new().unwrap();
    let cfg = t.path().join("run.json");
    fs::write(&cfg, r#"{"model": "f1", "bins": 0, "region_samples": 0}"#).unwrap();
    let out = analyze(&["global", "-c", s(&cfg)]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bins:") && err.contains("region_samples:"), "{err}");

    fs::write(&cfg, r#"{"model": "f1", "colour": "red"}"#).unwrap();
    assert_eq!(code(&analyze(&["global", "-c", s(&cfg)])), 2);

    let o = t.path().join("o");
    fs::write(&cfg, r#"{"model": "f1", "seed": 5, "experiment": "gradfield", "gradfield": {"bins": 3}}"#).unwrap();
    ok(&["run", "-c", s(&cfg), "--seed", "9", "-o", s(&o)]);
    let text = fs::read_to_string(o.join("gradfield.csv")).unwrap();
    assert!(text.lines().next().unwrap().ends_with("seed=9"));
    assert_eq!(rows(&o.join("gradfield.csv")).len(), 9 + 1);
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let t = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_analyze"))
        .args(["global", "-m", "f1", "--samples", "500", "--methods", "activity"])
        .env("ANALYZE_OUTPUT_DIR", t.path().join("env"))
        .current_dir(t.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(t.path().join("env/global_metrics.csv").exists());
}

#[test]
fn stability_is_reproducible_serial_and_resumable() {
    let t = TempDir::new().unwrap();
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    let args = |dir: &Path| -> Vec<String> {
        ["stability", "-m", "f3", "--bins", "20", "--samples", "5000", "--methods", "activity,morris", "-o", s(dir)]
            .map(String::from)
            .to_vec()
    };
    let run = |dir: &Path, extra: &[&str]| {
        let mut v = args(dir);
        v.extend(extra.iter().map(|x| x.to_string()));
        ok(&v.iter().map(String::as_str).collect::<Vec<_>>());
    };
    run(&a, &[]);
    run(&b, &["--workers", "1"]);
    same_files(&a, &b);

    // interrupted run: keep a prefix that ends mid-row
    fs::create_dir_all(&c).unwrap();
    let full = fs::read(a.join("regions.csv")).unwrap();
    fs::write(c.join("regions.csv"), &full[..full.len() / 3]).unwrap();
    run(&c, &["--resume"]);
    same_files(&a, &c);

    let census = rows(&a.join("census.csv"));
    let total: u64 = census.iter().filter(|r| r[0] == "activity").map(|r| r[3].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 400);
    let map = rows(&a.join("distance_map.csv"));
    assert_eq!(map.len(), 20);
    assert!(map.iter().all(|r| r.len() == 3));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["regions_succeeded"], 400);
    assert!(summary["metrics"]["morris"]["unique_count"].as_u64().unwrap() >= 1);

    // a checkpoint from a different configuration is refused
    let out = analyze(&["stability", "-m", "f2", "--bins", "20", "-o", s(&c), "--resume"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradfield_directions() {
    let t = TempDir::new().unwrap();
    let o = t.path().join("f1");
    ok(&["gradfield", "-m", "f1", "--bins", "7", "--at", "0.2,0.9", "-o", s(&o)]);
    let norm = (0.7f64 * 0.7 + 0.3 * 0.3).sqrt();
    let r = rows(&o.join("gradfield.csv"));
    assert_eq!(r.len(), 49 + 1 + 1);
    assert_eq!(r.last().unwrap()[0], "global");
    for row in &r {
        let d: Vec<f64> = row[3..5].iter().map(|v| v.parse().unwrap()).collect();
        assert!((d[0] - 0.7 / norm).abs() < 1e-6 && (d[1] - 0.3 / norm).abs() < 1e-6, "{row:?}");
    }

    let o = t.path().join("f3");
    ok(&["gradfield", "-m", "f3", "--at", "0.01,0.5", "-o", s(&o)]);
    let r = rows(&o.join("gradfield.csv"));
    let p = r.iter().find(|row| row[0] == "point").unwrap();
    let d: Vec<f64> = p[3..5].iter().map(|v| v.parse().unwrap()).collect();
    let angle = d[1].abs().clamp(-1.0, 1.0).acos().to_degrees();
    assert!(angle < 2.0, "{angle} degrees from e2");
}

#[test]
fn surrogate_tables() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let args = ["surrogate", "-m", "f2", "--bins", "4", "--region", "1,2", "--train", "60", "--test", "40"];
    ok(&[&args[..], &["-o", s(&a)]].concat());
    ok(&[&args[..], &["-o", s(&b)]].concat());
    same_files(&a, &b);
    let cmp = rows(&a.join("surrogate_comparison.csv"));
    assert_eq!(cmp.iter().map(|r| (r[0].as_str(), r[1].as_str())).collect::<Vec<_>>(), [("1", "global"), ("1", "local")]);
    assert_eq!(rows(&a.join("surrogate_candidates.csv")).len(), 6);
    assert_eq!(rows(&a.join("surrogate_points.csv")).len(), 80);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("surrogate_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["lower"], serde_json::json!([0.25, 0.5]));

    let c = t.path().join("c");
    ok(&["surrogate", "-m", "f2", "--bounds", "0.25:0.5,0.5:0.75", "--train", "60", "--test", "40", "-o", s(&c)]);
    assert_eq!(rows(&c.join("surrogate_comparison.csv")).len(), 2);
}

#[test]
fn calibration_tables() {
    let t = TempDir::new().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let args = [
        "calibrate", "-m", "f2", "--bins", "5", "--regions", "6", "--iterations", "1600", "--burn-in", "400",
    ];
    ok(&[&args[..], &["-o", s(&a)]].concat());
    ok(&[&args[..], &["-o", s(&b), "--workers", "1"]].concat());
    same_files(&a, &b);
    let r = rows(&a.join("calibration.csv"));
    assert_eq!(r.len(), 12);
    assert!(r.iter().filter(|row| row[1] == "2").all(|row| row[6] == "tie"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("calibration_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["per_k"]["2"]["tie"], 100.0);

    // rankings reused from a stability run give the same table
    let st = t.path().join("st");
    ok(&["stability", "-m", "f2", "--bins", "5", "-o", s(&st)]);
    let c = t.path().join("c");
    ok(&[&args[..], &["-o", s(&c), "--stability-dir", s(&st)]].concat());
    assert_eq!(rows(&c.join("calibration.csv")), r);

    let out = analyze(&[&args[..], &["-o", s(&c), "--stability-dir", s(&st), "--seed", "4"]].concat());
    assert_eq!(code(&out), 2, "plan mismatch must be refused");
}
