//! End-to-end runs of the `msgp` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn msgp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msgp"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = msgp(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("msgp-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn simulate_is_deterministic() {
    let dir = scratch("sim-det");
    ok(&dir, &["simulate", "--scenario", "two-region", "--seed", "7", "--out", "a.csv"]);
    ok(&dir, &["simulate", "--scenario", "two-region", "--seed", "7", "--out", "b.csv"]);
    assert_eq!(fs::read(dir.join("a.csv")).unwrap(), fs::read(dir.join("b.csv")).unwrap());
    let (pa, pb) = (json(&dir.join("a.provenance.json")), json(&dir.join("b.provenance.json")));
    assert_eq!(pa, pb);
    assert_eq!(pa["generator"], "two_region_1d");
    assert_eq!(pa["seed"], 7);
    assert_eq!(pa["format_version"], 1);
    ok(&dir, &["simulate", "--scenario", "two-region", "--seed", "8", "--out", "c.csv"]);
    assert_ne!(fs::read(dir.join("a.csv")).unwrap(), fs::read(dir.join("c.csv")).unwrap());
}

#[test]
fn simulate_row_counts() {
    let dir = scratch("sim-rows");
    ok(&dir, &["simulate", "--scenario", "pintore", "--grid", "50x50", "--out", "p.csv"]);
    let p = rows(&dir.join("p.csv"));
    assert_eq!(p.len(), 2501);
    assert_eq!(p[0], ["x1", "x2", "y", "true_component"]);

    ok(&dir, &["simulate", "--scenario", "st-cube", "--dims", "16x16x8", "--out", "c.csv"]);
    let c = rows(&dir.join("c.csv"));
    assert_eq!(c.len(), 2049);
    assert_eq!(c[0], ["x1", "x2", "x3", "y", "true_component"]);
    assert!(c[1..].iter().all(|r| r.len() == 5));
}

#[test]
fn two_iterations_warn_about_samples() {
    let dir = scratch("iters2");
    ok(&dir, &["simulate", "--seed", "1", "--out", "d.csv"]);
    ok(&dir, &["fit", "--data", "d.csv", "--out", "fit", "--iters", "2", "--k0", "4"]);
    let s = json(&dir.join("fit/summary.json"));
    let chain = &s["chains"][0];
    assert_eq!(chain["draws"], 1);
    let warnings = chain["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("insufficient samples")));
    for name in ["chain-0.ckpt", "chain-0.ckpt.json", "occupancy-0.csv"] {
        assert!(dir.join("fit").join(name).exists(), "{name}");
    }
    let occ = rows(&dir.join("fit/occupancy-0.csv"));
    assert_eq!(occ[0], ["x1", "p0", "p1", "p2", "p3"]);
    assert_eq!(occ.len(), 101);
}

#[test]
fn corrupt_row_reports_line_and_writes_nothing() {
    let dir = scratch("corrupt");
    fs::write(dir.join("d.csv"), "x1,y\n1,0.5\n2,0.1\n3,oops\n4,1.0\n").unwrap();
    let out = msgp(&dir, &["fit", "--data", "d.csv", "--out", "fit", "--iters", "10"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
    assert!(!dir.join("fit").exists());
    let leftovers: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers, vec![std::ffi::OsString::from("d.csv")]);
}

#[test]
fn exit_codes() {
    let dir = scratch("exit");
    ok(&dir, &["simulate", "--seed", "2", "--out", "d.csv"]);
    let code = |args: &[&str]| msgp(&dir, args).status.code();

    assert_eq!(code(&["fit", "--data", "d.csv", "--out", "f", "--alpha", "-1"]), Some(2));
    assert_eq!(code(&["fit", "--data", "d.csv", "--out", "f", "--kernel", "matern"]), Some(2));
    fs::write(dir.join("bad.toml"), "k0 = 3\nunknown_key = 1\n").unwrap();
    assert_eq!(code(&["fit", "--data", "d.csv", "--out", "f", "--config", "bad.toml"]), Some(2));
    assert_eq!(code(&["fit", "--data", "missing.csv", "--out", "f"]), Some(3));
    assert_eq!(code(&["predict", "--checkpoint", "d.csv", "--targets", "d.csv", "--out", "p"]), Some(3));
    assert!(!dir.join("f").exists() && !dir.join("p").exists());
}

#[test]
fn config_file_and_flags() {
    let dir = scratch("config");
    fs::write(dir.join("run.toml"), "scenario = \"pintore\"\ngrid = \"6x5\"\nseed = 3\n").unwrap();
    ok(&dir, &["simulate", "--config", "run.toml", "--out", "a.csv"]);
    assert_eq!(rows(&dir.join("a.csv")).len(), 31);
    ok(&dir, &["simulate", "--config", "run.toml", "--grid", "4x4", "--out", "b.csv"]);
    assert_eq!(rows(&dir.join("b.csv")).len(), 17);
}

#[test]
fn collisions_cite_both_rows() {
    let dir = scratch("collide");
    fs::write(dir.join("d.csv"), "x1,y\n1,0.5\n2,0.1\n2,0.7\n3,1.0\n").unwrap();
    let out = msgp(&dir, &["fit", "--data", "d.csv", "--out", "f", "--iters", "4"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lines 3 and 4"), "{err}");
    ok(&dir, &["fit", "--data", "d.csv", "--out", "f", "--iters", "4", "--collision", "average"]);
}

#[test]
fn noise_free_fit_interpolates() {
    let dir = scratch("interp");
    let sim = ["simulate", "--seed", "3", "--sigma2", "0", "--rho-left", "8", "--rho-right", "8"];
    ok(&dir, &[&sim[..], &["--out", "d.csv"]].concat());
    ok(&dir, &["fit", "--data", "d.csv", "--out", "fit", "--iters", "1000", "--k0", "3"]);
    ok(&dir, &["predict", "--checkpoint", "fit", "--targets", "d.csv", "--out", "pred"]);
    let y: Vec<f64> = rows(&dir.join("d.csv"))[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    let m = json(&dir.join("pred/metrics.json"));
    let rmse = m["rmse"].as_f64().unwrap();
    assert!(rmse < 0.05 * sd, "rmse {rmse} vs sd {sd}");
}

#[test]
fn pintore_holdout_prediction() {
    let dir = scratch("pintore");
    ok(&dir, &["simulate", "--scenario", "pintore", "--grid", "15x15", "--seed", "4", "--out", "all.csv"]);
    let lines: Vec<String> = fs::read_to_string(dir.join("all.csv")).unwrap().lines().map(String::from).collect();
    let (mut train, mut test) = (vec![lines[0].clone()], vec![lines[0].clone()]);
    for (i, l) in lines[1..].iter().enumerate() {
        if i % 5 == 2 {
            test.push(l.clone());
        } else {
            train.push(l.clone());
        }
    }
    fs::write(dir.join("train.csv"), train.join("\n")).unwrap();
    fs::write(dir.join("test.csv"), test.join("\n")).unwrap();
    ok(&dir, &["fit", "--data", "train.csv", "--cover", "test.csv", "--out", "fit", "--iters", "200", "--k0", "3"]);
    let args = ["predict", "--checkpoint", "fit/chain-0.ckpt", "--targets", "test.csv"];
    ok(&dir, &[&args[..], &["--out", "p1"]].concat());
    ok(&dir, &[&args[..], &["--out", "p2"]].concat());
    let m = json(&dir.join("p1/metrics.json"));
    for key in ["rmse", "avg_uncertainty", "format_version"] {
        assert!(m[key].is_number(), "{key}");
    }
    assert_eq!(m["targets"], 45);
    for f in ["metrics.json", "predictions.csv"] {
        assert_eq!(fs::read(dir.join("p1").join(f)).unwrap(), fs::read(dir.join("p2").join(f)).unwrap());
    }
    let p = rows(&dir.join("p1/predictions.csv"));
    assert_eq!(p[0], ["x1", "x2", "mean", "variance"]);
    assert_eq!(p.len(), 46);
}

#[test]
fn targets_without_outcomes_get_null_metrics() {
    let dir = scratch("no-y");
    ok(&dir, &["simulate", "--seed", "5", "--out", "d.csv"]);
    fs::write(dir.join("t.csv"), "x1\n10\n20.5\n").unwrap();
    ok(&dir, &["fit", "--data", "d.csv", "--out", "fit", "--iters", "20", "--k0", "2"]);
    ok(&dir, &["predict", "--checkpoint", "fit", "--targets", "t.csv", "--out", "p"]);
    assert!(json(&dir.join("p/metrics.json"))["rmse"].is_null());
    assert_eq!(rows(&dir.join("p/predictions.csv")).len(), 3);
}

#[test]
fn chains_do_not_depend_on_thread_count() {
    let dir = scratch("threads");
    ok(&dir, &["simulate", "--seed", "6", "--out", "d.csv"]);
    let run = |threads: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_msgp"))
            .args(["fit", "--data", "d.csv", "--out", out, "--iters", "60", "--k0", "3", "--chains", "3"])
            .current_dir(&dir)
            .env("MSGP_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
    };
    run("1", "a");
    run("3", "b");
    for f in ["summary.json", "chain-0.ckpt", "chain-1.ckpt", "chain-2.ckpt", "occupancy-2.csv"] {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap(), "{f}");
    }
    let s = json(&dir.join("a/summary.json"));
    let seeds: Vec<u64> = (0..3).map(|c| s["chains"][c]["seed"].as_u64().unwrap()).collect();
    assert!(seeds[0] != seeds[1] && seeds[1] != seeds[2]);
    ok(&dir, &["predict", "--checkpoint", "a", "--targets", "d.csv", "--out", "p"]);
    assert_eq!(json(&dir.join("p/metrics.json"))["draws"], 90);
}

#[test]
fn compare_reports_twelve_numbers() {
    let dir = scratch("compare");
    ok(&dir, &["simulate", "--seed", "7", "--out", "d.csv"]);
    ok(&dir, &["compare", "--data", "d.csv", "--out", "cmp", "--iters", "100", "--k0", "3"]);
    let r = json(&dir.join("cmp/report.json"));
    let regions = r["regions"].as_array().unwrap();
    assert_eq!(regions.len(), 3);
    let numbers: Vec<f64> = regions
        .iter()
        .flat_map(|g| ["msgp", "igp"].map(|m| g[m].clone()))
        .flat_map(|m| [m["rmse"].as_f64().unwrap(), m["avg_uncertainty"].as_f64().unwrap()])
        .collect();
    assert_eq!(numbers.len(), 12);
    assert!(numbers.iter().all(|v| v.is_finite() && *v > 0.0));
    assert_eq!(regions.iter().map(|g| g["held_out"].as_u64().unwrap()).collect::<Vec<_>>(), [19, 19, 19]);
    assert_eq!(rows(&dir.join("cmp/report.csv")).len(), 7);
    let curves = rows(&dir.join("cmp/variance_curves.csv"));
    assert_eq!(curves.len(), 1 + 3 * 100);
    assert_eq!(curves[0][..4], ["from", "to", "x1", "y"]);
}

#[test]
fn single_component_models_coincide() {
    let dir = scratch("one");
    ok(&dir, &["simulate", "--seed", "4", "--rho-left", "6", "--rho-right", "6", "--out", "d.csv"]);
    ok(&dir, &["compare", "--data", "d.csv", "--out", "cmp", "--iters", "200", "--k0", "1"]);
    let r = json(&dir.join("cmp/report.json"));
    for g in r["regions"].as_array().unwrap() {
        for key in ["rmse", "avg_uncertainty"] {
            let (a, b) = (g["msgp"][key].as_f64().unwrap(), g["igp"][key].as_f64().unwrap());
            assert!((a - b).abs() <= 1e-9 * a.abs(), "{key}: {a} vs {b}");
        }
    }
}

/// Fits the default two-region data and expects the short- and long-range
/// halves as two effective components. Ignored: most seeds end with one
/// component (see the README's notes on component recovery).
#[test]
#[ignore = "component recovery on the two-region data is seed dependent"]
fn two_region_fit_finds_two_components() {
    let dir = scratch("two");
    ok(&dir, &["simulate", "--seed", "7", "--out", "d.csv"]);
    ok(&dir, &["fit", "--data", "d.csv", "--out", "fit"]);
    assert_eq!(json(&dir.join("fit/summary.json"))["chains"][0]["effective_components"], 2);
}
