use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn qlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlink")).args(args).output().expect("spawn qlink")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn run_config(dir: &Path, body: &str) -> (Output, std::path::PathBuf) {
    let cfg = write_config(dir, "run.toml", body);
    let out = dir.join("out");
    let o = qlink(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    (o, out)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = r#"
[lattice]
L = 4
boundary = "obc"

[couplings]
J = 1.0
K = 4.0
h = 0.5
eps1 = 1.0
eps2 = 1.0

[protocol]
kind = "full"
frequency = 6.2

[run]
n_periods = 20
stride = 5
qmm = "dk.."
observables = ["G_1", "nd", "violG"]
"#;

#[test]
fn run_writes_series_sidecar_and_resolved_config() {
    let dir = TempDir::new().unwrap();
    let (o, out) = run_config(dir.path(), SMALL);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("timeseries.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "step,t,G_1,nd_0,nd_1,nd_2,nd_3,violG");
    assert_eq!(lines.count(), 5);
    let meta = json(&out.join("timeseries.json"));
    assert_eq!(meta["config"]["lattice"]["L"], 4);
    assert_eq!(meta["protocol"]["kind"], "full");
    let resolved = std::fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("dense_limit"));
    assert!(resolved.contains("orders"));
    let dat = std::fs::read_to_string(out.join("timeseries_nd_0.dat")).unwrap();
    assert_eq!(dat.lines().nth(1).unwrap().split_whitespace().count(), 2);
}

#[test]
fn empty_observables_give_header_only_csv() {
    let dir = TempDir::new().unwrap();
    let body = SMALL.replace(r#"observables = ["G_1", "nd", "violG"]"#, "observables = []");
    let (o, out) = run_config(dir.path(), &body);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(out.join("timeseries.csv")).unwrap(), "step,t\n");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let body = SMALL.replace("kind = \"full\"", "kind = \"full\"\nperiodz = 3");
    let (o, out) = run_config(dir.path(), &body);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
    assert!(!out.exists());
}

#[test]
fn invalid_values_fail_with_a_diagnostic() {
    let dir = TempDir::new().unwrap();
    for (from, to) in [("L = 4", "L = 0"), ("frequency = 6.2", "frequency = -1.0"), (r#"qmm = "dk..""#, r#"qmm = "kk..""#)] {
        let (o, _) = run_config(dir.path(), &SMALL.replace(from, to));
        assert!(!o.status.success(), "{to}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    }
}

#[test]
fn identical_configs_give_identical_bytes() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (oa, out_a) = run_config(a.path(), SMALL);
    let (ob, out_b) = run_config(b.path(), SMALL);
    assert!(oa.status.success() && ob.status.success());
    for f in ["timeseries.csv", "timeseries.json", "config.resolved.toml"] {
        assert_eq!(std::fs::read(out_a.join(f)).unwrap(), std::fs::read(out_b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn vacuum_stays_frozen_and_quench_breaks_protection() {
    let dir = TempDir::new().unwrap();
    let vacuum = SMALL
        .replace("L = 4", "L = 10")
        .replace(r#"qmm = "dk..""#, r#"pattern = "dddddddddddddddddddd""#)
        .replace("n_periods = 20", "n_periods = 200")
        .replace("stride = 5", "stride = 50");
    let (o, out) = run_config(dir.path(), &vacuum);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("timeseries.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let g1: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((g1 - 1.0).abs() < 1e-8);
    }

    let gs1 = SMALL.replace("L = 4", "L = 6").replace(r#"qmm = "dk..""#, r#"qmm = "dk....""#);
    let read_viol = |body: &str| -> f64 {
        let d = TempDir::new().unwrap();
        let (o, out) = run_config(d.path(), body);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let ts = std::fs::read_to_string(out.join("timeseries.csv")).unwrap();
        ts.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).fold(0.0, f64::max)
    };
    let driven = read_viol(&gs1);
    let quench = read_viol(&gs1.replace("kind = \"full\"", "kind = \"quench\"").replace("frequency = 6.2", "frequency = 0.25"));
    assert!(driven < 0.05, "driven {driven}");
    assert!(quench > 0.2, "quench {quench}");
}

#[test]
fn fit_recovers_quadratic_growth() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("step,t,nd_0\n");
    for i in 0..50 {
        let t = 0.1 * i as f64;
        csv.push_str(&format!("{i},{t},{}\n", 1.0 - 0.003 * t * t));
    }
    let input = dir.path().join("series.csv");
    std::fs::write(&input, csv).unwrap();
    let out = dir.path().join("fit");
    let o = qlink(&["fit", "--input", input.to_str().unwrap(), "--column", "nd_0", "--window", "0.5,4.0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("fit.json"));
    assert!((r["result"]["exponent"].as_f64().unwrap() - 2.0).abs() < 1e-9);

    let o = qlink(&["fit", "--input", input.to_str().unwrap(), "--column", "nd_0", "--kind", "lifetime", "--threshold", "0.97"]);
    assert!(o.status.success());
    let t: f64 = String::from_utf8_lossy(&o.stdout).trim().trim_start_matches("lifetime ").parse().unwrap();
    assert!((t - 10f64.sqrt()).abs() < 0.05, "{t}");

    let o = qlink(&["fit", "--input", input.to_str().unwrap(), "--column", "nk_0", "--window", "0.5,4.0"]);
    assert!(!o.status.success());
}

#[test]
fn reduced_model_tracks_effective_dynamics() {
    let dir = TempDir::new().unwrap();
    let body = SMALL
        .replace("L = 4", "L = 6")
        .replace("\"obc\"", "\"pbc\"")
        .replace("h = 0.5", "h = 0.0")
        .replace("kind = \"full\"", "kind = \"simple\"")
        .replace(r#"qmm = "dk..""#, r#"qmm = "dk....""#)
        .replace("n_periods = 20", "n_periods = 2000")
        .replace("stride = 5", "stride = 100");
    let cfg = write_config(dir.path(), "qmm.toml", &body);
    let out = dir.path().join("qmm");
    let o = qlink(&["qmm-compare", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("qmm_compare.json"));
    assert!(r["max_deviation"].as_f64().unwrap() < 1e-6, "{r}");
    assert!(out.join("effective.csv").exists() && out.join("reduced.csv").exists());
}

#[test]
fn sweep_records_failures_and_continues() {
    let dir = TempDir::new().unwrap();
    let body = SMALL.replace("kind = \"full\"", "kind = \"quench\"").replace("frequency = 6.2", "frequency = 0.5")
        + "\n[sweep]\nparameter = \"frequency\"\nvalues = [0.5, -1.0, 0.25]\ncolumn = \"nd_0\"\n";
    let cfg = write_config(dir.path(), "sweep.toml", &body);
    let out = dir.path().join("sweep");
    let o = qlink(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].contains(",failed,"));
    assert!(!rows[0].contains("failed") && !rows[2].contains("failed"));
    assert!(out.join("run_000/timeseries.csv").exists());
    assert!(out.join("sweep.dat").exists());
}

#[test]
fn spectrum_reports_segment_levels() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("spec");
    let o = qlink(&["spectrum", "--segments", "3,3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let r = json(&out.join("spectrum.json"));
    assert_eq!(r["assembled"].as_array().unwrap().len(), 9);
    assert!(!r["degenerate"].as_array().unwrap().is_empty());
    assert!(!qlink(&["spectrum", "--segments", "0,3"]).status.success());
}

#[test]
fn magnus_check_reports_truncation_slopes() {
    let dir = TempDir::new().unwrap();
    let body = SMALL.replace("L = 4", "L = 3");
    let cfg = write_config(dir.path(), "m.toml", &body);
    let out = dir.path().join("m");
    let o = qlink(&["magnus-check", "--config", &cfg, "--out", out.to_str().unwrap(), "--max-order", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("magnus_check.json"));
    let slope = r["slopes"][0].as_f64().unwrap();
    assert!((slope - 3.0).abs() < 0.2, "{slope}");
    assert!(out.join("magnus_order_0.dat").exists());
}

#[test]
fn config_flag_is_required() {
    let o = qlink(&["run"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
}
