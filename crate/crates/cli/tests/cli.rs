use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn lieflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lieflow")).args(args).output().unwrap()
}

fn run_in(dir: &Path, cmd: &str, overrides: &[&str]) -> Output {
    let mut args = vec![cmd, "--out", dir.to_str().unwrap()];
    for o in overrides {
        args.push("--override");
        args.push(o);
    }
    lieflow(&args)
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

/// Data rows of a CSV written by the CLI, after the hash comment and header.
fn csv_rows(path: &Path) -> (String, Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let hash = lines.next().unwrap().strip_prefix("# config_hash=").unwrap().to_string();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (hash, header, rows)
}

const SMALL: &[&str] = &["grid.N=256", "time.T=0.1", "output.snapshots=4"];

#[test]
fn bad_configuration_exits_with_2() {
    let d = scratch("bad_config");
    assert_eq!(run_in(&d, "flow", &["no.such.key=1"]).status.code(), Some(2));
    assert_eq!(run_in(&d, "flow", &["grid.N=abc"]).status.code(), Some(2));
    assert_eq!(run_in(&d, "flow", &["time.dt=1", "grid.N=256"]).status.code(), Some(2));
    assert_eq!(run_in(&d, "flow", &["init=components"]).status.code(), Some(2));
    let missing = lieflow(&["flow", "--config", "/nonexistent/run.cfg", "--out", d.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("configuration error"));
}

#[test]
fn config_file_and_overrides_share_one_hash() {
    let d = scratch("hash");
    let cfg = d.join("run.cfg");
    std::fs::write(&cfg, "# test\ngrid.N = 256\nj = 2\n").unwrap();
    let a = lieflow(&["config", "--config", cfg.to_str().unwrap()]);
    let b = lieflow(&["config", "--override", "grid.N=256"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = lieflow(&["config", "--override", "grid.N=512"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn verify_single_criterion_passes() {
    let d = scratch("verify");
    let out = lieflow(&["verify", "hfm", "--out", d.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("PASS [ 8] hfm")), "{stdout}");
    let r = report(&d);
    assert_eq!(r["summary"]["passed"], 1);
    assert_eq!(lieflow(&["verify", "nonsense", "--out", d.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn runs_are_deterministic() {
    let (a, b) = (scratch("det_a"), scratch("det_b"));
    for d in [&a, &b] {
        assert_eq!(run_in(d, "flow", SMALL).status.code(), Some(0));
    }
    for f in ["timeseries.csv", "fields.jsonl", "report.json", "plot_timeseries.py"] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn zero_potential_is_stationary() {
    let d = scratch("zero");
    let mut o = SMALL.to_vec();
    o.push("init=zero");
    assert_eq!(run_in(&d, "flow", &o).status.code(), Some(0));
    let (_, _, rows) = csv_rows(&d.join("timeseries.csv"));
    for r in &rows {
        assert_eq!(&r[1..], &rows[0][1..]);
    }
    let text = std::fs::read_to_string(d.join("fields.jsonl")).unwrap();
    for line in text.lines().skip(1) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["m"].as_array().unwrap().iter().all(|e| e[0] == 0.0 && e[1] == 0.0));
    }
}

#[test]
fn sech_flow_conserves_the_mass() {
    let d = scratch("sech");
    assert_eq!(run_in(&d, "flow", SMALL).status.code(), Some(0));
    let (hash, header, rows) = csv_rows(&d.join("timeseries.csv"));
    assert_eq!(header[..3], ["t", "F0", "F1"]);
    assert_eq!(hash, report(&d)["config_hash"].as_str().unwrap());
    assert_eq!(rows.len(), 5);
    let f0 = rows[0][1];
    assert!(f0 > 1.0);
    for r in &rows {
        assert!(((r[1] - f0) / f0).abs() < 1e-6, "{} vs {f0}", r[1]);
    }
    let r = report(&d);
    assert!(r["summary"]["relative_drift"]["F2"].as_f64().unwrap() < 1e-6);
    assert!(r["summary"]["pi0_drift"].as_f64().unwrap() < 1e-8);
}

#[test]
fn fields_round_trip_through_init_file() {
    let d = scratch("file_src");
    assert_eq!(run_in(&d, "flow", SMALL).status.code(), Some(0));
    let e = scratch("file_dst");
    let file = format!("init.file={}", d.join("fields.jsonl").display());
    let mut o = SMALL.to_vec();
    o.extend(["init=file", file.as_str()]);
    assert_eq!(run_in(&e, "flow", &o).status.code(), Some(0));
    let (_, _, a) = csv_rows(&d.join("timeseries.csv"));
    let (_, _, b) = csv_rows(&e.join("timeseries.csv"));
    assert!((a[0][1] - b[0][1]).abs() < 1e-12);
}

#[test]
fn sphere_curve_keeps_unit_norm() {
    let d = scratch("curve");
    let mut o = SMALL.to_vec();
    o.push("flow.curve=true");
    assert_eq!(run_in(&d, "flow", &o).status.code(), Some(0));
    let (_, header, rows) = csv_rows(&d.join("timeseries.csv"));
    assert_eq!(header, ["t", "spectrum_drift", "H_b", "r3_norm_drift"]);
    for r in &rows {
        assert!(r[1] < 1e-10 && r[3] < 1e-10, "{r:?}");
    }
    let first = std::fs::read_to_string(d.join("curve.jsonl")).unwrap();
    let head: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(head["kind"], "curve");
}

#[test]
fn soliton_table_and_residuals() {
    let d = scratch("soliton");
    let o = ["grid.N=512", "time.T=0.5", "output.snapshots=2", "soliton.curve=true"];
    assert_eq!(run_in(&d, "soliton", &o).status.code(), Some(0));
    let (_, header, rows) = csv_rows(&d.join("amplitude.csv"));
    assert_eq!(header, ["t", "x", "norm_u"]);
    assert_eq!(rows.len(), 3 * 512);
    // The stationary one-soliton keeps its peak.
    let peak = |k: usize| rows[k * 512..(k + 1) * 512].iter().map(|r| r[2]).fold(0.0, f64::max);
    assert!((peak(0) - peak(2)).abs() < 1e-8);
    let s = &report(&d)["summary"];
    assert!(s["flow_residual"].as_f64().unwrap() < 1e-3);
    assert!(s["frame_residual"].as_f64().unwrap() < 1e-4);
    assert!(s["curve"]["c_drift"].as_f64().unwrap() < 1e-6);
    assert_eq!(run_in(&d, "soliton", &["soliton.poles=0.3"]).status.code(), Some(2));
}

#[test]
fn develop_round_trip_converges() {
    let d = scratch("develop");
    assert_eq!(run_in(&d, "develop", &["grid.N=512"]).status.code(), Some(0));
    let s = &report(&d)["summary"];
    assert!(s["round_trip_error"].as_f64().unwrap() < 1e-4);
    assert!(s["observed_order"].as_f64().unwrap() > 3.5);

    // The written curve develops back to the potential it came from.
    let e = scratch("develop_back");
    let file = format!("init.file={}", d.join("curve.jsonl").display());
    let o = ["grid.N=512", "develop.direction=develop", "init=file", file.as_str()];
    assert_eq!(run_in(&e, "develop", &o).status.code(), Some(0));
    // Bounded by the frame truncation, the same size as the round-trip error.
    assert!(report(&e)["summary"]["orbit_defect"].as_f64().unwrap() < 1e-4);
}

#[test]
fn finite_type_report() {
    let d = scratch("finite_type");
    let o = ["grid.L=5", "grid.N=200", "time.T=0.5", "time.dt=0.005"];
    assert_eq!(run_in(&d, "finite-type", &o).status.code(), Some(0));
    let s = &report(&d)["summary"];
    assert!(s["compat_residual"].as_f64().unwrap() < 1e-4);
    assert!(s["flow_residual"].as_f64().unwrap() < 1e-4);
}
