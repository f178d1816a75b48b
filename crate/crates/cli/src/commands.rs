use std::str::FromStr;

use lieflow::devmap::{develop, height_H, integrate_curve_flow, undevelop, Curve};
use lieflow::gridcalc::{DecayClass, Field, LineGrid};
use lieflow::hierarchy::{conserved_all, integrate_flow};
use lieflow::liecore::{inner_m, AlgebraTag, CMat, Family, C64};
use lieflow::solitons::{
    curve_flow_residual, finite_type_solve, flow_residual, frame_residual, n_soliton, soliton_to_curve,
    BacklundDatum, FiniteTypeState, SolitonSolution,
};
use lieflow::symspace::su2_to_r3;
use lieflow::verify;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::output::OutDir;
use crate::setup::{self, Model};
use crate::CliError;

/// Outcome of a command: the report body and whether every check passed.
pub struct Outcome {
    pub summary: Value,
    pub passed: bool,
}

/// Relative to the initial value; absolute for series that are round-off
/// zero throughout, where a ratio is meaningless.
fn relative_drift(series: &[f64]) -> f64 {
    let s0 = series[0];
    let d = series.iter().map(|v| (v - s0).abs()).fold(0.0, f64::max);
    let scale = series.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if scale < 1e-10 { d } else { d / s0.abs().max(1e-10) }
}

fn tag_name(tag: AlgebraTag) -> String {
    let f = match tag.family {
        Family::U => "u",
        Family::Su => "su",
        Family::So => "so",
        Family::Sp => "sp",
    };
    format!("{f}{}", tag.n)
}

fn write_fields(out: &mut OutDir, cfg: &RunConfig, name: &str, kind: &str, times: &[f64], fields: &[Field]) -> Result<(), CliError> {
    if !cfg.flag("output.fields")? || fields.is_empty() {
        return Ok(());
    }
    let xs = fields[0].grid.xs();
    let snaps: Vec<(f64, &[f64], &[CMat])> =
        times.iter().zip(fields).map(|(&t, f)| (t, xs.as_slice(), f.values.as_slice())).collect();
    out.field_jsonl(name, kind, fields[0].tag.size(), &snaps)
}

/// The step the integrator actually took.
fn step_taken(times: &[f64], stride: usize, requested: f64) -> f64 {
    if times.len() > 1 { (times[1] - times[0]) / stride as f64 } else { requested }
}

fn model_json(m: &Model, g: &LineGrid, dt: Option<f64>) -> Value {
    json!({
        "algebra": tag_name(m.tag),
        "j": m.j,
        "grid": { "L": g.l, "N": g.n, "h": g.h },
        "dt": dt,
    })
}

pub fn flow(cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome, CliError> {
    let m = setup::model(cfg)?;
    let g = setup::grid(cfg)?;
    let t = setup::t_final(cfg)?;
    let u0 = setup::initial_data(cfg, &m, g)?;
    if cfg.flag("flow.curve")? {
        return curve_flow(cfg, out, &m, g, t, &u0);
    }
    let (stride, dt) = setup::stride(cfg, t, setup::time_step(cfg, &g, m.j)?)?;
    let fl = integrate_flow(&m.ctx, &u0, t, dt, stride)?;

    let mut rows = Vec::new();
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); 7];
    let mut boundary_rate = None;
    for (ti, s) in fl.traj.times.iter().zip(&fl.traj.states) {
        let mut row = vec![*ti];
        row.extend(conserved_all(&m.ctx, s, 4)?);
        let pair = undevelop(&m.ctx, s)?;
        // Along the (b,1)-flow H_b moves at <g b g^{-1} - b, b> taken at the right end.
        if m.j == 1 && boundary_rate.is_none() {
            let g = &pair.g.values[s.grid.n - 1];
            boundary_rate = Some(inner_m(&(g * &m.b.m * g.adjoint() - &m.b.m), &m.b.m));
        }
        row.push(height_H(&pair.gamma, &m.b.m));
        row.push(s.values.iter().map(|v| m.ctx.cd.pi0_m(v).norm()).fold(0.0, f64::max));
        for (k, v) in row[1..].iter().enumerate() {
            series[k].push(*v);
        }
        rows.push(row);
    }
    let cols = ["t", "F0", "F1", "F2", "F3", "F4", "H_b", "pi0_sup"];
    out.csv("timeseries.csv", &cols, &rows)?;
    out.plot_script("timeseries.csv")?;
    write_fields(out, cfg, "fields.jsonl", "potential", &fl.traj.times, &fl.traj.states)?;

    let drift: serde_json::Map<String, Value> =
        cols[1..7].iter().zip(&series).map(|(c, s)| (c.to_string(), json!(relative_drift(s)))).collect();
    Ok(Outcome {
        summary: json!({
            "model": model_json(&m, &g, Some(step_taken(&fl.traj.times, stride, dt))),
            "snapshots": rows.len(),
            "relative_drift": drift,
            "H_b_rate": (series[5][series[5].len() - 1] - series[5][0]) / t.max(f64::MIN_POSITIVE),
            "H_b_boundary_rate": boundary_rate,
            "pi0_drift": fl.pi0_drift,
        }),
        passed: true,
    })
}

fn curve_flow(cfg: &RunConfig, out: &mut OutDir, m: &Model, g: LineGrid, t: f64, u0: &Field) -> Result<Outcome, CliError> {
    let (stride, dt) = setup::stride(cfg, t, setup::time_step(cfg, &g, m.j)?)?;
    let gamma0 = undevelop(&m.ctx, u0)?.gamma;
    let ct = integrate_curve_flow(&m.ctx, &gamma0, t, dt, stride)?;
    let su2 = m.tag == AlgebraTag::su(2);
    let r0 = if su2 { su2_to_r3(&m.a.m).norm() } else { 0.0 };
    let mut rows = Vec::new();
    let mut heights = Vec::new();
    for (ti, s) in ct.traj.times.iter().zip(&ct.traj.states) {
        let c = Curve::unchecked(s.clone(), &m.a);
        let h = height_H(&c, &m.b.m);
        heights.push(h);
        let mut row = vec![*ti, c.spectrum_drift(), h];
        if su2 {
            row.push(s.values.iter().map(|v| (su2_to_r3(v).norm() - r0).abs()).fold(0.0, f64::max));
        }
        rows.push(row);
    }
    let mut cols = vec!["t", "spectrum_drift", "H_b"];
    if su2 {
        cols.push("r3_norm_drift");
    }
    out.csv("timeseries.csv", &cols, &rows)?;
    out.plot_script("timeseries.csv")?;
    write_fields(out, cfg, "curve.jsonl", "curve", &ct.traj.times, &ct.traj.states)?;
    let norm_drift = if su2 { Some(rows.iter().map(|r| r[3]).fold(0.0, f64::max)) } else { None };
    Ok(Outcome {
        summary: json!({
            "model": model_json(m, &g, Some(step_taken(&ct.traj.times, stride, dt))),
            "mode": "curve",
            "snapshots": rows.len(),
            "spectrum_drift": ct.spectrum_drift,
            "max_reprojection": ct.max_correction,
            "two_path_discrepancy": ct.xcheck,
            "H_b_relative_drift": relative_drift(&heights),
            "r3_norm_drift": norm_drift,
        }),
        passed: true,
    })
}

fn parse_complex(s: &str) -> Result<C64, CliError> {
    C64::from_str(s.trim()).map_err(|_| CliError::Config(format!("bad complex number '{s}'")))
}

/// Poles separated by `;`, spanning vectors by `;` with entries by `,`.
fn backlund_data(cfg: &RunConfig, n: usize) -> Result<Vec<BacklundDatum>, CliError> {
    let poles = cfg.str("soliton.poles").split(';').map(parse_complex).collect::<Result<Vec<_>, _>>()?;
    let spans: Vec<&str> = cfg.str("soliton.spans").split(';').collect();
    if poles.len() != spans.len() {
        return Err(CliError::Config(format!("{} poles but {} spans", poles.len(), spans.len())));
    }
    poles
        .iter()
        .zip(spans)
        .map(|(&z, s)| {
            let v = s.split(',').map(parse_complex).collect::<Result<Vec<_>, _>>()?;
            if v.len() != n {
                return Err(CliError::Config(format!("span '{s}' has {} entries, need {n}", v.len())));
            }
            BacklundDatum::from_span(z, &CMat::from_column_slice(n, 1, &v))
                .map_err(|e| CliError::Config(format!("soliton datum ({z}; {s}): {e}")))
        })
        .collect()
}

pub fn soliton(cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome, CliError> {
    let m = setup::model(cfg)?;
    let g = setup::grid(cfg)?;
    let t = setup::t_final(cfg)?;
    let snaps: usize = cfg.get("output.snapshots")?;
    let data = backlund_data(cfg, m.tag.size())?;
    let sol = n_soliton(&m.ctx, &data)?;
    let times: Vec<f64> = (0..=snaps.max(1)).map(|k| t * k as f64 / snaps.max(1) as f64).collect();
    let fields = times.iter().map(|&ti| sol.field(g, ti)).collect::<lieflow::Result<Vec<_>>>()?;

    let xs = g.xs();
    let mut rows = Vec::new();
    for (ti, f) in times.iter().zip(&fields) {
        for (x, v) in xs.iter().zip(&f.values) {
            rows.push(vec![*ti, *x, v.norm()]);
        }
    }
    out.csv("amplitude.csv", &["t", "x", "norm_u"], &rows)?;
    write_fields(out, cfg, "fields.jsonl", "potential", &times, &fields)?;

    let tm = 0.5 * t;
    let mut summary = json!({
        "model": model_json(&m, &g, None),
        "poles": data.iter().map(|d| json!([d.z.re, d.z.im])).collect::<Vec<_>>(),
        "flow_residual": flow_residual(&sol, g, tm, 1e-3)?,
        "frame_residual": frame_residual(&sol, &[(0.4, tm), (-1.3, t)], C64::new(0.3, 0.2))?,
        "reality_defect": reality_defect(&sol, g, t)?,
    });
    if cfg.flag("soliton.curve")? {
        let sc = soliton_to_curve(&sol, g, &times)?;
        let curves: Vec<Field> = sc.curves.iter().map(|c| c.field.clone()).collect();
        write_fields(out, cfg, "curve.jsonl", "curve", &times, &curves)?;
        summary["curve"] = json!({
            "c_drift": sc.c_drift,
            "curve_flow_residual": curve_flow_residual(&sol, g, tm, 1e-3)?,
        });
    }
    Ok(Outcome { summary, passed: true })
}

/// Largest algebra membership defect of the potential on the snapshots.
fn reality_defect(sol: &SolitonSolution, g: LineGrid, t: f64) -> Result<f64, CliError> {
    let tag = sol.tag();
    let mut d = 0.0f64;
    for ti in [0.0, t] {
        for v in &sol.field(g, ti)?.values {
            d = d.max(tag.membership_defect(v));
        }
    }
    Ok(d)
}

fn round_trip(m: &Model, u: &Field) -> Result<(f64, f64), CliError> {
    let pair = undevelop(&m.ctx, u)?;
    let back = develop(&m.ctx, &pair.gamma)?;
    Ok((back.u.sup_diff(u), pair.defect))
}

pub fn develop_cmd(cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome, CliError> {
    let m = setup::model(cfg)?;
    let g = setup::grid(cfg)?;
    let direction = cfg.str("develop.direction");
    let summary = match direction {
        "roundtrip" => {
            let u = setup::initial_data(cfg, &m, g)?;
            let (err, defect) = round_trip(&m, &u)?;
            let half = LineGrid::new(g.l, g.n / 2)?.with_accuracy(g.acc)?;
            let (err_half, _) = round_trip(&m, &setup::initial_data(cfg, &m, half)?)?;
            let pair = undevelop(&m.ctx, &u)?;
            write_fields(out, cfg, "curve.jsonl", "curve", &[0.0], &[pair.gamma.field])?;
            json!({
                "model": model_json(&m, &g, None),
                "round_trip_error": err,
                "round_trip_error_half_grid": err_half,
                "observed_order": (err_half / err).log2(),
                "orbit_defect": defect,
            })
        }
        "undevelop" => {
            let u = setup::initial_data(cfg, &m, g)?;
            let pair = undevelop(&m.ctx, &u)?;
            write_fields(out, cfg, "curve.jsonl", "curve", &[0.0], &[pair.gamma.field.clone()])?;
            json!({
                "model": model_json(&m, &g, None),
                "orbit_defect": pair.defect,
                "spectrum_drift": pair.gamma.spectrum_drift(),
            })
        }
        "develop" => {
            if cfg.str("init") != "file" {
                return Err(CliError::Config("develop.direction = develop reads the curve from init.file".into()));
            }
            let raw = setup::initial_data(cfg, &m, g)?.with_class(DecayClass::OrbitValued);
            let gamma = Curve::new(raw, &m.a)?;
            let pair = develop(&m.ctx, &gamma)?;
            write_fields(out, cfg, "fields.jsonl", "potential", &[0.0], &[pair.u])?;
            json!({
                "model": model_json(&m, &g, None),
                "orbit_defect": pair.defect,
                "frame_defect": pair.g.group_defect(),
            })
        }
        other => return Err(CliError::Config(format!("unknown develop.direction '{other}'"))),
    };
    Ok(Outcome { summary, passed: true })
}

pub fn finite_type(cfg: &RunConfig, out: &mut OutDir) -> Result<Outcome, CliError> {
    let m = setup::model(cfg)?;
    let g = setup::grid(cfg)?;
    let t = setup::t_final(cfg)?;
    let k: usize = cfg.get("finite_type.k")?;
    let scale: f64 = cfg.get("finite_type.scale")?;
    let dt = match cfg.str("time.dt") {
        "auto" => g.h / 10.0,
        _ => cfg.get("time.dt")?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.get("seed")?);
    let mut xi = vec![m.a.m.clone()];
    for i in 1..=k {
        let r = m.tag.random(&mut rng, scale);
        xi.push(if i == 1 { m.ctx.cd.pi1_m(&r) } else { r });
    }
    let sol = finite_type_solve(&m.ctx, k, &FiniteTypeState { xi }, g, t, dt)?;
    let snaps: usize = cfg.get("output.snapshots")?;
    let stride = ((sol.times.len() - 1) / snaps.max(1)).max(1);
    let idx: Vec<usize> = (0..sol.times.len()).step_by(stride).collect();
    let times: Vec<f64> = idx.iter().map(|&i| sol.times[i]).collect();
    let fields: Vec<Field> = idx.iter().map(|&i| sol.xi_field(1, i)).collect();
    write_fields(out, cfg, "fields.jsonl", "potential", &times, &fields)?;
    let rows: Vec<Vec<f64>> = times.iter().zip(&fields).map(|(&ti, f)| vec![ti, f.sup_norm()]).collect();
    out.csv("timeseries.csv", &["t", "sup_u"], &rows)?;
    Ok(Outcome {
        summary: json!({
            "model": model_json(&m, &g, Some(dt)),
            "k": k,
            "compat_residual": sol.compat_residual,
            "flow_residual": sol.flow_residual,
        }),
        passed: true,
    })
}

pub fn verify_cmd(cfg: &RunConfig, suite: Option<&str>, out: &mut OutDir) -> Result<Outcome, CliError> {
    let selector = suite.unwrap_or(cfg.str("verify.suite"));
    let seed: u64 = cfg.get("seed")?;
    let reports = verify::run(selector, seed).map_err(|e| CliError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    for r in &reports {
        println!("{}", r.line());
        rows.push(json!({
            "id": r.id,
            "key": r.key,
            "title": r.title,
            "pass": r.pass(),
            "error": r.error,
            "measurements": r.measurements.iter().map(|m| json!({
                "name": m.name,
                "value": m.value,
                "bound": match m.bound {
                    verify::Bound::Below(b) => json!({"below": b}),
                    verify::Bound::AtLeast(b) => json!({"at_least": b}),
                },
                "pass": m.pass(),
            })).collect::<Vec<_>>(),
        }));
    }
    let passed = reports.iter().filter(|r| r.pass()).count();
    println!("verify: {passed}/{} criteria pass", reports.len());
    let _ = out;
    Ok(Outcome {
        summary: json!({ "seed": seed, "passed": passed, "total": reports.len(), "criteria": rows }),
        passed: passed == reports.len(),
    })
}
