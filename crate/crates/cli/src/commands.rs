use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use qlink::analysis::{fit_power_law, lifetime, segment_spectrum, Lifetime};
use qlink::engine::{
    default_stride, parse_observables, run_effective, run_floquet, run_floquet_symmetric, Basis, StateVector,
    TranslationSector,
};
use qlink::lattice::{parse_pattern, render_pattern};
use qlink::magnus::{
    effective_orders, lambda0, magnus_order_check, protocol_full, protocol_simple, DriveProtocol, SecondOrder,
};
use qlink::operators::{build_model, Model};
use qlink::qmm::{
    build_qmm_hamiltonian, compare_qmm_full, embed_qmm, enumerate_qmm_basis, qmm_state, run_qmm, QmmConfig,
    QmmCouplings, QmmOrder, DEFECT, KINK,
};
use qlink::series::TimeSeries;
use qlink::{GaugeSpin, LatticeSpec};

use crate::config::{ProtocolKind, RunConfig};

/// Process outcome beyond plain errors.
#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Partial,
}

fn initial_state(cfg: &RunConfig, spec: &LatticeSpec) -> Result<u64> {
    match (&cfg.run.pattern, &cfg.run.qmm) {
        (Some(p), None) => Ok(parse_pattern(p, spec)?),
        (None, Some(q)) => Ok(embed_qmm(&QmmConfig::parse(q, spec.boundary())?, spec, false)?),
        _ => bail!("run.pattern or run.qmm is required"),
    }
}

fn drive(kind: ProtocolKind, model: &Model, t: f64) -> qlink::Result<DriveProtocol> {
    match kind {
        ProtocolKind::Simple => protocol_simple(model, t),
        ProtocolKind::Full => protocol_full(model, t),
        ProtocolKind::Quench => DriveProtocol::quench(&model.h, t),
        ProtocolKind::Effective => Err(qlink::Error::Protocol("effective runs need a simple or full base".into())),
    }
}

/// Evolve as configured and return the recorded series.
pub fn simulate(cfg: &RunConfig) -> Result<TimeSeries> {
    let spec = cfg.spec()?;
    let model = build_model(&spec, cfg.couplings())?;
    let state = initial_state(cfg, &spec)?;
    let obs = parse_observables(&cfg.run.observables, spec.sites())?;
    let n = cfg.run.n_periods;
    let stride = cfg.run.stride.unwrap_or_else(|| default_stride(n));
    let opts = cfg.tolerance;
    let mut ts = if obs.is_empty() {
        TimeSeries::new(vec![])
    } else {
        let basis = Arc::new(Basis::conserved(&spec, state)?);
        let psi = StateVector::product(basis.clone(), state)?;
        let kind = cfg.protocol.kind;
        if cfg.run.translation.is_some() && kind == ProtocolKind::Effective {
            bail!("run.translation is only supported for driven and quench runs");
        }
        let (ts, _) = match kind {
            ProtocolKind::Effective => {
                let p = drive(cfg.protocol.base, &model, cfg.base_step())?;
                let orders = &cfg.protocol.orders;
                let eff = effective_orders(&p, *orders.iter().max().unwrap())?;
                run_effective(&psi, &eff, orders, n as f64 * eff.period, &obs, stride, &opts)?
            }
            _ => {
                let p = drive(kind, &model, cfg.base_step())?;
                match cfg.run.translation {
                    Some(shift) => {
                        let sector = TranslationSector::new(basis, shift)?;
                        run_floquet_symmetric(&psi, &sector, &p, n, &obs, stride, &opts)?
                    }
                    None => run_floquet(&psi, &p, n, &obs, stride, &opts)?,
                }
            }
        };
        ts
    };
    let mut meta = if ts.metadata.is_object() { ts.metadata.clone() } else { json!({}) };
    meta["config"] = serde_json::to_value(cfg)?;
    meta["initial_state"] = json!(render_pattern(state, &spec));
    meta["period"] = json!(cfg.period());
    meta["base_step"] = json!(cfg.base_step());
    ts.metadata = meta;
    Ok(ts)
}

/// CSV, JSON sidecar and one two-column `.dat` file per column.
pub fn write_series(ts: &TimeSeries, dir: &Path, stem: &str) -> Result<()> {
    ts.write(dir, stem)?;
    for (i, c) in ts.columns.iter().enumerate() {
        let mut s = format!("# t {c}\n");
        for (t, row) in ts.times.iter().zip(&ts.rows) {
            let _ = writeln!(s, "{t:.11e} {:.11e}", row[i]);
        }
        std::fs::write(dir.join(format!("{stem}_{c}.dat")), s)?;
    }
    Ok(())
}

fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.resolved.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    write_resolved(cfg, out)?;
    let ts = simulate(cfg)?;
    write_series(&ts, out, "timeseries")?;
    Ok(Outcome::Ok)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    value: f64,
    status: &'static str,
    lifetime: Option<f64>,
    lifetime_periods: Option<f64>,
    t_max: Option<f64>,
    error: Option<String>,
}

fn sweep_one(cfg: &RunConfig, parameter: &str, value: f64, column: &str, threshold: Option<f64>, dir: &Path) -> Result<(Lifetime, f64)> {
    let mut c = cfg.with_parameter(parameter, value)?;
    if !c.run.observables.iter().any(|o| o == column) {
        c.run.observables.push(column.to_string());
    }
    write_resolved(&c, dir)?;
    let ts = simulate(&c)?;
    write_series(&ts, dir, "timeseries")?;
    let lt = lifetime(&ts.times, &ts.column(column)?, threshold)?;
    Ok((lt, c.period()))
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path, workers: usize) -> Result<Outcome> {
    let sweep = cfg.sweep.clone().ok_or_else(|| anyhow!("the config has no [sweep] table"))?;
    if sweep.values.is_empty() {
        bail!("sweep.values is empty");
    }
    write_resolved(cfg, out)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let rows: Vec<SweepRow> = pool.install(|| {
        sweep
            .values
            .par_iter()
            .enumerate()
            .map(|(i, &v)| {
                let dir = out.join(format!("run_{i:03}"));
                match sweep_one(cfg, &sweep.parameter, v, &sweep.column, sweep.threshold, &dir) {
                    Ok((Lifetime::Crossed { time }, tf)) => SweepRow {
                        value: v,
                        status: "crossed",
                        lifetime: Some(time),
                        lifetime_periods: Some(time / tf),
                        t_max: None,
                        error: None,
                    },
                    Ok((Lifetime::Censored { t_max }, _)) => SweepRow {
                        value: v,
                        status: "censored",
                        lifetime: None,
                        lifetime_periods: None,
                        t_max: Some(t_max),
                        error: None,
                    },
                    Err(e) => SweepRow {
                        value: v,
                        status: "failed",
                        lifetime: None,
                        lifetime_periods: None,
                        t_max: None,
                        error: Some(format!("{e:#}")),
                    },
                }
            })
            .collect()
    });
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.11e}")).unwrap_or_default();
    let mut csv = format!("{},status,lifetime,lifetime_periods,t_max\n", sweep.parameter);
    let mut dat = format!("# {} lifetime\n", sweep.parameter);
    for r in &rows {
        let _ = writeln!(csv, "{:.11e},{},{},{},{}", r.value, r.status, opt(r.lifetime), opt(r.lifetime_periods), opt(r.t_max));
        if let Some(t) = r.lifetime {
            let _ = writeln!(dat, "{:.11e} {t:.11e}", r.value);
        }
    }
    std::fs::write(out.join("sweep.csv"), csv)?;
    std::fs::write(out.join("sweep.dat"), dat)?;
    write_json(&json!({ "parameter": sweep.parameter, "column": sweep.column, "rows": rows }), &out.join("sweep.json"))?;
    let failed: Vec<&SweepRow> = rows.iter().filter(|r| r.status == "failed").collect();
    for r in &failed {
        eprintln!("run at {} = {} failed: {}", sweep.parameter, r.value, r.error.as_deref().unwrap_or(""));
    }
    Ok(if failed.is_empty() { Outcome::Ok } else { Outcome::Partial })
}

/// Effective lattice dynamics against the reduced model on the same time grid.
pub fn cmd_qmm_compare(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let spec = cfg.spec()?;
    if spec.spin() != GaugeSpin::HALF {
        bail!("the reduced model needs S = 1/2 links");
    }
    let model = build_model(&spec, cfg.couplings())?;
    let config = match (&cfg.run.qmm, &cfg.run.pattern) {
        (Some(q), _) => QmmConfig::parse(q, spec.boundary())?,
        (None, Some(p)) => qlink::qmm::map_full_to_qmm(parse_pattern(p, &spec)?, &spec)?,
        _ => bail!("run.pattern or run.qmm is required"),
    };
    let base = match cfg.protocol.kind {
        ProtocolKind::Effective => cfg.protocol.base,
        ProtocolKind::Quench => bail!("qmm-compare needs a simple or full drive"),
        k => k,
    };
    let p = drive(base, &model, cfg.base_step())?;
    let tf = p.period();
    let c = &cfg.couplings;
    let (orders, order, couplings) = match base {
        ProtocolKind::Simple => (
            vec![0, 1],
            QmmOrder::First,
            QmmCouplings { j: c.j, lambda0: lambda0(c.j, c.k, tf), lambda1: 0.0, lambda2: 0.0 },
        ),
        _ => {
            let (lambda1, lambda2) = SecondOrder::full(c.j, c.k, c.h).marble_couplings(tf);
            (vec![0, 2], QmmOrder::Second, QmmCouplings { j: c.j, lambda0: 0.0, lambda1, lambda2 })
        }
    };
    let order = cfg.qmm.as_ref().map(|q| q.order).unwrap_or(order);
    let n = cfg.run.n_periods;
    let stride = cfg.run.stride.unwrap_or_else(|| default_stride(n));

    let qb = Arc::new(enumerate_qmm_basis(spec.sites(), config.count(DEFECT), config.count(KINK), spec.boundary())?);
    let hq = build_qmm_hamiltonian(qb.clone(), couplings, order)?;
    let reduced = run_qmm(&qmm_state(&qb, &config)?, &hq, tf, n, stride)?;
    write_resolved(cfg, out)?;
    write_series(&reduced, out, "reduced")?;

    let mut report = json!({
        "configuration": config.to_string(),
        "order": order,
        "couplings": couplings,
        "lattice_orders": orders,
        "period": tf,
        "reduced_dim": qb.len(),
    });
    if !cfg.qmm.as_ref().is_some_and(|q| q.reduced_only) {
        let eff = effective_orders(&p, 2)?;
        let h = eff.sum(&orders)?;
        let seed = embed_qmm(&config, &spec, false)?;
        let basis = Arc::new(Basis::reachable(&spec, &[seed], &[&h])?);
        let psi = StateVector::product(basis.clone(), seed)?;
        let names = vec!["nd".to_string(), "nk".to_string()];
        let obs = parse_observables(&names, spec.sites())?;
        let (full, _) = run_effective(&psi, &eff, &orders, n as f64 * tf, &obs, stride, &cfg.tolerance)?;
        write_series(&full, out, "effective")?;
        let cols: Vec<&str> = full.columns.iter().map(|s| s.as_str()).collect();
        let dev = compare_qmm_full(&full, &reduced, &cols)?;
        let max = dev.iter().cloned().fold(0.0, f64::max);
        report["lattice_dim"] = json!(basis.len());
        report["deviation"] = json!(cols.iter().zip(&dev).map(|(c, d)| (c.to_string(), json!(d))).collect::<serde_json::Map<_, _>>());
        report["max_deviation"] = json!(max);
        println!("max deviation {max:.3e}");
    }
    write_json(&report, &out.join("qmm_compare.json"))?;
    Ok(Outcome::Ok)
}

pub fn cmd_magnus_check(cfg: &RunConfig, out: &Path, steps: &[f64], max_order: usize) -> Result<Outcome> {
    let spec = cfg.spec()?;
    if spec.dim() > 4096 {
        bail!("magnus-check builds dense propagators; dimension {} is too large", spec.dim());
    }
    let model = build_model(&spec, cfg.couplings())?;
    let kind = match cfg.protocol.kind {
        ProtocolKind::Effective => cfg.protocol.base,
        ProtocolKind::Quench => bail!("magnus-check needs a simple or full drive"),
        k => k,
    };
    let check = magnus_order_check(|t| drive(kind, &model, t), steps, max_order)?;
    write_resolved(cfg, out)?;
    write_json(&check, &out.join("magnus_check.json"))?;
    for (m, d) in check.distances.iter().enumerate() {
        let mut dat = format!("# T distance_order_{m}\n");
        for (t, x) in check.steps.iter().zip(d) {
            let _ = writeln!(dat, "{t:.11e} {x:.11e}");
        }
        std::fs::write(out.join(format!("magnus_order_{m}.dat")), dat)?;
        println!("order {m}: slope {:.3}", check.slopes[m]);
    }
    Ok(Outcome::Ok)
}

pub fn cmd_spectrum(segments: &[usize], j: f64, tol: f64, out: &Path) -> Result<Outcome> {
    let report = segment_spectrum(segments, j, tol)?;
    std::fs::create_dir_all(out)?;
    write_json(&report, &out.join("spectrum.json"))?;
    let mut dat = String::from("# index energy\n");
    for (i, e) in report.assembled.iter().enumerate() {
        let _ = writeln!(dat, "{i} {e:.11e}");
    }
    std::fs::write(out.join("spectrum.dat"), dat)?;
    println!("{} levels, {} degenerate", report.assembled.len(), report.degenerate.len());
    Ok(Outcome::Ok)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FitKind {
    /// `y = a t^b` on `|y - y(0)|`.
    Power,
    /// First crossing of a threshold.
    Lifetime,
}

pub fn cmd_fit(
    input: &Path,
    column: &str,
    window: Option<(f64, f64)>,
    kind: FitKind,
    threshold: Option<f64>,
    out: Option<&PathBuf>,
) -> Result<Outcome> {
    let ts = TimeSeries::read_csv(input).with_context(|| format!("reading {}", input.display()))?;
    let ys = ts.column(column)?;
    let report = match kind {
        FitKind::Power => {
            let window = window.ok_or_else(|| anyhow!("power fits need --window"))?;
            let y0 = ys.first().copied().unwrap_or(0.0);
            let growth: Vec<f64> = ys.iter().map(|y| (y - y0).abs()).collect();
            let fit = fit_power_law(&ts.times, &growth, window)?;
            println!("exponent {:.6}", fit.exponent);
            serde_json::to_value(fit)?
        }
        FitKind::Lifetime => {
            let (ts, ys) = match window {
                Some((a, b)) => ts.times.iter().zip(&ys).filter(|(t, _)| **t >= a && **t <= b).map(|(t, y)| (*t, *y)).unzip(),
                None => (ts.times.clone(), ys),
            };
            let lt = lifetime(&ts, &ys, threshold)?;
            match lt.time() {
                Some(t) => println!("lifetime {t:.6e}"),
                None => println!("censored"),
            }
            serde_json::to_value(lt)?
        }
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_json(&json!({ "input": input, "column": column, "result": report }), &dir.join("fit.json"))?;
    }
    Ok(Outcome::Ok)
}
