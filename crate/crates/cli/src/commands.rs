//! Subcommand implementations. Each writes its files into the output
//! directory and returns the names it wrote.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ergo::certificate::{exp_functional_exact, f_of, finite_space_certificate, partition_certificate, spectral_rate};
use ergo::chain::{sample_chain_hold_jump, BasicCoupling};
use ergo::dynamics::{coupled_curve, moment_curve, monte_carlo, pair_distance, simulate_coupled_with, simulate_path, PathOutput};
use ergo::falsifier::{assumption_falsifier, lyapunov_constants};
use ergo::metrics::{
    default_window, exact_wasserstein_p, fit_exponential_decay, off_diagonal_absorption_rate, survival_curve, trend,
    EmpiricalMeasure, MAX_ATOMS,
};
use ergo::rng::{stream, Purpose};
use ergo::segment::{DelayIntegrator, MarkedPoint};
use ergo::stats::{CurvePoint, Moments};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

/// What a subcommand produced.
pub struct Outcome {
    /// `false` only when a certificate was computed and failed.
    pub pass: bool,
    pub outputs: Vec<String>,
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))?;
    Ok(name.to_string())
}

fn write_curve(dir: &Path, name: &str, curve: &[CurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_path(dir.join(name)).with_context(|| format!("writing {name}"))?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(name.to_string())
}

fn json_or_error<T: Serialize>(r: ergo::Result<T>) -> Value {
    match r {
        Ok(v) => serde_json::to_value(v).unwrap_or(Value::Null),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

pub fn certify(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let q = cfg.generator()?;
    let c = cfg.constants()?;
    let spec = &cfg.experiment.certify;
    let cert = finite_space_certificate(&c, &q)?;
    let pc = partition_certificate(&c, &q, &spec.cuts, spec.ordering, spec.truncated)?;
    let report = cert.with_partition(pc.clone());
    let mut pass = report.pass;

    let mut lyapunov = Value::Null;
    let mut falsifier = Value::Null;
    if cfg.model.is_some() {
        let model = cfg.model()?;
        match lyapunov_constants(&model, &c, &pc) {
            Ok(ly) => {
                pass &= ly.boundedness_condition;
                let fcfg = spec.falsifier.clone().unwrap_or_default();
                let rep = assumption_falsifier(&model, &c, Some(&ly), &fcfg)?;
                pass &= rep.pass();
                lyapunov = serde_json::to_value(&ly)?;
                falsifier = serde_json::to_value(&rep)?;
            }
            Err(e) => {
                pass = false;
                lyapunov = json!({ "error": e.to_string() });
            }
        }
    }

    print!("{}", report.table());
    let mut outputs = vec![write_json(out, "report.json", &json!({
        "pass": pass,
        "certificate": report,
        "lyapunov": lyapunov,
        "falsifier": falsifier,
    }))?];

    let mut w = csv::Writer::from_path(out.join("checks.csv"))?;
    w.write_record(["source", "name", "pass", "gating", "margin"])?;
    for ch in &report.checks {
        w.write_record(["certificate", &ch.name, &ch.pass.to_string(), &ch.gating.to_string(), &ch.margin.to_string()])?;
    }
    if let Some(checks) = falsifier.get("checks").and_then(Value::as_array) {
        for ch in checks {
            let name = ch["name"].as_str().unwrap_or_default();
            let margin = ch["worst_margin"].as_f64().unwrap_or(f64::NAN);
            let ok = ch["violations"].as_u64() == Some(0);
            w.write_record(["falsifier", name, &ok.to_string(), "true", &margin.to_string()])?;
        }
    }
    w.flush()?;
    outputs.push("checks.csv".into());
    println!("certificate: {}", if pass { "PASS" } else { "FAIL" });
    Ok(Outcome { pass, outputs })
}

pub fn expfunc(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let q = cfg.generator()?;
    let c = cfg.constants()?;
    let spec = &cfg.experiment.expfunc;
    if spec.start >= q.n_states() {
        bail!("experiment.expfunc.start: state {} out of range", spec.start);
    }
    if spec.times.is_empty() || spec.times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        bail!("experiment.expfunc.times: need at least one finite time >= 0");
    }
    if spec.n_paths < 2 {
        bail!("experiment.expfunc.n_paths: need at least 2 paths");
    }
    let f = f_of(&c)?;
    let zeta = spectral_rate(&q, &f)?;
    let horizon = spec.times.iter().copied().fold(0.0, f64::max);
    let acc = monte_carlo(spec.n_paths, spec.times.len(), |i, acc| {
        let mut rng = stream(spec.seed, i, Purpose::Chain);
        let path = sample_chain_hold_jump(&q, spec.start, horizon, &mut rng);
        for (slot, &t) in acc.iter_mut().zip(&spec.times) {
            let integral: f64 = path.pieces().map(|(a, b, k)| f[k] * (b.min(t) - a).max(0.0)).sum();
            slot.push(integral.exp());
        }
        Ok(())
    })?;

    let mut w = csv::Writer::from_path(out.join("expfunc.csv"))?;
    w.write_record(["t", "exact", "mc_mean", "mc_stderr"])?;
    let mut worst_z: f64 = 0.0;
    for (&t, m) in spec.times.iter().zip(&acc) {
        let exact = exp_functional_exact(&q, &f, t, spec.start)?;
        let se = m.stderr();
        if se > 0.0 {
            worst_z = worst_z.max((exact - m.mean).abs() / se);
        } else if exact != m.mean {
            worst_z = f64::INFINITY;
        }
        w.write_record([t.to_string(), exact.to_string(), m.mean.to_string(), se.to_string()])?;
    }
    w.flush()?;
    let limit = exp_functional_exact(&q, &f, spec.limit_time, spec.start)?.ln() / spec.limit_time;
    let outputs = vec![
        "expfunc.csv".to_string(),
        write_json(out, "report.json", &json!({
            "f": f,
            "zeta": zeta,
            "start": spec.start,
            "n_paths": spec.n_paths,
            "worst_standard_errors": worst_z,
            "within_3_standard_errors": worst_z <= 3.0,
            "limit_time": spec.limit_time,
            "log_rate_at_limit_time": limit,
            "log_rate_plus_zeta": limit + zeta,
        }))?,
    ];
    println!("zeta = {zeta:.6}; Monte-Carlo worst deviation {worst_z:.2} standard errors");
    Ok(Outcome { pass: true, outputs })
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let model = cfg.model()?;
    let sim = cfg.sim()?;
    let (xi, _) = cfg.initial_points(&model, sim, false)?;
    let spec = &cfg.experiment.simulate;
    let p = spec.moment_p.unwrap_or(model.constants.p);
    let n_write = spec.write_paths.min(sim.n_paths);
    let paths: Vec<PathOutput> = (0..n_write as u64)
        .into_par_iter()
        .map(|i| simulate_path(&model, &xi, sim, i))
        .collect::<ergo::Result<_>>()?;
    let mut w = BufWriter::new(File::create(out.join("paths.csv"))?);
    writeln!(w, "{}", PathOutput::csv_header(model.dim()))?;
    for (i, path) in paths.iter().enumerate() {
        path.write_csv_rows(i as u64, &mut w)?;
    }
    w.flush()?;

    let curve = moment_curve(&model, &xi, sim, p)?;
    let grid = model.grid(sim)?;
    let tail = (sim.horizon / 2.0, sim.horizon);
    let outputs = vec![
        "paths.csv".to_string(),
        write_curve(out, "summary.csv", &curve)?,
        write_json(out, "report.json", &json!({
            "moment_p": p,
            "n_paths": sim.n_paths,
            "grid": { "h": grid.h, "nodes": grid.len, "memory": grid.memory() },
            "sup_moment": curve.iter().map(|c| c.mean).fold(0.0, f64::max),
            "final": curve.last(),
            "tail_trend": json_or_error(trend(&curve, tail)),
        }))?,
    ];
    println!("simulated {} paths to t = {}", sim.n_paths, sim.horizon);
    Ok(Outcome { pass: true, outputs })
}

pub fn couple(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let model = cfg.model()?;
    let sim = cfg.sim()?;
    let (xi, eta) = cfg.initial_points(&model, sim, true)?;
    let eta = eta.expect("coupled initial data");
    let spec = &cfg.experiment.couple;
    let p = spec.p.unwrap_or(model.constants.p);
    let window = spec.window.unwrap_or_else(|| default_window(sim.horizon));
    let summary = coupled_curve(&model, (&xi, &eta), sim, p)?;
    let survival = survival_curve(&summary.tau, &sim.record_times());

    let mut w = csv::Writer::from_path(out.join("tau.csv"))?;
    w.write_record(["path_id", "tau"])?;
    for (i, t) in summary.tau.iter().enumerate() {
        w.write_record([i.to_string(), t.map_or(String::new(), |t| t.to_string())])?;
    }
    w.flush()?;
    let fit = fit_exponential_decay(&summary.curve, window);
    if let Ok(f) = &fit {
        println!("decay rate {:.4} (95% CI {:.4} .. {:.4}), R^2 {:.4}", f.rate, f.rate_ci.0, f.rate_ci.1, f.r_squared);
    }
    let outputs = vec![
        write_curve(out, "summary.csv", &summary.curve)?,
        write_curve(out, "survival.csv", &survival)?,
        "tau.csv".to_string(),
        write_json(out, "report.json", &json!({
            "p": p,
            "n_paths": sim.n_paths,
            "window": window,
            "decay": json_or_error(fit),
            "coupling_time_decay": json_or_error(fit_exponential_decay(&survival, window)),
            "absorption_rate": json_or_error(off_diagonal_absorption_rate(&model.generator)),
            "coupled_fraction": summary.tau.iter().filter(|t| t.is_some()).count() as f64 / summary.tau.len().max(1) as f64,
        }))?,
    ];
    Ok(Outcome { pass: true, outputs })
}

pub fn decay(cfg: &RunConfig, config_dir: &Path, input: Option<&Path>, out: &Path) -> Result<Outcome> {
    let spec = &cfg.experiment.decay;
    let path: PathBuf = match (input, &spec.input) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => config_dir.join(p),
        (None, None) => bail!("experiment.decay.input: required (or pass --input)"),
    };
    let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let curve: Vec<CurvePoint> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("{}: expected columns t,mean,stderr", path.display()))?;
    let horizon = curve.iter().map(|c| c.t).fold(0.0, f64::max);
    let window = spec.window.unwrap_or_else(|| default_window(horizon));
    let fit = fit_exponential_decay(&curve, window)?;
    println!("decay rate {:.4} (95% CI {:.4} .. {:.4}), R^2 {:.4}", fit.rate, fit.rate_ci.0, fit.rate_ci.1, fit.r_squared);
    let outputs = vec![write_json(out, "report.json", &json!({
        "input": path.display().to_string(),
        "fit": fit,
        "significant": fit.significant(),
    }))?];
    Ok(Outcome { pass: true, outputs })
}

/// Per-path states at the requested steps: `(first, second, d^p)`.
type Snapshots = Vec<(MarkedPoint, MarkedPoint, f64)>;

pub fn ot(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let model = cfg.model()?;
    let sim = cfg.sim()?;
    let (xi, eta) = cfg.initial_points(&model, sim, true)?;
    let eta = eta.expect("coupled initial data");
    let spec = &cfg.experiment.ot;
    let p = spec.p.unwrap_or(model.constants.p);
    if sim.n_paths == 0 || sim.n_paths > MAX_ATOMS {
        bail!("sim.n_paths: exact transport needs 1..={MAX_ATOMS} paths (got {})", sim.n_paths);
    }
    let steps: Vec<usize> = spec
        .times
        .iter()
        .map(|&t| {
            let s = (t / sim.h).round();
            if (s * sim.h - t).abs() > 1e-9 * t.max(1.0) || s < 0.0 || t > sim.horizon + 1e-12 {
                Err(anyhow!("experiment.ot.times: {t} is not a grid time within the horizon"))
            } else {
                Ok(s as usize)
            }
        })
        .collect::<Result<_>>()?;
    let mut run_cfg = sim.clone();
    run_cfg.record_every = 1;
    let coupling = BasicCoupling::new(&model.generator);
    let rho = DelayIntegrator::for_segment(model.kernel(), &xi.segment)?;
    let per_path: Vec<Snapshots> = (0..sim.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut snaps = Vec::with_capacity(steps.len());
            let mut err = None;
            simulate_coupled_with(&model, &coupling, &rho, (&xi, &eta), &run_cfg, i, |a, b| {
                if steps.contains(&a.step) {
                    match pair_distance(a, b) {
                        Ok(d) => snaps.push((
                            a.step,
                            MarkedPoint::new(a.segment.clone(), a.regime),
                            MarkedPoint::new(b.segment.clone(), b.regime),
                            d.powf(p),
                        )),
                        Err(e) => err = Some(e),
                    }
                }
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            Ok(steps
                .iter()
                .map(|s| {
                    let (_, a, b, d) = snaps.iter().find(|x| x.0 == *s).expect("observed step").clone();
                    (a, b, d)
                })
                .collect())
        })
        .collect::<ergo::Result<_>>()?;

    let mut w = csv::Writer::from_path(out.join("ot.csv"))?;
    w.write_record(["t", "w_p", "w_p_pow_p", "coupling_mean", "coupling_stderr"])?;
    let mut rows = Vec::new();
    for (j, &t) in spec.times.iter().enumerate() {
        let first = EmpiricalMeasure::uniform(per_path.iter().map(|s| s[j].0.clone()).collect())?;
        let second = EmpiricalMeasure::uniform(per_path.iter().map(|s| s[j].1.clone()).collect())?;
        let (wp, _) = exact_wasserstein_p(&first, &second, p)?;
        let mut m = Moments::default();
        per_path.iter().for_each(|s| m.push(s[j].2));
        let wpp = wp.powf(p);
        w.write_record([t.to_string(), wp.to_string(), wpp.to_string(), m.mean.to_string(), m.stderr().to_string()])?;
        rows.push(json!({ "t": t, "w_p": wp, "coupling_mean": m.mean, "coupling_stderr": m.stderr(),
                          "dominated": m.mean >= wpp - 2.0 * m.stderr() }));
        println!("t = {t}: W_p = {wp:.6}, coupling E[d^p] = {:.6} +- {:.6}", m.mean, m.stderr());
    }
    w.flush()?;
    let outputs = vec!["ot.csv".to_string(), write_json(out, "report.json", &json!({ "p": p, "n_paths": sim.n_paths, "times": rows }))?];
    Ok(Outcome { pass: true, outputs })
}
