//! Bodies of the command-line subcommands. Each writes its tables into the
//! configured output directory and returns one summary line per item.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::bridge::{concentration_check, ConcentrationConfig};
use crate::classical::{derivatives_first, solve_shooting};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::export::{field_rows, write_json, write_table};
use crate::pde::solve_bundle;
use crate::sde::{run_controlled, simulate_uncontrolled, ControllerField, SimConfig};

/// Outcome of a subcommand: printable lines and the files written.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub artifacts: Vec<String>,
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

fn json_file<T: Serialize>(dir: &Path, name: String, value: &T, out: &mut Outcome) -> Result<()> {
    write_json(&dir.join(&name), value)?;
    out.artifacts.push(name);
    Ok(())
}

/// u, q and derivatives on a subsampled grid for every configured drift.
pub fn solve(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let (x, y, t, eps) = (cfg.probe.x, cfg.probe.y, cfg.probe.t, cfg.epsilon);
    let mut out = Outcome::default();
    for d in &cfg.drifts {
        let spec = cfg.build(d)?;
        let grid = cfg.grid_for(&spec, x, eps, t)?;
        let bundle = solve_bundle(&spec, x, 3, grid.h_y(), grid, eps)?;
        let heat = &bundle.fields[1];
        let cost = &bundle.center;
        let stem = format!("field_{}", slug(&d.label()));
        let stride_t = (grid.n_t / 50).max(1);
        let stride_y = (grid.n_y / 400).max(1);
        let rows = field_rows(heat, cost, stride_t, stride_y);
        out.artifacts
            .push(write_table(&dir, &stem, &rows, cfg.format)?);
        let probe = json!({
            "x": x, "y": y, "t": t,
            "u": heat.u_at(y, 0), "q": cost.q_at(y), "dq_dy": cost.dq_dy_at(y), "dq_dx": cost.dq_dx_at(y),
        });
        let descriptor = json!({
            "drift": d,
            "epsilon": eps,
            "threshold": heat.x_threshold,
            "grid": {
                "y_min": grid.y_min, "y_max": grid.y_max, "n_y": grid.n_y,
                "t_start": grid.t_start, "t_end": grid.t_end, "n_t": grid.n_t,
                "stride_t": stride_t, "stride_y": stride_y,
            },
            "diagnostics": heat.diagnostics,
            "flagged_nodes": cost.flagged,
            "probe": probe,
        });
        json_file(&dir, format!("{stem}.meta.json"), &descriptor, &mut out)?;
        out.lines.push(format!(
            "{}: u = {:.6e}, q = {:.6}, dq/dy = {:.6}, dq/dx = {:.6}",
            d.label(),
            heat.u_at(y, 0).unwrap_or(f64::NAN),
            cost.q_at(y).unwrap_or(f64::NAN),
            cost.dq_dy_at(y).unwrap_or(f64::NAN),
            cost.dq_dx_at(y).unwrap_or(f64::NAN),
        ));
    }
    Ok(out)
}

/// Classical minimiser, cost and derivatives at the probe for every
/// cross-validated drift.
pub fn classical(cfg: &RunConfig) -> Result<Outcome> {
    #[derive(Serialize)]
    struct Row {
        s: f64,
        y: f64,
        p: f64,
        lambda: f64,
    }
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let (x, y, t) = (cfg.probe.x, cfg.probe.y, cfg.probe.t);
    let mut out = Outcome::default();
    for d in &cfg.classical_drifts {
        let spec = cfg.build(d)?;
        let sol = solve_shooting(&spec, x, y, t)?;
        let first = derivatives_first(&sol, &spec);
        let stem = format!("classical_{}", slug(&d.label()));
        let rows: Vec<Row> = (0..sol.path.times.len())
            .map(|k| {
                let (s, yy, p) = (sol.path.times[k], sol.path.y[k], sol.momentum_p[k]);
                Row {
                    s,
                    y: yy,
                    p,
                    lambda: spec.b(yy, s) - p,
                }
            })
            .collect();
        out.artifacts
            .push(write_table(&dir, &stem, &rows, cfg.format)?);
        json_file(
            &dir,
            format!("{stem}.meta.json"),
            &json!({ "drift": d, "solution": &sol, "first": first }),
            &mut out,
        )?;
        out.lines.push(format!(
            "{}: q = {:.8}, lambda* = {:.6}, dq/dy = {:.6}, dq/dx = {:.6}, dq/dt = {:.6}{}",
            d.label(),
            sol.q_value,
            sol.lambda_star,
            sol.dq_dy,
            sol.dq_dx,
            sol.dq_dt,
            if sol.zero_cost {
                " (zero-cost region)"
            } else {
                ""
            },
        ));
    }
    Ok(out)
}

/// Controlled ensemble and its estimators at the probe, plus a small free
/// ensemble export.
pub fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let (x, y, t, eps, big_t) = (
        cfg.probe.x,
        cfg.probe.y,
        cfg.probe.t,
        cfg.epsilon,
        cfg.horizon_t,
    );
    let mut out = Outcome::default();
    for d in &cfg.probe_drifts {
        let spec = cfg.build(d)?;
        let grid = cfg.grid_for(&spec, x, eps, t)?;
        let bundle = solve_bundle(&spec, x, 3, grid.h_y(), grid, eps)?;
        let ctrl = ControllerField::new(&spec, &bundle.center);
        let sim = SimConfig::new(cfg.sim.n_paths, cfg.sim.dt, cfg.sim.seed, t, big_t);
        let run = run_controlled(&ctrl, y, t, &sim)?;
        let (dy, dx, sum) = run.representation_dq();
        let is = run.importance_sampling(x);
        let estimates = vec![
            run.representation_q(),
            dy,
            dx,
            sum,
            is.estimate.clone(),
            run.girsanov_normalization(),
        ];
        let stem = format!("simulate_{}", slug(&d.label()));
        out.artifacts
            .push(write_table(&dir, &stem, &estimates, cfg.format)?);
        let summary = json!({
            "drift": d,
            "epsilon": eps,
            "config": sim,
            "exceedance": run.exceedance(x),
            "flagged": run.flagged_count(),
            "dominance_violations": run.dominance_violations(),
            "importance": is,
            "pde": { "q": bundle.center.q_at(y), "dq_dy": bundle.center.dq_dy_at(y), "dq_dx": bundle.center.dq_dx_at(y) },
        });
        json_file(&dir, format!("{stem}.meta.json"), &summary, &mut out)?;
        let mut sample = SimConfig {
            n_paths: 100,
            keep_paths: true,
            ..sim
        };
        sample.dt = sim.dt.max((big_t - t) / 500.0);
        let ens = simulate_uncontrolled(&spec, eps, y, t, &sample)?;
        let free_stem = format!("free_paths_{}", slug(&d.label()));
        ens.write_csv(&dir.join(&free_stem))?;
        out.artifacts.push(format!("{free_stem}.csv"));
        out.artifacts.push(format!("{free_stem}.json"));
        for e in &estimates {
            out.lines.push(format!(
                "{}: {} = {:.6e} +/- {:.2e}",
                d.label(),
                e.name,
                e.estimate,
                e.std_error
            ));
        }
        out.lines.push(format!(
            "{}: exceedance at T - cutoff = {:.4}",
            d.label(),
            run.exceedance(x)
        ));
    }
    Ok(out)
}

/// Tail probabilities of the pinned diffusion over the configured sweep.
pub fn bridge(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let dir = out_dir(cfg)?;
    let bs = &cfg.bridge;
    let spec = cfg.build(&cfg.bridge_drift)?;
    let cc = ConcentrationConfig {
        c_below: bs.c_below,
        c_above: bs.c_above,
        at_gate: bs.at_gate,
        h_y: bs.h_y,
        n_t: bs.n_t,
    };
    let report = concentration_check(&spec, cfg.epsilon, &bs.y_sweep, &bs.delta_sweep, cc)?;
    let stem = format!("bridge_{}", slug(&cfg.bridge_drift.label()));
    let mut out = Outcome::default();
    out.artifacts
        .push(write_table(&dir, &stem, &report.rows(), cfg.format)?);
    json_file(&dir, format!("{stem}.meta.json"), &report, &mut out)?;
    for (name, tail) in [("below", &report.below), ("above", &report.above)] {
        out.lines.push(format!(
            "{name}: slope = {:.4}, R^2 = {:.4}, gamma bound = {:.4}",
            tail.fit.slope, tail.fit.r_squared, tail.gamma_bound
        ));
    }
    out.lines.push(format!(
        "monotone in |y|: {}; pass: {}",
        report.monotone_in_y, report.pass
    ));
    Ok(out)
}
