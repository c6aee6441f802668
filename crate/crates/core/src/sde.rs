//! Euler-Maruyama simulation of the free diffusion and of the diffusion
//! driven by the feedback control lambda*_eps = b - dq_eps/dy, with the
//! Monte Carlo estimators built on top of them.
//!
//! Every path draws its Gaussian increments from its own ChaCha8 stream
//! (seed, stream = path index), so results do not depend on scheduling and
//! the free and controlled runs with the same seed share their noise.

use std::io::Write;
use std::path::Path as FsPath;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::pde::{CostField, Grid1D};

/// Fraction of paths allowed to leave the controller grid.
pub const MAX_FLAGGED_FRACTION: f64 = 0.01;
/// Effective sample size below which importance sampling warns.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// The controlled dynamics stop at T - terminal_cutoff.
    pub terminal_cutoff: f64,
    /// Keep every path in memory (for export); otherwise only endpoints.
    #[serde(default)]
    pub keep_paths: bool,
}

impl SimConfig {
    /// Configuration with the cutoff max(dt, 1e-3 (T - t)).
    pub fn new(n_paths: usize, dt: f64, seed: u64, t: f64, horizon: f64) -> Self {
        SimConfig {
            n_paths,
            dt,
            seed,
            terminal_cutoff: dt.max(1e-3 * (horizon - t)),
            keep_paths: false,
        }
    }

    pub fn validate(&self, t: f64, horizon: f64) -> Result<()> {
        let span = horizon - t;
        if self.n_paths == 0 {
            return Err(Error::Domain("n_paths must be at least 1".into()));
        }
        if !(self.dt > 0.0) || self.dt > span / 10.0 {
            return Err(Error::Domain(format!(
                "dt = {} must lie in (0, (T-t)/10]",
                self.dt
            )));
        }
        if !(self.terminal_cutoff >= self.dt) || self.terminal_cutoff >= span {
            return Err(Error::Domain(format!(
                "terminal cutoff {} must be at least dt and below T - t",
                self.terminal_cutoff
            )));
        }
        Ok(())
    }
}

/// Uniform steps covering [a, b] with spacing at most `dt`.
fn steps(a: f64, b: f64, dt: f64) -> (usize, f64) {
    let n = (((b - a) / dt) - 1e-9).ceil().max(1.0) as usize;
    (n, (b - a) / n as f64)
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Mean and standard error of a sample, summed in order with compensation.
pub fn mean_and_se(values: impl IntoIterator<Item = f64>) -> (f64, f64, usize) {
    let values: Vec<f64> = values.into_iter().collect();
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mut s = CompensatedSum::default();
    values.iter().for_each(|&v| s.add(v));
    let mean = s.value() / n as f64;
    if n == 1 {
        return (mean, f64::NAN, 1);
    }
    let mut ss = CompensatedSum::default();
    values.iter().for_each(|&v| ss.add((v - mean) * (v - mean)));
    let var = ss.value() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt(), n)
}

/// A Monte Carlo estimate as written to reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    fn new(name: &str, (estimate, std_error, n): (f64, f64, usize)) -> Self {
        Estimate {
            name: name.into(),
            estimate,
            std_error,
            n,
        }
    }
}

/// lambda*_eps(y, s) = b(y, s) - dq_eps/dy, bilinear in (y, s) on the cost grid.
#[derive(Debug, Clone, Copy)]
pub struct ControllerField<'a> {
    pub spec: &'a DriftSpec,
    pub source: &'a CostField,
}

impl<'a> ControllerField<'a> {
    pub fn new(spec: &'a DriftSpec, source: &'a CostField) -> Self {
        ControllerField { spec, source }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.source.grid
    }

    pub fn epsilon(&self) -> f64 {
        self.source.epsilon
    }

    pub fn threshold(&self) -> f64 {
        self.source.x_threshold
    }

    /// dq_eps/dy at (y, s); `None` outside the grid or next to a flagged node.
    pub fn dq_dy(&self, y: f64, s: f64) -> Option<f64> {
        let g = &self.source.grid;
        if !(y >= g.y_min && y <= g.y_max && s >= g.t_start && s <= g.t_end) {
            return None;
        }
        let fy = (y - g.y_min) / g.h_y();
        let ft = (s - g.t_start) / g.h_t();
        let i = (fy.floor() as usize).min(g.n_y - 2);
        let k = (ft.floor() as usize).min(g.n_t - 2);
        let (wy, wt) = (fy - i as f64, ft - k as f64);
        let d = &self.source.dq_dy;
        let v = (1.0 - wt) * ((1.0 - wy) * d[[k, i]] + wy * d[[k, i + 1]])
            + wt * ((1.0 - wy) * d[[k + 1, i]] + wy * d[[k + 1, i + 1]]);
        v.is_finite().then_some(v)
    }

    /// The feedback drift lambda*_eps(y, s).
    pub fn lambda(&self, y: f64, s: f64) -> Option<f64> {
        self.dq_dy(y, s).map(|d| self.spec.b(y, s) - d)
    }
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    /// `paths[[j, k]]`, present when the configuration asked to keep paths.
    pub paths: Option<Array2<f64>>,
    /// Value at the last simulated time.
    pub terminal: Vec<f64>,
    /// ln dP_free/dP_controlled on the simulated interval (0 for free runs).
    pub log_girsanov_weight: Vec<f64>,
    /// Paths that left the controller grid; excluded from estimates.
    pub flagged: Vec<bool>,
    pub seed: u64,
    pub config: SimConfig,
    pub epsilon: f64,
}

impl PathEnsemble {
    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }

    /// Writes `<stem>.csv` (path_id, s, y) and `<stem>.json` (seed and configuration).
    pub fn write_csv(&self, stem: &FsPath) -> Result<()> {
        let paths = self
            .paths
            .as_ref()
            .ok_or_else(|| Error::Config("ensemble was simulated without keep_paths".into()))?;
        let csv_path = stem.with_extension("csv");
        let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", csv_path.display()));
        let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
        w.write_record(["path_id", "s", "y"]).map_err(csv_err)?;
        for (j, row) in paths.outer_iter().enumerate() {
            for (s, y) in self.times.iter().zip(row) {
                w.serialize((j, s, y)).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        let json_path = stem.with_extension("json");
        let header = serde_json::json!({
            "seed": self.seed,
            "epsilon": self.epsilon,
            "config": self.config,
            "n_times": self.times.len(),
        });
        let mut f = std::fs::File::create(&json_path).map_err(|e| Error::io(&json_path, e))?;
        serde_json::to_writer_pretty(&mut f, &header)?;
        f.write_all(b"\n").map_err(|e| Error::io(&json_path, e))
    }
}

/// Free Euler-Maruyama paths of dY = b dt + sqrt(eps) dW from (y0, t) to T.
pub fn simulate_uncontrolled(
    spec: &DriftSpec,
    epsilon: f64,
    y0: f64,
    t: f64,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    let horizon = spec.horizon_t;
    cfg.validate(t, horizon)?;
    let (n, h) = steps(t, horizon, cfg.dt);
    let times: Vec<f64> = (0..=n)
        .map(|k| if k == n { horizon } else { t + k as f64 * h })
        .collect();
    let sq = (epsilon * h).sqrt();
    let mut paths = cfg.keep_paths.then(|| Array2::zeros((cfg.n_paths, n + 1)));
    let mut terminal = Vec::with_capacity(cfg.n_paths);
    for j in 0..cfg.n_paths {
        let mut rng = path_rng(cfg.seed, j);
        let mut y = y0;
        if let Some(p) = paths.as_mut() {
            p[[j, 0]] = y;
        }
        for k in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            y += spec.b(y, times[k]) * h + sq * z;
            if let Some(p) = paths.as_mut() {
                p[[j, k + 1]] = y;
            }
        }
        terminal.push(y);
    }
    Ok(PathEnsemble {
        times,
        paths,
        terminal,
        log_girsanov_weight: vec![0.0; cfg.n_paths],
        flagged: vec![false; cfg.n_paths],
        seed: cfg.seed,
        config: *cfg,
        epsilon,
    })
}

/// Fraction of terminal values above x with its binomial standard error.
pub fn estimate_u_naive(ensemble: &PathEnsemble, x: f64) -> Estimate {
    let n = ensemble.terminal.len();
    let hits = ensemble.terminal.iter().filter(|&&y| y > x).count();
    let p = hits as f64 / n as f64;
    Estimate::new("u_naive", (p, (p * (1.0 - p) / n as f64).sqrt(), n))
}

/// Per-path accumulators of a controlled run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PathOutcome {
    /// Y at T - terminal_cutoff.
    pub y_cut: f64,
    /// Y at T after the free continuation.
    pub y_end: f64,
    /// ln dP_free/dP_controlled on [t, T - cutoff].
    pub log_weight: f64,
    /// (1/2) int (lambda - b)^2 ds
    pub cost: f64,
    /// int (1 + (T-s) b_y)(lambda - b) ds
    pub int_dy: f64,
    /// int (1 - (s-t) b_y)(lambda - b) ds
    pub int_dx: f64,
    /// int b_y (lambda - b) ds
    pub int_sum: f64,
    pub flagged: bool,
    /// Steps at which the sampled control fell below the drift.
    pub dominance_violations: usize,
}

/// All outcomes of one controlled simulation, for several estimators.
#[derive(Debug, Clone)]
pub struct ControlledRun {
    pub outcomes: Vec<PathOutcome>,
    pub ensemble: PathEnsemble,
    pub x: f64,
    pub t: f64,
    pub horizon_t: f64,
}

/// Simulates the controlled paths and accumulates weights and path integrals.
pub fn run_controlled(
    ctrl: &ControllerField,
    y0: f64,
    t: f64,
    cfg: &SimConfig,
) -> Result<ControlledRun> {
    let spec = ctrl.spec;
    let horizon = spec.horizon_t;
    cfg.validate(t, horizon)?;
    let g = ctrl.grid();
    if (g.t_end - horizon).abs() > 1e-12 || t < g.t_start - 1e-12 {
        return Err(Error::GridExtent(format!(
            "controller covers [{}, {}] but the run needs [{t}, {horizon}]",
            g.t_start, g.t_end
        )));
    }
    let eps = ctrl.epsilon();
    let sqrt_eps = eps.sqrt();
    let t_cut = horizon - cfg.terminal_cutoff;
    let (n, h) = steps(t, t_cut, cfg.dt);
    let (n_free, h_free) = steps(t_cut, horizon, cfg.dt);
    let times: Vec<f64> = (0..=n)
        .map(|k| if k == n { t_cut } else { t + k as f64 * h })
        .collect();
    let mut paths = cfg.keep_paths.then(|| Array2::zeros((cfg.n_paths, n + 1)));
    let mut outcomes = Vec::with_capacity(cfg.n_paths);
    for j in 0..cfg.n_paths {
        let mut rng = path_rng(cfg.seed, j);
        let mut o = PathOutcome::default();
        let mut y = y0;
        if let Some(p) = paths.as_mut() {
            p[[j, 0]] = y;
        }
        for k in 0..n {
            let s = times[k];
            let Some(d) = ctrl.dq_dy(y, s) else {
                o.flagged = true;
                break;
            };
            let b = spec.b(y, s);
            let v = -d; // lambda - b
            if v < 0.0 {
                o.dominance_violations += 1;
            }
            let by = spec.db_dy(y, s);
            let dw: f64 = rng.sample::<f64, _>(StandardNormal) * h.sqrt();
            o.log_weight += -v * dw / sqrt_eps - 0.5 * v * v * h / eps;
            o.cost += 0.5 * v * v * h;
            o.int_dy += (1.0 + (horizon - s) * by) * v * h;
            o.int_dx += (1.0 - (s - t) * by) * v * h;
            o.int_sum += by * v * h;
            y += (b + v) * h + sqrt_eps * dw;
            if let Some(p) = paths.as_mut() {
                p[[j, k + 1]] = y;
            }
        }
        if o.flagged {
            o.y_cut = f64::NAN;
            o.y_end = f64::NAN;
        } else {
            o.y_cut = y;
            for k in 0..n_free {
                let s = t_cut + k as f64 * h_free;
                let z: f64 = rng.sample(StandardNormal);
                y += spec.b(y, s) * h_free + (eps * h_free).sqrt() * z;
            }
            o.y_end = y;
        }
        outcomes.push(o);
    }
    let flagged: Vec<bool> = outcomes.iter().map(|o| o.flagged).collect();
    let n_flagged = flagged.iter().filter(|f| **f).count();
    if n_flagged as f64 > MAX_FLAGGED_FRACTION * cfg.n_paths as f64 {
        return Err(Error::GridCoverage {
            flagged: n_flagged,
            total: cfg.n_paths,
        });
    }
    let ensemble = PathEnsemble {
        times,
        paths,
        terminal: outcomes.iter().map(|o| o.y_cut).collect(),
        log_girsanov_weight: outcomes.iter().map(|o| o.log_weight).collect(),
        flagged,
        seed: cfg.seed,
        config: *cfg,
        epsilon: eps,
    };
    Ok(ControlledRun {
        outcomes,
        ensemble,
        x: ctrl.threshold(),
        t,
        horizon_t: horizon,
    })
}

/// Importance-sampling estimate of P(Y(T) > x).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceEstimate {
    pub estimate: Estimate,
    /// p(1-p) over the variance of a single weighted sample.
    pub variance_ratio: f64,
    pub effective_sample_size: f64,
    pub warning: Option<String>,
}

impl ControlledRun {
    fn kept(&self) -> impl Iterator<Item = &PathOutcome> {
        self.outcomes.iter().filter(|o| !o.flagged)
    }

    pub fn flagged_count(&self) -> usize {
        self.outcomes.len() - self.kept().count()
    }

    pub fn dominance_violations(&self) -> usize {
        self.kept().map(|o| o.dominance_violations).sum()
    }

    /// Fraction of paths with Y(T - cutoff) > x.
    pub fn exceedance(&self, x: f64) -> f64 {
        let kept: Vec<_> = self.kept().collect();
        kept.iter().filter(|o| o.y_cut > x).count() as f64 / kept.len() as f64
    }

    /// Mean of (1/2) int (lambda - b)^2 ds.
    pub fn representation_q(&self) -> Estimate {
        Estimate::new("q_representation", mean_and_se(self.kept().map(|o| o.cost)))
    }

    /// (dq/dy, dq/dx, their sum identity) from the path integrals.
    pub fn representation_dq(&self) -> (Estimate, Estimate, Estimate) {
        let tau = self.horizon_t - self.t;
        let dy = Estimate::new(
            "dq_dy_representation",
            mean_and_se(self.kept().map(|o| -o.int_dy / tau)),
        );
        let dx = Estimate::new(
            "dq_dx_representation",
            mean_and_se(self.kept().map(|o| o.int_dx / tau)),
        );
        let sum = Estimate::new(
            "dq_sum_identity",
            mean_and_se(self.kept().map(|o| -o.int_sum)),
        );
        (dy, dx, sum)
    }

    /// Mean of the likelihood ratio exp(ln dP_free/dP_controlled) over the
    /// controlled paths; one in expectation.
    pub fn girsanov_normalization(&self) -> Estimate {
        Estimate::new(
            "girsanov_mean_weight",
            mean_and_se(self.kept().map(|o| o.log_weight.exp())),
        )
    }

    pub fn importance_sampling(&self, x: f64) -> ImportanceEstimate {
        let samples: Vec<f64> = self
            .kept()
            .map(|o| if o.y_end > x { o.log_weight.exp() } else { 0.0 })
            .collect();
        let (p, se, n) = mean_and_se(samples.iter().copied());
        let var_is = se * se * n as f64;
        let variance_ratio = if var_is > 0.0 {
            p * (1.0 - p) / var_is
        } else {
            f64::INFINITY
        };
        let mut s1 = CompensatedSum::default();
        let mut s2 = CompensatedSum::default();
        for &w in &samples {
            s1.add(w);
            s2.add(w * w);
        }
        let ess = if s2.value() > 0.0 {
            s1.value() * s1.value() / s2.value()
        } else {
            0.0
        };
        let warning = (ess < MIN_EFFECTIVE_SAMPLES).then(|| {
            format!(
                "effective sample size {ess:.1} below {MIN_EFFECTIVE_SAMPLES}; estimate unreliable"
            )
        });
        ImportanceEstimate {
            estimate: Estimate::new("u_importance", (p, se, n)),
            variance_ratio,
            effective_sample_size: ess,
            warning,
        }
    }
}

pub fn simulate_controlled(
    ctrl: &ControllerField,
    y0: f64,
    t: f64,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    run_controlled(ctrl, y0, t, cfg).map(|r| r.ensemble)
}

pub fn representation_q(
    ctrl: &ControllerField,
    y0: f64,
    t: f64,
    cfg: &SimConfig,
) -> Result<Estimate> {
    run_controlled(ctrl, y0, t, cfg).map(|r| r.representation_q())
}

pub fn representation_dq(
    ctrl: &ControllerField,
    y0: f64,
    t: f64,
    cfg: &SimConfig,
) -> Result<(Estimate, Estimate)> {
    run_controlled(ctrl, y0, t, cfg).map(|r| {
        let (dy, dx, _) = r.representation_dq();
        (dy, dx)
    })
}

pub fn importance_sampling(
    ctrl: &ControllerField,
    y0: f64,
    t: f64,
    x: f64,
    cfg: &SimConfig,
) -> Result<ImportanceEstimate> {
    run_controlled(ctrl, y0, t, cfg).map(|r| r.importance_sampling(x))
}

/// Mean of exp(ln dP_controlled/dP_free) over free paths, the same
/// exponential martingale seen from the free measure.
pub fn free_measure_normalization(
    ctrl: &ControllerField,
    y0: f64,
    t: f64,
    cfg: &SimConfig,
) -> Result<Estimate> {
    let spec = ctrl.spec;
    let horizon = spec.horizon_t;
    cfg.validate(t, horizon)?;
    let eps = ctrl.epsilon();
    let t_cut = horizon - cfg.terminal_cutoff;
    let (n, h) = steps(t, t_cut, cfg.dt);
    let mut weights = Vec::with_capacity(cfg.n_paths);
    let mut flagged = 0;
    for j in 0..cfg.n_paths {
        let mut rng = path_rng(cfg.seed, j);
        let (mut y, mut lw) = (y0, 0.0);
        let mut ok = true;
        for k in 0..n {
            let s = t + k as f64 * h;
            if !ctrl.grid().contains(y) {
                ok = false;
                break;
            }
            // Inside the grid the controller is only undefined where u has
            // underflowed; the likelihood ratio u(Y_s, s)/u(y0, t) is then
            // below 1e-296 and stays so in expectation.
            let Some(d) = ctrl.dq_dy(y, s) else {
                lw = f64::NEG_INFINITY;
                break;
            };
            let v = -d;
            let dw: f64 = rng.sample::<f64, _>(StandardNormal) * h.sqrt();
            lw += v * dw / eps.sqrt() - 0.5 * v * v * h / eps;
            y += spec.b(y, s) * h + eps.sqrt() * dw;
        }
        if ok {
            weights.push(lw.exp());
        } else {
            flagged += 1;
        }
    }
    if flagged as f64 > MAX_FLAGGED_FRACTION * cfg.n_paths as f64 {
        return Err(Error::GridCoverage {
            flagged,
            total: cfg.n_paths,
        });
    }
    Ok(Estimate::new("girsanov_free_measure", mean_and_se(weights)))
}

/// Mean |Y_dt(T) - Y_{dt/2}(T)| over paths driven by the same Brownian
/// increments, the coarse step summing pairs of fine increments.
pub fn strong_error_probe(
    spec: &DriftSpec,
    epsilon: f64,
    y0: f64,
    t: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<f64> {
    let horizon = spec.horizon_t;
    SimConfig::new(n_paths, dt, seed, t, horizon).validate(t, horizon)?;
    let (n, h) = steps(t, horizon, dt);
    let hf = 0.5 * h;
    let mut total = CompensatedSum::default();
    for j in 0..n_paths {
        let mut rng = path_rng(seed, j);
        let (mut yc, mut yf) = (y0, y0);
        for k in 0..n {
            let s = t + k as f64 * h;
            let w1: f64 = rng.sample::<f64, _>(StandardNormal) * hf.sqrt();
            let w2: f64 = rng.sample::<f64, _>(StandardNormal) * hf.sqrt();
            yf += spec.b(yf, s) * hf + epsilon.sqrt() * w1;
            yf += spec.b(yf, s + hf) * hf + epsilon.sqrt() * w2;
            yc += spec.b(yc, s) * h + epsilon.sqrt() * (w1 + w2);
        }
        total.add((yc - yf).abs());
    }
    Ok(total.value() / n_paths as f64)
}

/// Sample against closed-form moments at one probe time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentProbe {
    pub s: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub exact_mean: f64,
    pub exact_variance: f64,
}

/// Simulates dZ = -mu Z/(T-s) ds + sqrt(eps) dW from (z0, t) and compares
/// sample moments with mean ((T-s)/(T-t))^mu z0 and variance
/// eps int_t^s ((T-s)/(T-r))^(2 mu) dr at each probe time.
pub fn bridge_like_oracle(
    mu: f64,
    epsilon: f64,
    t: f64,
    horizon: f64,
    z0: f64,
    probes: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<MomentProbe>> {
    if !(mu > 0.0) {
        return Err(Error::Domain(format!("mu must be positive, got {mu}")));
    }
    cfg.validate(t, horizon)?;
    let t_cut = horizon - cfg.terminal_cutoff;
    if probes.iter().any(|&s| s < t || s > t_cut) {
        return Err(Error::Domain(
            "probe times must lie in [t, T - cutoff]".into(),
        ));
    }
    let (n, h) = steps(t, t_cut, cfg.dt);
    let probe_steps: Vec<usize> = probes
        .iter()
        .map(|&s| ((s - t) / h).round() as usize)
        .collect();
    let mut samples = vec![Vec::with_capacity(cfg.n_paths); probes.len()];
    for j in 0..cfg.n_paths {
        let mut rng = path_rng(cfg.seed, j);
        let mut z = z0;
        for k in 0..=n {
            for (p, &ks) in probe_steps.iter().enumerate() {
                if ks == k {
                    samples[p].push(z);
                }
            }
            if k == n {
                break;
            }
            let s = t + k as f64 * h;
            let w: f64 = rng.sample(StandardNormal);
            z += -mu * z / (horizon - s) * h + (epsilon * h).sqrt() * w;
        }
    }
    let mut out = Vec::with_capacity(probes.len());
    for (p, &ks) in probe_steps.iter().enumerate() {
        let s = t + ks as f64 * h;
        let (mean, mean_se, m) = mean_and_se(samples[p].iter().copied());
        let variance = mean_se * mean_se * m as f64;
        let variance_se = variance * (2.0 / (m as f64 - 1.0).max(1.0)).sqrt();
        let exact_mean = ((horizon - s) / (horizon - t)).powf(mu) * z0;
        let exact_variance = epsilon
            * crate::quad::integrate(
                |r| ((horizon - s) / (horizon - r)).powf(2.0 * mu),
                t,
                s,
                1e-10,
            )
            .unwrap_or(f64::NAN);
        out.push(MomentProbe {
            s,
            mean,
            mean_se,
            variance,
            variance_se,
            exact_mean,
            exact_variance,
        });
    }
    Ok(out)
}

/// Writes estimates as a JSON array of {name, estimate, std_error, n}.
pub fn write_estimates(estimates: &[Estimate], out: &FsPath) -> Result<()> {
    let mut f = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
    serde_json::to_writer_pretty(&mut f, estimates)?;
    f.write_all(b"\n").map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::linear_stats;
    use crate::normal;
    use crate::pde::{hopf_cole, solve_u};

    #[test]
    fn config_validation() {
        let cfg = SimConfig::new(10, 0.01, 1, 0.0, 1.0);
        assert_eq!(cfg.terminal_cutoff, 0.01);
        assert!(cfg.validate(0.0, 1.0).is_ok());
        assert!(SimConfig::new(0, 0.01, 1, 0.0, 1.0)
            .validate(0.0, 1.0)
            .is_err());
        assert!(SimConfig::new(10, 0.2, 1, 0.0, 1.0)
            .validate(0.0, 1.0)
            .is_err());
        let mut bad = cfg;
        bad.terminal_cutoff = 0.001;
        assert!(bad.validate(0.0, 1.0).is_err());
    }

    #[test]
    fn compensated_sum_is_accurate() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn free_paths_are_reproducible() {
        let spec = DriftSpec::log_cosh(0.5, 1.0).unwrap();
        let mut cfg = SimConfig::new(20, 0.01, 42, 0.0, 1.0);
        cfg.keep_paths = true;
        let a = simulate_uncontrolled(&spec, 0.1, -1.0, 0.0, &cfg).unwrap();
        let b = simulate_uncontrolled(&spec, 0.1, -1.0, 0.0, &cfg).unwrap();
        assert_eq!(a.paths, b.paths);
        assert_eq!(a.terminal, b.terminal);
        cfg.seed = 43;
        let c = simulate_uncontrolled(&spec, 0.1, -1.0, 0.0, &cfg).unwrap();
        assert_ne!(a.terminal, c.terminal);
    }

    #[test]
    fn free_moments() {
        let spec = DriftSpec::zero(1.0).unwrap();
        let cfg = SimConfig::new(20_000, 0.01, 3, 0.0, 1.0);
        let ens = simulate_uncontrolled(&spec, 0.1, -1.0, 0.0, &cfg).unwrap();
        let (m, _, n) = mean_and_se(ens.terminal.iter().copied());
        assert!((m + 1.0).abs() <= 3.0 * (0.1 / n as f64).sqrt());

        let spec = DriftSpec::linear(0.5, 1.0).unwrap();
        let ens = simulate_uncontrolled(
            &spec,
            0.1,
            0.0,
            0.0,
            &SimConfig::new(100_000, 0.005, 4, 0.0, 1.0),
        )
        .unwrap();
        let (_, se, n) = mean_and_se(ens.terminal.iter().copied());
        let var = se * se * n as f64;
        let exact = 0.1 * linear_stats(|_| 0.5, 0.0, 1.0).unwrap().sigma2;
        let var_se = exact * (2.0 / n as f64).sqrt();
        // Euler bias in the variance is O(dt)
        assert!(
            (var - exact).abs() <= 3.0 * var_se + exact * 0.005 * 1.0,
            "{var} vs {exact}"
        );
        assert_eq!(estimate_u_naive(&ens, -100.0).estimate, 1.0);
    }

    #[test]
    fn strong_error_decreases_with_dt() {
        let spec = DriftSpec::sine(0.3, 1.0).unwrap();
        let coarse = strong_error_probe(&spec, 0.1, -1.0, 0.0, 0.02, 2000, 9).unwrap();
        let fine = strong_error_probe(&spec, 0.1, -1.0, 0.0, 0.01, 2000, 9).unwrap();
        assert!(fine < coarse, "{fine} vs {coarse}");
    }

    #[test]
    fn controller_far_below_threshold() {
        let spec = DriftSpec::zero(1.0).unwrap();
        let g = Grid1D::new(-4.0, 4.0, 2001, 0.0, 1.0, 2001).unwrap();
        let cost = hopf_cole(&solve_u(&spec, 0.0, g, 0.1).unwrap());
        let ctrl = ControllerField::new(&spec, &cost);
        let (y, s) = (-1.0, 0.5);
        let lam = ctrl.lambda(y, s).unwrap();
        let tau: f64 = 1.0 - s;
        let z = (0.0 - y) / (0.1 * tau).sqrt();
        let exact = (0.1 / tau).sqrt() * normal::inverse_mills(z);
        assert!((lam - exact).abs() < 5e-3, "{lam} vs {exact}");
        assert!((exact - (0.0 - y) / tau).abs() / exact < 0.1);
        assert!(ctrl.lambda(5.0, 0.5).is_none());
    }

    #[test]
    fn bridge_like_moments() {
        let cfg = SimConfig::new(20_000, 0.001, 5, 0.0, 1.0);
        let probes = bridge_like_oracle(1.0, 0.1, 0.0, 1.0, -1.0, &[0.5], &cfg).unwrap();
        let p = probes[0];
        assert!((p.exact_mean + 0.5).abs() < 1e-12);
        assert!((p.exact_variance - 0.025).abs() < 1e-9);
        assert!((p.mean - p.exact_mean).abs() <= 3.0 * p.mean_se + 1e-3);
        assert!((p.variance - p.exact_variance).abs() <= 3.0 * p.variance_se);
        let quiet = bridge_like_oracle(1.0, 0.0, 0.0, 1.0, -1.0, &[0.5, 0.9], &cfg).unwrap();
        assert!((quiet[0].mean + 0.5).abs() < 1e-3 && quiet[0].variance == 0.0);
    }
}
