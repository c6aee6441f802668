//! Run configuration shared by the verification harness and the command
//! line. Every field has a default, so an empty TOML file is a valid config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::drift::{DriftConfig, DriftSpec};
use crate::error::{Error, Result};
use crate::export::Format;
use crate::pde::Grid1D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Probe {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl Default for Probe {
    fn default() -> Self {
        Probe {
            x: 0.0,
            y: -1.0,
            t: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_y: usize,
    pub n_t: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_y: 2001,
            n_t: 2001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            n_paths: 100_000,
            dt: 5e-4,
            seed: 7,
        }
    }
}

/// Probe sets of the pointwise inequality checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InequalityProbes {
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    /// Probes for the convexity suite: y range and time levels.
    pub convexity_y: (f64, f64),
    pub convexity_t: Vec<f64>,
}

impl Default for InequalityProbes {
    fn default() -> Self {
        InequalityProbes {
            y: vec![-1.5, -1.0, -0.5, 0.0, 0.5],
            t: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            convexity_y: (-2.0, 0.5),
            convexity_t: vec![0.0, 0.25, 0.5, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShortTimeSettings {
    /// Values of T - t.
    pub taus: Vec<f64>,
    /// Values of x - y.
    pub gaps: Vec<f64>,
    /// C in the exponential factor of the lower bound on -dq/dy.
    pub calibration_c: f64,
}

impl Default for ShortTimeSettings {
    fn default() -> Self {
        ShortTimeSettings {
            taus: vec![0.05, 0.1, 0.2],
            gaps: vec![0.25, 0.5, 1.0],
            calibration_c: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeSettings {
    pub y_sweep: Vec<f64>,
    pub delta_sweep: Vec<f64>,
    pub c_below: f64,
    pub c_above: f64,
    pub at_gate: f64,
    pub h_y: f64,
    pub n_t: usize,
    pub linear_a: Vec<f64>,
}

impl Default for BridgeSettings {
    fn default() -> Self {
        BridgeSettings {
            y_sweep: (0..8).map(|i| -0.7 - 0.1 * i as f64).collect(),
            delta_sweep: vec![0.25],
            c_below: 4.0,
            c_above: 0.25,
            at_gate: 0.5,
            h_y: 0.002,
            n_t: 2049,
            linear_a: vec![0.0, 0.25, 0.5],
        }
    }
}

/// Pass/fail thresholds of the harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gates {
    pub pde_oracle: f64,
    pub classical_agreement: f64,
    pub conservation: f64,
    pub rate_slope: f64,
    pub monotone_slack: f64,
    pub closed_form: f64,
    pub derivative_gap: f64,
    pub envelope_exponent: f64,
    pub se_multiple: f64,
    pub truncation_constant: f64,
    pub exceedance: f64,
    pub relative_slack: f64,
    pub convexity_scale: f64,
    pub bridge_probability: f64,
    pub bridge_moment: f64,
    pub bridge_minimizer: f64,
    pub normalization: f64,
    pub r_squared: f64,
    pub gamma_match: f64,
}

impl Default for Gates {
    fn default() -> Self {
        Gates {
            pde_oracle: 1e-4,
            classical_agreement: 1e-4,
            conservation: 1e-6,
            rate_slope: 0.45,
            monotone_slack: 0.05,
            closed_form: 1e-3,
            derivative_gap: 0.05,
            envelope_exponent: 0.2,
            se_multiple: 3.0,
            truncation_constant: 0.5,
            exceedance: 0.99,
            relative_slack: 1e-3,
            convexity_scale: 1e-5,
            bridge_probability: 1e-3,
            bridge_moment: 1e-3,
            bridge_minimizer: 1e-4,
            normalization: 1e-4,
            r_squared: 0.9,
            gamma_match: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub horizon_t: f64,
    /// Working noise level of the single-epsilon checks.
    pub epsilon: f64,
    /// Sweep for the rate and derivative checks, largest first.
    pub eps_list: Vec<f64>,
    /// Drifts of the rate, derivative and short-time sweeps.
    pub drifts: Vec<DriftConfig>,
    /// Drifts of the pointwise inequality, convexity and Monte Carlo checks.
    pub probe_drifts: Vec<DriftConfig>,
    /// Drifts cross-validated by the two variational solvers.
    pub classical_drifts: Vec<DriftConfig>,
    /// A non-concave drift for the mixed-partial sign check.
    pub nonconcave: DriftConfig,
    /// Concave drift of the bridge concentration sweep.
    pub bridge_drift: DriftConfig,
    pub probe: Probe,
    pub probes: InequalityProbes,
    pub grid: GridConfig,
    pub sim: SimSettings,
    pub short_time: ShortTimeSettings,
    pub bridge: BridgeSettings,
    pub gates: Gates,
    pub out_dir: Option<PathBuf>,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        let log_cosh = DriftConfig::LogCosh { c: 0.5 };
        RunConfig {
            horizon_t: 1.0,
            epsilon: 0.1,
            eps_list: vec![0.4, 0.2, 0.1, 0.05, 0.025],
            drifts: vec![
                DriftConfig::Zero,
                DriftConfig::Linear { a: 0.5 },
                log_cosh.clone(),
            ],
            probe_drifts: vec![DriftConfig::Zero, log_cosh.clone()],
            classical_drifts: vec![
                DriftConfig::Zero,
                DriftConfig::Linear { a: 0.5 },
                DriftConfig::TimeLinear { a0: 0.3, a1: 0.4 },
                log_cosh.clone(),
                DriftConfig::Sine { amp: 0.3 },
            ],
            nonconcave: DriftConfig::Sine { amp: 0.3 },
            bridge_drift: log_cosh,
            probe: Probe::default(),
            probes: InequalityProbes::default(),
            grid: GridConfig::default(),
            sim: SimSettings::default(),
            short_time: ShortTimeSettings::default(),
            bridge: BridgeSettings::default(),
            gates: Gates::default(),
            out_dir: None,
            format: Format::Csv,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn build(&self, drift: &DriftConfig) -> Result<DriftSpec> {
        drift.build(self.horizon_t)
    }

    /// Covering grid for threshold x on [t, T] at the configured resolution.
    pub fn grid_for(&self, spec: &DriftSpec, x: f64, eps: f64, t: f64) -> Result<Grid1D> {
        Grid1D::covering(
            spec,
            x,
            eps,
            t,
            self.horizon_t,
            self.grid.n_y,
            self.grid.n_t,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let big_t = self.horizon_t;
        if !(big_t > 0.0 && big_t.is_finite()) {
            return Err(bad(format!("horizon_t must be positive, got {big_t}")));
        }
        if !(self.epsilon > 0.0) || self.eps_list.iter().any(|e| !(*e > 0.0)) {
            return Err(bad("every epsilon must be positive"));
        }
        if self.eps_list.len() < 4 {
            return Err(bad("eps_list needs at least 4 values"));
        }
        let (lo, hi) = self
            .eps_list
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
                (lo.min(e), hi.max(e))
            });
        if hi / lo < 8.0 {
            return Err(bad("eps_list must span a factor of at least 8"));
        }
        if self.grid.n_y < 101 || self.grid.n_t < 101 || self.grid.n_y.is_multiple_of(2) {
            return Err(bad("grid needs odd n_y >= 101 and n_t >= 101"));
        }
        if !(self.probe.t >= 0.0 && self.probe.t < big_t) {
            return Err(bad(format!("probe time {} outside [0, T)", self.probe.t)));
        }
        if self
            .probes
            .t
            .iter()
            .chain(&self.probes.convexity_t)
            .any(|&t| !(t >= 0.0 && t < big_t))
        {
            return Err(bad("inequality probe times must lie in [0, T)"));
        }
        if self
            .short_time
            .taus
            .iter()
            .any(|&s| !(s > 0.0 && s <= big_t))
        {
            return Err(bad("short-time taus must lie in (0, T]"));
        }
        if self.sim.n_paths == 0 || !(self.sim.dt > 0.0) {
            return Err(bad("simulation needs n_paths >= 1 and dt > 0"));
        }
        let all = self
            .drifts
            .iter()
            .chain(&self.probe_drifts)
            .chain(&self.classical_drifts)
            .chain([&self.nonconcave, &self.bridge_drift]);
        for d in all {
            let spec = self.build(d)?;
            for eps in self.eps_list.iter().chain([&self.epsilon]) {
                let half = Grid1D::covering_half_width(&spec, self.probe.x, *eps, 0.0, big_t);
                let inside = |y: f64| (y - self.probe.x).abs() < half;
                if !inside(self.probe.y) || !self.probes.y.iter().all(|&y| inside(y)) {
                    return Err(bad(format!(
                        "probes fall outside the grid for {} at eps = {eps}",
                        d.label()
                    )));
                }
            }
        }
        Ok(())
    }
}
