//! Drift functions b(y, t), their y-derivatives, the backward characteristic
//! and closed-form statistics of linear drifts.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

type ScalarField = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Number of RK4 steps used over a full horizon when integrating the
/// characteristic backward.
pub const CHARACTERISTIC_STEPS: usize = 2000;

/// User supplied drift with hand-written derivatives.
#[derive(Clone)]
pub struct CustomDrift {
    pub b: ScalarField,
    pub db_dy: ScalarField,
    pub d2b_dy2: Option<ScalarField>,
}

impl fmt::Debug for CustomDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDrift")
            .field("has_second_derivative", &self.d2b_dy2.is_some())
            .finish()
    }
}

/// The built-in drift family plus an escape hatch for custom drifts.
#[derive(Debug, Clone)]
pub enum DriftKind {
    /// b = 0
    Zero,
    /// b = a y
    Linear {
        a: f64,
    },
    /// b = (a0 + a1 t) y
    TimeLinear {
        a0: f64,
        a1: f64,
    },
    /// b = -c ln cosh y: concave, Lipschitz constant c, zero at the origin
    LogCosh {
        c: f64,
    },
    /// b = amp sin y: bounded slope but not concave
    Sine {
        amp: f64,
    },
    Custom(CustomDrift),
}

/// Drift selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DriftConfig {
    Zero,
    Linear {
        a: f64,
    },
    #[serde(rename = "timelinear")]
    TimeLinear {
        a0: f64,
        a1: f64,
    },
    #[serde(rename = "logcosh")]
    LogCosh {
        c: f64,
    },
    Sine {
        amp: f64,
    },
}

impl DriftConfig {
    pub fn build(&self, horizon: f64) -> Result<DriftSpec> {
        match *self {
            DriftConfig::Zero => DriftSpec::zero(horizon),
            DriftConfig::Linear { a } => DriftSpec::linear(a, horizon),
            DriftConfig::TimeLinear { a0, a1 } => DriftSpec::time_linear(a0, a1, horizon),
            DriftConfig::LogCosh { c } => DriftSpec::log_cosh(c, horizon),
            DriftConfig::Sine { amp } => DriftSpec::sine(amp, horizon),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            DriftConfig::Zero => "zero".into(),
            DriftConfig::Linear { a } => format!("linear(a={a})"),
            DriftConfig::TimeLinear { a0, a1 } => format!("timelinear(a0={a0},a1={a1})"),
            DriftConfig::LogCosh { c } => format!("logcosh(c={c})"),
            DriftConfig::Sine { amp } => format!("sine(amp={amp})"),
        }
    }
}

/// A drift together with the structural facts the theory relies on.
#[derive(Debug, Clone)]
pub struct DriftSpec {
    pub kind: DriftKind,
    /// Supplied bound on |db/dy|; verified by sampling, never inferred.
    pub lipschitz_a: f64,
    pub is_concave: bool,
    pub vanishes_at_origin: bool,
    pub horizon_t: f64,
}

/// Growth factor and variance scale of a linear drift b = A(s) y on [t, T].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearDriftStats {
    pub lambda: f64,
    pub sigma2: f64,
}

fn ln_cosh(y: f64) -> f64 {
    let a = y.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl DriftSpec {
    fn new(kind: DriftKind, a: f64, concave: bool, origin: bool, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidDrift(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::InvalidDrift(format!(
                "Lipschitz bound must be >= 0, got {a}"
            )));
        }
        Ok(DriftSpec {
            kind,
            lipschitz_a: a,
            is_concave: concave,
            vanishes_at_origin: origin,
            horizon_t: horizon,
        })
    }

    pub fn zero(horizon: f64) -> Result<Self> {
        Self::new(DriftKind::Zero, 0.0, true, true, horizon)
    }

    pub fn linear(a: f64, horizon: f64) -> Result<Self> {
        Self::new(DriftKind::Linear { a }, a.abs(), true, true, horizon)
    }

    /// A(s) = a0 + a1 s on [0, horizon].
    pub fn time_linear(a0: f64, a1: f64, horizon: f64) -> Result<Self> {
        let bound = a0.abs().max((a0 + a1 * horizon).abs());
        Self::new(DriftKind::TimeLinear { a0, a1 }, bound, true, true, horizon)
    }

    pub fn log_cosh(c: f64, horizon: f64) -> Result<Self> {
        if c < 0.0 {
            return Err(Error::InvalidDrift("log-cosh drift needs c >= 0".into()));
        }
        Self::new(DriftKind::LogCosh { c }, c, true, true, horizon)
    }

    pub fn sine(amp: f64, horizon: f64) -> Result<Self> {
        Self::new(
            DriftKind::Sine { amp },
            amp.abs(),
            amp == 0.0,
            true,
            horizon,
        )
    }

    pub fn custom(
        drift: CustomDrift,
        lipschitz_a: f64,
        is_concave: bool,
        vanishes_at_origin: bool,
        horizon: f64,
    ) -> Result<Self> {
        Self::new(
            DriftKind::Custom(drift),
            lipschitz_a,
            is_concave,
            vanishes_at_origin,
            horizon,
        )
    }

    /// Overrides the stated Lipschitz bound (used to exercise failing checks).
    pub fn with_lipschitz(mut self, a: f64) -> Self {
        self.lipschitz_a = a;
        self
    }

    #[inline]
    pub fn b(&self, y: f64, t: f64) -> f64 {
        match &self.kind {
            DriftKind::Zero => 0.0,
            DriftKind::Linear { a } => a * y,
            DriftKind::TimeLinear { a0, a1 } => (a0 + a1 * t) * y,
            DriftKind::LogCosh { c } => -c * ln_cosh(y),
            DriftKind::Sine { amp } => amp * y.sin(),
            DriftKind::Custom(c) => (c.b)(y, t),
        }
    }

    #[inline]
    pub fn db_dy(&self, y: f64, t: f64) -> f64 {
        match &self.kind {
            DriftKind::Zero => 0.0,
            DriftKind::Linear { a } => *a,
            DriftKind::TimeLinear { a0, a1 } => a0 + a1 * t,
            DriftKind::LogCosh { c } => -c * y.tanh(),
            DriftKind::Sine { amp } => amp * y.cos(),
            DriftKind::Custom(c) => (c.db_dy)(y, t),
        }
    }

    /// Second y-derivative, when the drift provides one.
    pub fn d2b_dy2(&self, y: f64, t: f64) -> Option<f64> {
        match &self.kind {
            DriftKind::Zero | DriftKind::Linear { .. } | DriftKind::TimeLinear { .. } => Some(0.0),
            DriftKind::LogCosh { c } => {
                let s = 1.0 / y.cosh();
                Some(-c * s * s)
            }
            DriftKind::Sine { amp } => Some(-amp * y.sin()),
            DriftKind::Custom(c) => c.d2b_dy2.as_ref().map(|f| f(y, t)),
        }
    }

    pub fn has_second_derivative(&self) -> bool {
        match &self.kind {
            DriftKind::Custom(c) => c.d2b_dy2.is_some(),
            _ => true,
        }
    }

    /// For drifts of the form A(s) y, the coefficient A(s).
    pub fn linear_coefficient(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        match self.kind {
            DriftKind::Zero => Some(Box::new(|_| 0.0)),
            DriftKind::Linear { a } => Some(Box::new(move |_| a)),
            DriftKind::TimeLinear { a0, a1 } => Some(Box::new(move |s| a0 + a1 * s)),
            _ => None,
        }
    }

    /// Checked evaluation of b(y, t).
    pub fn eval_b(&self, y: f64, t: f64) -> Result<f64> {
        if t > self.horizon_t {
            return Err(Error::InvalidDrift(format!(
                "t = {t} beyond horizon {}",
                self.horizon_t
            )));
        }
        let v = self.b(y, t);
        if !v.is_finite() {
            return Err(Error::InvalidDrift(format!("b({y}, {t}) = {v}")));
        }
        Ok(v)
    }

    /// Spot-checks the structural claims on a grid of y in [-y_span, y_span]
    /// and times in [0, T].
    pub fn verify_invariants(&self, y_span: f64, n_y: usize, n_t: usize) -> Result<()> {
        for j in 0..n_t {
            let t = self.horizon_t * j as f64 / (n_t.max(2) - 1) as f64;
            if self.vanishes_at_origin && self.b(0.0, t).abs() > 1e-12 {
                return Err(Error::InvalidDrift(format!("b(0, {t}) != 0")));
            }
            for i in 0..n_y {
                let y = -y_span + 2.0 * y_span * i as f64 / (n_y.max(2) - 1) as f64;
                let slope = self.db_dy(y, t);
                if slope.abs() > self.lipschitz_a * (1.0 + 1e-12) + 1e-15 {
                    return Err(Error::InvalidDrift(format!(
                        "|db/dy({y}, {t})| = {} exceeds A = {}",
                        slope.abs(),
                        self.lipschitz_a
                    )));
                }
                if self.is_concave {
                    if let Some(c) = self.d2b_dy2(y, t) {
                        if c > 1e-12 {
                            return Err(Error::InvalidDrift(format!(
                                "d2b/dy2({y}, {t}) = {c} > 0 for a drift marked concave"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// F(x, t): value at time t of the solution of y' = b(y, s) with y(T) = x.
    pub fn characteristic(&self, x: f64, t: f64) -> f64 {
        self.characteristic_with_slope(x, t).0
    }

    /// Returns F(x, t) together with dF/dx = exp(-int_t^T db/dy ds) along the
    /// same characteristic.
    pub fn characteristic_with_slope(&self, x: f64, t: f64) -> (f64, f64) {
        let horizon = self.horizon_t;
        if t >= horizon {
            return (x, 1.0);
        }
        let span = horizon - t;
        let steps = ((span / horizon) * CHARACTERISTIC_STEPS as f64)
            .ceil()
            .max(1.0) as usize;
        let h = -span / steps as f64;
        // State (y, ln dF/dx); d/ds ln(dF/dx)(s) = db/dy along the backward flow.
        let rhs = |y: f64, s: f64| (self.b(y, s), self.db_dy(y, s));
        let (mut y, mut lg, mut s) = (x, 0.0, horizon);
        for _ in 0..steps {
            let (k1, l1) = rhs(y, s);
            let (k2, l2) = rhs(y + 0.5 * h * k1, s + 0.5 * h);
            let (k3, l3) = rhs(y + 0.5 * h * k2, s + 0.5 * h);
            let (k4, l4) = rhs(y + h * k3, s + h);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            lg += h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
            s += h;
        }
        (y, lg.exp())
    }
}

/// Lambda = exp(int_t^T A), sigma2 = int_t^T exp(2 int_s^T A) ds, both by
/// adaptive quadrature to relative tolerance 1e-10.
pub fn linear_stats<F>(a_of_s: F, t: f64, horizon: f64) -> Result<LinearDriftStats>
where
    F: Fn(f64) -> f64,
{
    if !(t < horizon) {
        return Err(Error::Domain(format!("need t < T, got t={t}, T={horizon}")));
    }
    let tol = 1e-10;
    let cumulative = |s: f64| quad::integrate(&a_of_s, s, horizon, tol * 1e-2);
    let lambda = cumulative(t)?.exp();
    let sigma2 = quad::integrate(
        |s| match cumulative(s) {
            Ok(v) => (2.0 * v).exp(),
            Err(_) => f64::NAN,
        },
        t,
        horizon,
        tol,
    )?;
    if !(lambda > 0.0 && sigma2 > 0.0 && lambda.is_finite() && sigma2.is_finite()) {
        return Err(Error::Quadrature(format!(
            "degenerate linear statistics: lambda={lambda}, sigma2={sigma2}"
        )));
    }
    Ok(LinearDriftStats { lambda, sigma2 })
}

impl DriftSpec {
    /// Linear statistics for this drift on [t, T], if it is linear.
    pub fn linear_stats(&self, t: f64, horizon: f64) -> Option<Result<LinearDriftStats>> {
        self.linear_coefficient()
            .map(|a| linear_stats(a, t, horizon))
    }
}
