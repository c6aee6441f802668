//! The deterministic control problem: minimise
//!
//! ```text
//! (1/2) int_t^T (y'(s) - b(y(s), s))^2 ds,   y(t) = y,  y(T) >= x,
//! ```
//!
//! whose value q(x, y, t) is the zero-noise limit of q_eps.
//!
//! Minimisers solve the Hamiltonian system y' = b - p, p' = -b_y p. The
//! shooting solver finds the initial momentum p0 that lands on x, and the
//! first and second derivatives of q follow from p0, p(T) and the
//! fundamental matrix of the linearised system.

use std::io::Write;
use std::path::Path as FsPath;

use serde::Serialize;

use crate::drift::DriftSpec;
use crate::error::{Error, Result};

/// Time intervals used by the shooting integrator.
pub const SHOOTING_INTERVALS: usize = 2000;
/// Interior nodes used by the direct minimiser unless told otherwise.
pub const DIRECT_NODES: usize = 256;
/// Iteration cap of the direct minimiser.
pub const DIRECT_MAX_ITER: usize = 100_000;

const BISECTION_WIDTH: f64 = 1e-12;
const ENDPOINT_TOL: f64 = 1e-9;
const GRADIENT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub y: Vec<f64>,
}

impl Path {
    pub fn new(times: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times.len() != y.len() {
            return Err(Error::Domain(
                "a path needs at least two nodes and matching lengths".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain(
                "path times must be strictly increasing".into(),
            ));
        }
        if times.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Domain("path contains non-finite values".into()));
        }
        Ok(Path { times, y })
    }

    pub fn start(&self) -> f64 {
        self.y[0]
    }

    pub fn end(&self) -> f64 {
        *self.y.last().unwrap()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassicalSolution {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub horizon_t: f64,
    /// True when y >= F(x, t): the characteristic itself is optimal.
    pub zero_cost: bool,
    pub path: Path,
    pub momentum_p: Vec<f64>,
    pub q_value: f64,
    pub lambda_star: f64,
    pub dq_dy: f64,
    pub dq_dx: f64,
    pub dq_dt: f64,
    pub d2q_dy2: Option<f64>,
    pub d2q_dxdy: Option<f64>,
    pub d2q_dx2: Option<f64>,
}

impl ClassicalSolution {
    pub fn initial_momentum(&self) -> f64 {
        self.momentum_p[0]
    }

    pub fn terminal_momentum(&self) -> f64 {
        *self.momentum_p.last().unwrap()
    }
}

/// Which end of the interval carries the data of the variational system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VariationData {
    /// phi(T) = 0, psi(T) = 1
    Terminal,
    /// phi(t) = 0, psi(t) = 1
    Initial,
}

/// Solution of phi' = b_y phi - psi, psi' = -b_y psi - V phi with
/// V = b_yy p along a minimiser.
#[derive(Debug, Clone, Serialize)]
pub struct VariationalSystem {
    pub data: VariationData,
    pub times: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstDerivatives {
    pub dq_dy: f64,
    pub dq_dx: f64,
    pub dq_dt: f64,
    /// dq/dy from the path integral -(1/(T-t)) int (1 + (T-s) b_y)(lambda - b) ds.
    pub dq_dy_integral: f64,
    /// dq/dx from the path integral (1/(T-t)) int (1 - (s-t) b_y)(lambda - b) ds.
    pub dq_dx_integral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondDerivatives {
    pub d2q_dy2: f64,
    pub d2q_dxdy: f64,
    pub d2q_dx2: f64,
}

/// RK4 trajectory of (y, p), ln V = int b_y and the fundamental matrix of
/// the linearised system.
struct Trajectory {
    times: Vec<f64>,
    y: Vec<f64>,
    p: Vec<f64>,
    log_v: Vec<f64>,
    tangent: Vec<[f64; 4]>,
}

fn integrate(
    spec: &DriftSpec,
    y0: f64,
    t: f64,
    p0: f64,
    intervals: usize,
    tangent: bool,
) -> Trajectory {
    let horizon = spec.horizon_t;
    let h = (horizon - t) / intervals as f64;
    let rhs = |s: f64, z: &[f64; 7]| -> [f64; 7] {
        let (y, p) = (z[0], z[1]);
        let b = spec.b(y, s);
        let by = spec.db_dy(y, s);
        let mut out = [b - p, -by * p, by, 0.0, 0.0, 0.0, 0.0];
        if tangent {
            let byy_p = spec.d2b_dy2(y, s).unwrap_or(0.0) * p;
            // columns of M: (dy, dp) for each initial perturbation
            for c in 0..2 {
                let (dy, dp) = (z[3 + c], z[5 + c]);
                out[3 + c] = by * dy - dp;
                out[5 + c] = -by * dp - byy_p * dy;
            }
        }
        out
    };
    let n = intervals + 1;
    let mut tr = Trajectory {
        times: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        p: Vec::with_capacity(n),
        log_v: Vec::with_capacity(n),
        tangent: Vec::with_capacity(if tangent { n } else { 0 }),
    };
    // z = [y, p, ln V, M11, M12, M21, M22]
    let mut z = [y0, p0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let push = |tr: &mut Trajectory, s: f64, z: &[f64; 7]| {
        tr.times.push(s);
        tr.y.push(z[0]);
        tr.p.push(z[1]);
        tr.log_v.push(z[2]);
        if tangent {
            tr.tangent.push([z[3], z[4], z[5], z[6]]);
        }
    };
    push(&mut tr, t, &z);
    for k in 0..intervals {
        let s = t + k as f64 * h;
        let add = |a: &[f64; 7], b: &[f64; 7], w: f64| {
            let mut o = *a;
            for i in 0..7 {
                o[i] += w * b[i];
            }
            o
        };
        let k1 = rhs(s, &z);
        let k2 = rhs(s + 0.5 * h, &add(&z, &k1, 0.5 * h));
        let k3 = rhs(s + 0.5 * h, &add(&z, &k2, 0.5 * h));
        let k4 = rhs(s + h, &add(&z, &k3, h));
        for i in 0..7 {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let s_next = if k + 1 == intervals {
            horizon
        } else {
            t + (k + 1) as f64 * h
        };
        push(&mut tr, s_next, &z);
    }
    tr
}

/// Trapezoid value of (1/2) int (y' - b)^2 with y' the slope of each segment.
pub fn action(path: &Path, spec: &DriftSpec) -> f64 {
    let mut total = 0.0;
    for k in 0..path.times.len() - 1 {
        let (s0, s1) = (path.times[k], path.times[k + 1]);
        let h = s1 - s0;
        let m = (path.y[k + 1] - path.y[k]) / h;
        let r0 = m - spec.b(path.y[k], s0);
        let r1 = m - spec.b(path.y[k + 1], s1);
        total += 0.25 * h * (r0 * r0 + r1 * r1);
    }
    total
}

fn check_time(spec: &DriftSpec, t: f64) -> Result<()> {
    if !(t < spec.horizon_t) {
        return Err(Error::Domain(format!(
            "t = {t} must be below T = {}",
            spec.horizon_t
        )));
    }
    Ok(())
}

/// Solves the control problem by shooting on the initial momentum.
pub fn solve_shooting(spec: &DriftSpec, x: f64, y: f64, t: f64) -> Result<ClassicalSolution> {
    solve_shooting_with(spec, x, y, t, SHOOTING_INTERVALS)
}

pub fn solve_shooting_with(
    spec: &DriftSpec,
    x: f64,
    y: f64,
    t: f64,
    intervals: usize,
) -> Result<ClassicalSolution> {
    check_time(spec, t)?;
    let big_t = spec.horizon_t;
    let f = spec.characteristic(x, t);
    if y >= f - 1e-9 * (1.0 + x.abs()) {
        let tr = integrate(spec, y, t, 0.0, intervals, false);
        let path = Path::new(tr.times, tr.y)?;
        let b = spec.b(y, t);
        let flat = spec.has_second_derivative().then_some(0.0);
        return Ok(ClassicalSolution {
            x,
            y,
            t,
            horizon_t: big_t,
            zero_cost: true,
            path,
            momentum_p: tr.p,
            q_value: 0.0,
            lambda_star: b,
            dq_dy: 0.0,
            dq_dx: 0.0,
            dq_dt: 0.0,
            d2q_dy2: flat,
            d2q_dxdy: flat,
            d2q_dx2: flat,
        });
    }

    let miss = |p0: f64| -> f64 {
        *integrate(spec, y, t, p0, intervals, false)
            .y
            .last()
            .unwrap()
            - x
    };
    let mut p_hi = 0.0;
    let mut p_lo = -((x - y).abs() / (big_t - t)).max(1e-3);
    let mut tries = 0;
    while miss(p_lo) <= 0.0 {
        p_hi = p_lo;
        p_lo *= 2.0;
        tries += 1;
        if tries > 80 || !p_lo.is_finite() {
            return Err(Error::Shooting { p_lo, p_hi: 0.0 });
        }
    }
    // miss(p_lo) > 0 >= miss(p_hi)
    while p_hi - p_lo > BISECTION_WIDTH {
        let mid = 0.5 * (p_lo + p_hi);
        if mid <= p_lo || mid >= p_hi {
            break;
        }
        if miss(mid) > 0.0 {
            p_lo = mid;
        } else {
            p_hi = mid;
        }
    }
    let p0 = 0.5 * (p_lo + p_hi);
    let tr = integrate(spec, y, t, p0, intervals, spec.has_second_derivative());
    let landed = *tr.y.last().unwrap();
    if (landed - x).abs() > ENDPOINT_TOL * (1.0 + x.abs()) {
        return Err(Error::Shooting { p_lo, p_hi });
    }
    let second = if spec.has_second_derivative() {
        Some(second_from_tangent(tr.tangent.last().unwrap())?)
    } else {
        None
    };
    let b = spec.b(y, t);
    let lambda_star = b - p0;
    let mut path_y = tr.y;
    // Pin the endpoint exactly; the residual is below the shooting tolerance.
    *path_y.last_mut().unwrap() = x;
    let path = Path::new(tr.times, path_y)?;
    let q_value = action(&path, spec);
    let p_t = *tr.p.last().unwrap();
    Ok(ClassicalSolution {
        x,
        y,
        t,
        horizon_t: big_t,
        zero_cost: false,
        path,
        momentum_p: tr.p,
        q_value,
        lambda_star,
        dq_dy: p0,
        dq_dx: -p_t,
        dq_dt: 0.5 * (lambda_star * lambda_star - b * b),
        d2q_dy2: second.map(|s| s.d2q_dy2),
        d2q_dxdy: second.map(|s| s.d2q_dxdy),
        d2q_dx2: second.map(|s| s.d2q_dx2),
    })
}

fn second_from_tangent(m: &[f64; 4]) -> Result<SecondDerivatives> {
    let [m11, m12, _m21, m22] = *m;
    // phi(T) for initial data (0, 1) is m12; it must be negative.
    if !(m12 < 0.0) {
        return Err(Error::DegenerateVariation(format!(
            "phi(T) = {m12:.3e} is not negative"
        )));
    }
    Ok(SecondDerivatives {
        d2q_dy2: -m11 / m12,
        d2q_dxdy: 1.0 / m12,
        d2q_dx2: -m22 / m12,
    })
}

/// First derivatives of q at the start point, together with the path-integral
/// forms of dq/dy and dq/dx as a consistency check.
pub fn derivatives_first(sol: &ClassicalSolution, spec: &DriftSpec) -> FirstDerivatives {
    if sol.zero_cost {
        return FirstDerivatives {
            dq_dy: 0.0,
            dq_dx: 0.0,
            dq_dt: 0.0,
            dq_dy_integral: 0.0,
            dq_dx_integral: 0.0,
        };
    }
    let b0 = spec.b(sol.y, sol.t);
    let lam = sol.lambda_star;
    let times = &sol.path.times;
    let tau = sol.horizon_t - sol.t;
    // Trapezoid over the shooting nodes, with lambda(s) - b = -p(s).
    let mut iy = 0.0;
    let mut ix = 0.0;
    let mut log_v = 0.0;
    let mut prev: Option<(f64, f64, f64)> = None;
    for k in 0..times.len() {
        let s = times[k];
        let by = spec.db_dy(sol.path.y[k], s);
        let r = -sol.momentum_p[k];
        let gy = (1.0 + (sol.horizon_t - s) * by) * r;
        let gx = (1.0 - (s - sol.t) * by) * r;
        if let Some((gy0, gx0, by0)) = prev {
            let h = s - times[k - 1];
            iy += 0.5 * h * (gy0 + gy);
            ix += 0.5 * h * (gx0 + gx);
            log_v += 0.5 * h * (by0 + by);
        }
        prev = Some((gy, gx, by));
    }
    FirstDerivatives {
        dq_dy: b0 - lam,
        dq_dx: (lam - b0) * (-log_v).exp(),
        dq_dt: 0.5 * (lam * lam - b0 * b0),
        dq_dy_integral: -iy / tau,
        dq_dx_integral: ix / tau,
    }
}

/// Second derivatives in (x, y) from the fundamental matrix of the
/// linearised Hamiltonian system along the minimiser.
pub fn derivatives_second(sol: &ClassicalSolution, spec: &DriftSpec) -> Result<SecondDerivatives> {
    if !spec.has_second_derivative() {
        return Err(Error::InvalidDrift(
            "second derivative of the drift is not available".into(),
        ));
    }
    if sol.zero_cost {
        return Err(Error::Domain(
            "second derivatives are only defined below the characteristic".into(),
        ));
    }
    let n = sol.path.times.len() - 1;
    let tr = integrate(spec, sol.y, sol.t, sol.initial_momentum(), n, true);
    second_from_tangent(tr.tangent.last().unwrap())
}

/// The variational system along the minimiser with terminal or initial data.
pub fn variational_system(
    sol: &ClassicalSolution,
    spec: &DriftSpec,
    data: VariationData,
) -> Result<VariationalSystem> {
    if !spec.has_second_derivative() {
        return Err(Error::InvalidDrift(
            "second derivative of the drift is not available".into(),
        ));
    }
    let n = sol.path.times.len() - 1;
    let tr = integrate(spec, sol.y, sol.t, sol.initial_momentum(), n, true);
    let [m11, m12, _, _] = *tr.tangent.last().unwrap();
    // det M = 1 (the linearised flow is trace free), so M(T)^-1 (0, 1) = (-m12, m11).
    let (a, c) = match data {
        VariationData::Terminal => (-m12, m11),
        VariationData::Initial => (0.0, 1.0),
    };
    let (phi, psi) = tr
        .tangent
        .iter()
        .map(|m| (m[0] * a + m[1] * c, m[2] * a + m[3] * c))
        .unzip();
    Ok(VariationalSystem {
        data,
        times: tr.times,
        phi,
        psi,
    })
}

/// (y' - b) exp(int_t^s b_y) along the shooting path; constant in exact
/// arithmetic. Returns the largest relative deviation from its initial value.
pub fn momentum_drift(sol: &ClassicalSolution, spec: &DriftSpec) -> f64 {
    let n = sol.path.times.len() - 1;
    let tr = integrate(spec, sol.y, sol.t, sol.initial_momentum(), n, false);
    let values: Vec<f64> =
        tr.p.iter()
            .zip(&tr.log_v)
            .map(|(p, lv)| -p * lv.exp())
            .collect();
    let c0 = values[0];
    if c0 == 0.0 {
        return values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    values
        .iter()
        .fold(0.0f64, |m, v| m.max(((v - c0) / c0).abs()))
}

/// Discrete action at interior values `inner` with fixed endpoints, and its gradient.
fn discrete_action(spec: &DriftSpec, times: &[f64], y: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let n = y.len();
    let h = times[1] - times[0];
    let b: Vec<f64> = (0..n).map(|k| spec.b(y[k], times[k])).collect();
    let mut total = 0.0;
    let mut ra = vec![0.0; n - 1];
    let mut rb = vec![0.0; n - 1];
    for k in 0..n - 1 {
        let m = (y[k + 1] - y[k]) / h;
        ra[k] = m - b[k];
        rb[k] = m - b[k + 1];
        total += 0.25 * h * (ra[k] * ra[k] + rb[k] * rb[k]);
    }
    if let Some(g) = grad {
        for j in 1..n - 1 {
            let by = spec.db_dy(y[j], times[j]);
            g[j - 1] = 0.5 * (ra[j - 1] + rb[j - 1])
                - 0.5 * (ra[j] + rb[j])
                - 0.5 * h * by * (rb[j - 1] + ra[j]);
        }
    }
    total
}

/// Minimises the discrete action over the interior node values of a
/// uniform path with `n_nodes` interior nodes and endpoints y at t and x at T.
///
/// Descent directions are the gradient preconditioned by the inverse of the
/// discrete Laplacian part of the action's Hessian, with Armijo backtracking.
pub fn minimize_direct(
    spec: &DriftSpec,
    x: f64,
    y: f64,
    t: f64,
    n_nodes: usize,
) -> Result<(Path, f64)> {
    check_time(spec, t)?;
    if n_nodes < 16 {
        return Err(Error::Domain(format!(
            "need at least 16 interior nodes, got {n_nodes}"
        )));
    }
    let big_t = spec.horizon_t;
    let n = n_nodes + 2;
    let h = (big_t - t) / (n - 1) as f64;
    let times: Vec<f64> = (0..n)
        .map(|k| if k == n - 1 { big_t } else { t + k as f64 * h })
        .collect();
    let mut path: Vec<f64> = (0..n)
        .map(|k| y + (x - y) * k as f64 / (n - 1) as f64)
        .collect();
    let mut grad = vec![0.0; n_nodes];
    let mut value = discrete_action(spec, &times, &path, Some(&mut grad));
    let (sub, diag, sup) = (
        vec![-1.0 / h; n_nodes],
        vec![2.0 / h; n_nodes],
        vec![-1.0 / h; n_nodes],
    );
    let mut dir = vec![0.0; n_nodes];
    let mut scratch = vec![0.0; n_nodes];
    let mut trial = path.clone();
    for iter in 0..DIRECT_MAX_ITER {
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax <= GRADIENT_TOL {
            return Ok((Path::new(times, path)?, value));
        }
        dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
        thomas(&sub, &diag, &sup, &mut dir, &mut scratch);
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        let mut alpha = 1.0;
        let slack = 4.0 * f64::EPSILON * value.abs();
        let mut accepted = false;
        for _ in 0..60 {
            for j in 0..n_nodes {
                trial[j + 1] = path[j + 1] + alpha * dir[j];
            }
            let v = discrete_action(spec, &times, &trial, None);
            if v <= value + 1e-4 * alpha * slope + slack {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                iterations: iter,
                grad_norm: gmax,
            });
        }
        std::mem::swap(&mut path, &mut trial);
        trial.copy_from_slice(&path);
        value = discrete_action(spec, &times, &path, Some(&mut grad));
    }
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    Err(Error::NonConvergence {
        iterations: DIRECT_MAX_ITER,
        grad_norm: gmax,
    })
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], c: &mut [f64]) {
    let n = diag.len();
    c[0] = sup[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / m;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Writes the sampled path as CSV with columns s, y, p, lambda.
pub fn write_path_csv(sol: &ClassicalSolution, spec: &DriftSpec, out: &FsPath) -> Result<()> {
    let mut w = csv::Writer::from_path(out)
        .map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
    let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", out.display()));
    w.write_record(["s", "y", "p", "lambda"]).map_err(csv_err)?;
    for k in 0..sol.path.times.len() {
        let (s, y, p) = (sol.path.times[k], sol.path.y[k], sol.momentum_p[k]);
        let lam = spec.b(y, s) - p;
        w.serialize((s, y, p, lam)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(out, e))
}

/// Writes the solution (scalars and sampled path) as JSON.
pub fn write_json(sol: &ClassicalSolution, out: &FsPath) -> Result<()> {
    let mut f = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
    serde_json::to_writer_pretty(&mut f, sol)?;
    f.write_all(b"\n").map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::linear_stats;

    #[test]
    fn action_examples() {
        let spec = DriftSpec::zero(1.0).unwrap();
        let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let line: Vec<f64> = times.iter().map(|s| s - 1.0).collect();
        let a = action(&Path::new(times.clone(), line).unwrap(), &spec);
        assert!((a - 0.5).abs() < 1e-14);

        let spec = DriftSpec::linear(0.5, 1.0).unwrap();
        let sol = solve_shooting(&spec, -2.0, 1.0, 0.0).unwrap();
        assert!(sol.zero_cost);
        assert!(action(&sol.path, &spec) < 1e-7);
    }

    #[test]
    fn action_self_convergence() {
        let spec = DriftSpec::log_cosh(0.5, 1.0).unwrap();
        let make = |n: usize| {
            let times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
            let y = times
                .iter()
                .map(|s| -1.0 + s + 0.2 * (3.0 * s).sin())
                .collect();
            action(&Path::new(times, y).unwrap(), &spec)
        };
        assert!((make(200) - make(400)).abs() <= 1e-5);
    }

    #[test]
    fn path_validation() {
        assert!(Path::new(vec![0.0], vec![0.0]).is_err());
        assert!(Path::new(vec![0.0, 0.0], vec![0.0, 1.0]).is_err());
        assert!(Path::new(vec![0.0, 1.0], vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn straight_line_minimiser() {
        let spec = DriftSpec::zero(1.0).unwrap();
        let sol = solve_shooting(&spec, 0.0, -1.0, 0.0).unwrap();
        assert!((sol.lambda_star - 1.0).abs() < 1e-9);
        assert!((sol.q_value - 0.5).abs() < 1e-9);
        assert!((sol.dq_dy + 1.0).abs() < 1e-9);
        assert!((sol.dq_dx - 1.0).abs() < 1e-9);
        assert!((sol.dq_dt - 0.5).abs() < 1e-9);
        assert!((sol.d2q_dy2.unwrap() - 1.0).abs() < 1e-9);
        assert!((sol.d2q_dxdy.unwrap() + 1.0).abs() < 1e-9);
        assert!((sol.d2q_dx2.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn linear_drift_closed_forms() {
        let spec = DriftSpec::linear(0.5, 1.0).unwrap();
        let stats = linear_stats(|_| 0.5, 0.0, 1.0).unwrap();
        let sol = solve_shooting(&spec, 0.0, -1.0, 0.0).unwrap();
        let (l, s2) = (stats.lambda, stats.sigma2);
        let q = l * l / (2.0 * s2);
        assert!((sol.q_value - q).abs() < 1e-6, "{} vs {q}", sol.q_value);
        assert!((sol.q_value - 0.790_988_353_434_663_3).abs() < 1e-6);
        assert!((sol.d2q_dy2.unwrap() - l * l / s2).abs() < 1e-8);
        assert!((sol.d2q_dxdy.unwrap() + l / s2).abs() < 1e-8);
        assert!((sol.d2q_dx2.unwrap() - 1.0 / s2).abs() < 1e-8);
        let (dq_dy, dq_dx) = (-(l * (0.0 - -l)) / s2, (0.0 - -l) / s2);
        assert!((sol.dq_dy - dq_dy).abs() < 1e-9);
        assert!((sol.dq_dx - dq_dx).abs() < 1e-9);
    }

    #[test]
    fn zero_region_above_characteristic() {
        let spec = DriftSpec::log_cosh(0.5, 1.0).unwrap();
        let y = spec.characteristic(0.3, 0.0) + 0.1;
        let sol = solve_shooting(&spec, 0.3, y, 0.0).unwrap();
        assert!(sol.zero_cost);
        assert_eq!(sol.q_value, 0.0);
        assert_eq!(sol.lambda_star, spec.b(y, 0.0));
        let d = derivatives_first(&sol, &spec);
        assert_eq!((d.dq_dy, d.dq_dx, d.dq_dt), (0.0, 0.0, 0.0));
    }

    #[test]
    fn first_derivative_identities() {
        let spec = DriftSpec::log_cosh(0.5, 1.0).unwrap();
        let sol = solve_shooting(&spec, 0.2, -1.3, 0.1).unwrap();
        let d = derivatives_first(&sol, &spec);
        assert!((d.dq_dy - sol.dq_dy).abs() < 1e-9);
        assert!((d.dq_dx - sol.dq_dx).abs() < 1e-6);
        assert!((d.dq_dy_integral - d.dq_dy).abs() < 1e-6, "{:?}", d);
        assert!((d.dq_dx_integral - d.dq_dx).abs() < 1e-6, "{:?}", d);
        assert!(d.dq_dy < 0.0 && d.dq_dx > 0.0);
        // finite differences of the value
        let h = 1e-4;
        let qy = |y: f64| solve_shooting(&spec, 0.2, y, 0.1).unwrap().q_value;
        let fd = (qy(-1.3 + h) - qy(-1.3 - h)) / (2.0 * h);
        assert!((fd - d.dq_dy).abs() < 1e-5, "{fd} vs {}", d.dq_dy);
        let qx = |x: f64| solve_shooting(&spec, x, -1.3, 0.1).unwrap().q_value;
        let fd = (qx(0.2 + h) - qx(0.2 - h)) / (2.0 * h);
        assert!((fd - d.dq_dx).abs() < 1e-5, "{fd} vs {}", d.dq_dx);
        let qt = |t: f64| solve_shooting(&spec, 0.2, -1.3, t).unwrap().q_value;
        let fd = (qt(0.1 + h) - qt(0.1 - h)) / (2.0 * h);
        assert!((fd - d.dq_dt).abs() < 1e-5, "{fd} vs {}", d.dq_dt);
    }

    #[test]
    fn second_derivatives_match_finite_differences() {
        let spec = DriftSpec::log_cosh(0.5, 1.0).unwrap();
        let (x, y) = (0.2, -1.3);
        let sol = solve_shooting(&spec, x, y, 0.0).unwrap();
        let s = derivatives_second(&sol, &spec).unwrap();
        assert!(s.d2q_dy2 > 0.0 && s.d2q_dx2 > 0.0 && s.d2q_dxdy < 0.0);
        let h = 1e-4;
        let p0 = |x: f64, y: f64| solve_shooting(&spec, x, y, 0.0).unwrap().dq_dy;
        let px = |x: f64, y: f64| solve_shooting(&spec, x, y, 0.0).unwrap().dq_dx;
        let fd_yy = (p0(x, y + h) - p0(x, y - h)) / (2.0 * h);
        let fd_xy = (p0(x + h, y) - p0(x - h, y)) / (2.0 * h);
        let fd_xx = (px(x + h, y) - px(x - h, y)) / (2.0 * h);
        assert!((fd_yy - s.d2q_dy2).abs() < 1e-5, "{fd_yy} {}", s.d2q_dy2);
        assert!((fd_xy - s.d2q_dxdy).abs() < 1e-5, "{fd_xy} {}", s.d2q_dxdy);
        assert!((fd_xx - s.d2q_dx2).abs() < 1e-5, "{fd_xx} {}", s.d2q_dx2);
    }

    #[test]
    fn variational_system_positivity() {
        let spec = DriftSpec::log_cosh(0.5, 1.0).unwrap();
        let sol = solve_shooting(&spec, 0.0, -1.0, 0.0).unwrap();
        let sys = variational_system(&sol, &spec, VariationData::Terminal).unwrap();
        let n = sys.phi.len();
        assert!(sys.phi[n - 1].abs() < 1e-10 && (sys.psi[n - 1] - 1.0).abs() < 1e-10);
        for k in 0..n - 1 {
            assert!(sys.phi[k] > 0.0 && sys.psi[k] > 0.0);
        }
        let s = derivatives_second(&sol, &spec).unwrap();
        assert!((sys.psi[0] / sys.phi[0] - s.d2q_dy2).abs() < 1e-9);
        let init = variational_system(&sol, &spec, VariationData::Initial).unwrap();
        assert!((1.0 / init.phi[n - 1] - s.d2q_dxdy).abs() < 1e-12);
    }

    #[test]
    fn conserved_momentum() {
        for spec in [
            DriftSpec::log_cosh(0.5, 1.0).unwrap(),
            DriftSpec::sine(0.3, 1.0).unwrap(),
        ] {
            let sol = solve_shooting(&spec, 0.4, -2.0, 0.0).unwrap();
            assert!(momentum_drift(&sol, &spec) <= 1e-6);
            for k in 0..sol.path.times.len() {
                let s = sol.path.times[k];
                assert!(spec.b(sol.path.y[k], s) - sol.momentum_p[k] > spec.b(sol.path.y[k], s));
            }
        }
    }

    #[test]
    fn direct_minimiser_agrees() {
        let spec = DriftSpec::zero(1.0).unwrap();
        let (path, v) = minimize_direct(&spec, 0.0, -1.0, 0.0, DIRECT_NODES).unwrap();
        assert!((v - 0.5).abs() < 1e-6);
        assert!((path.y[100] - (-1.0 + path.times[100])).abs() < 1e-9);

        let spec = DriftSpec::log_cosh(0.5, 1.0).unwrap();
        let shoot = solve_shooting(&spec, 0.25, -1.5, 0.0).unwrap();
        let (_, v) = minimize_direct(&spec, 0.25, -1.5, 0.0, DIRECT_NODES).unwrap();
        assert!(
            (v - shoot.q_value).abs() <= 1e-4,
            "{v} vs {}",
            shoot.q_value
        );
        let (_, v2) = minimize_direct(&spec, 0.25, -1.5, 0.0, 2 * DIRECT_NODES).unwrap();
        assert!((v2 - v).abs() <= 1e-4);
        assert!(minimize_direct(&spec, 0.0, -1.0, 0.0, 8).is_err());
    }

    #[test]
    fn shooting_exports() {
        let spec = DriftSpec::log_cosh(0.5, 1.0).unwrap();
        let sol = solve_shooting(&spec, 0.0, -1.0, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_path_csv(&sol, &spec, &dir.path().join("p.csv")).unwrap();
        write_json(&sol, &dir.path().join("p.json")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
        assert!(text.starts_with("s,y,p,lambda\n"));
        assert_eq!(text.lines().count(), SHOOTING_INTERVALS + 2);
    }
}
