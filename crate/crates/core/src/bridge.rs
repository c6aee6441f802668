//! Law of Y(T - delta) for the diffusion started at y and pinned at
//! Y(T) = 0.
//!
//! For linear drifts the bridge is Gaussian with closed-form moments. In
//! general the conditional density is G(y, xi, 0, T - delta) G(xi, 0, T - delta, T)
//! normalised over xi; the first factor comes from a forward Fokker-Planck
//! solve out of y and the second from one backward solve with a point mass
//! at 0, and both are integrated on the grid nodes by the trapezoid rule.

use std::io::Write;
use std::path::Path as FsPath;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::drift::{linear_stats, DriftSpec};
use crate::error::{Error, Result};
use crate::normal;
use crate::pde::{green_column_all_levels, transition_density, Grid1D};
use crate::stats::{linear_fit, LineFit};

/// Normalisations below this are treated as lost to underflow.
pub const NORMALIZATION_FLOOR: f64 = 1e-280;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BridgeQuery {
    pub y_start: f64,
    pub horizon_t: f64,
    /// Look-back time: the state is observed at T - delta.
    pub delta: f64,
    pub epsilon: f64,
}

impl BridgeQuery {
    pub fn new(y_start: f64, horizon_t: f64, delta: f64, epsilon: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= horizon_t) {
            return Err(Error::Domain(format!("delta = {delta} must lie in (0, T]")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Domain(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(BridgeQuery {
            y_start,
            horizon_t,
            delta,
            epsilon,
        })
    }

    pub fn time(&self) -> f64 {
        self.horizon_t - self.delta
    }

    /// The event boundary c delta y / T.
    pub fn event_threshold(&self, c: f64) -> f64 {
        c * self.delta * self.y_start / self.horizon_t
    }

    /// delta y^2 / (eps T^2), the scale of the tail exponents.
    pub fn tail_scale(&self) -> f64 {
        self.delta * self.y_start * self.y_start / (self.epsilon * self.horizon_t * self.horizon_t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BridgeMethod {
    ExactLinear,
    GreenQuadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Below,
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BridgeEstimate {
    pub query: BridgeQuery,
    pub mean: f64,
    pub variance: f64,
    /// c in the event boundary c delta y / T.
    pub threshold_fraction: f64,
    pub prob_below: f64,
    pub prob_above: f64,
    pub method: BridgeMethod,
}

impl BridgeEstimate {
    pub fn prob(&self, side: Side) -> f64 {
        match side {
            Side::Below => self.prob_below,
            Side::Above => self.prob_above,
        }
    }
}

/// Exact moments for b = A(s) y, with the realised bracketing ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearBridge {
    pub estimate: BridgeEstimate,
    /// mean / (delta y / T)
    pub mean_ratio: f64,
    /// variance / (eps delta)
    pub variance_ratio: f64,
}

/// Gaussian bridge moments for b = A(s) y:
/// mean = Lambda(T-delta) y I / sigma^2(T), variance = eps sigma^2(T-delta) I / sigma^2(T),
/// with I = int_{T-delta}^T exp(2 int_s^T A).
pub fn linear_bridge_moments<F>(a_of_s: F, query: &BridgeQuery, c: f64) -> Result<LinearBridge>
where
    F: Fn(f64) -> f64 + Copy,
{
    let big_t = query.horizon_t;
    let s = query.time();
    let (mean, variance) = if s <= 0.0 {
        (query.y_start, 0.0)
    } else {
        let first = linear_stats(a_of_s, 0.0, s)?;
        let last = linear_stats(a_of_s, s, big_t)?;
        let full = linear_stats(a_of_s, 0.0, big_t)?;
        (
            first.lambda * query.y_start * last.sigma2 / full.sigma2,
            query.epsilon * first.sigma2 * last.sigma2 / full.sigma2,
        )
    };
    let thr = query.event_threshold(c);
    let (prob_below, prob_above) = if variance > 0.0 {
        let z = (thr - mean) / variance.sqrt();
        (normal::cdf(z), normal::cdf(-z))
    } else if mean < thr {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let scale = query.delta * query.y_start / big_t;
    Ok(LinearBridge {
        estimate: BridgeEstimate {
            query: *query,
            mean,
            variance,
            threshold_fraction: c,
            prob_below,
            prob_above,
            method: BridgeMethod::ExactLinear,
        },
        mean_ratio: mean / scale,
        variance_ratio: variance / (query.epsilon * query.delta),
    })
}

/// Grid and endpoint factor G(xi, 0, s, T) shared by all bridge queries of
/// one (drift, eps, T).
#[derive(Debug, Clone)]
pub struct BridgeResources {
    pub grid: Grid1D,
    pub epsilon: f64,
    /// `endpoint[[k, i]]` = G(xi_i, 0, t_k, T).
    pub endpoint: Array2<f64>,
}

impl BridgeResources {
    /// Builds a window [y_lowest - 4, 4] with spacing close to `h_y` and
    /// `n_t` time levels on [0, T].
    pub fn new(
        spec: &DriftSpec,
        epsilon: f64,
        y_lowest: f64,
        h_y: f64,
        n_t: usize,
    ) -> Result<Self> {
        let big_t = spec.horizon_t;
        let pad = (8.0 * (epsilon * big_t).sqrt()).max(4.0);
        let (lo, hi) = (y_lowest.min(0.0) - pad, pad);
        let n_y = ((hi - lo) / h_y).round() as usize + 1;
        let grid = Grid1D::new(lo, hi, n_y, 0.0, big_t, n_t)?;
        let endpoint = green_column_all_levels(spec, grid, epsilon, 0.0)?;
        Ok(BridgeResources {
            grid,
            epsilon,
            endpoint,
        })
    }

    fn level(&self, time: f64) -> Result<usize> {
        let f = (time - self.grid.t_start) / self.grid.h_t();
        let k = f.round();
        if (f - k).abs() > 1e-6 || k < 0.0 || k as usize >= self.grid.n_t {
            return Err(Error::InvalidGrid(format!(
                "time {time} is not a level of the bridge grid"
            )));
        }
        Ok(k as usize)
    }
}

fn trapezoid(h: f64, f: &[f64]) -> f64 {
    let n = f.len();
    h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[n - 1]))
}

/// Integral of the piecewise-linear interpolant of `f` over [xs[0], c].
fn integral_below(grid: &Grid1D, f: &[f64], c: f64) -> f64 {
    let h = grid.h_y();
    if c <= grid.y_min {
        return 0.0;
    }
    if c >= grid.y_max {
        return trapezoid(h, f);
    }
    let pos = (c - grid.y_min) / h;
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    let mut total = if i >= 1 { trapezoid(h, &f[..=i]) } else { 0.0 };
    let fc = f[i] + w * (f[i + 1] - f[i]);
    total += 0.5 * w * h * (f[i] + fc);
    total
}

fn estimate_from_density(
    grid: &Grid1D,
    query: &BridgeQuery,
    f: &[f64],
    c: f64,
) -> Result<BridgeEstimate> {
    let h = grid.h_y();
    let total = trapezoid(h, f);
    if !(total > NORMALIZATION_FLOOR) {
        return Err(Error::IllConditionedBridge(total));
    }
    let ys = grid.ys();
    let m1: Vec<f64> = f.iter().zip(&ys).map(|(v, y)| v * y).collect();
    let mean = trapezoid(h, &m1) / total;
    let m2: Vec<f64> = f
        .iter()
        .zip(&ys)
        .map(|(v, y)| v * (y - mean) * (y - mean))
        .collect();
    let variance = trapezoid(h, &m2) / total;
    let below = integral_below(grid, f, query.event_threshold(c)) / total;
    Ok(BridgeEstimate {
        query: *query,
        mean,
        variance,
        threshold_fraction: c,
        prob_below: below.clamp(0.0, 1.0),
        prob_above: ((total - below * total) / total).clamp(0.0, 1.0),
        method: BridgeMethod::GreenQuadrature,
    })
}

/// Unnormalised conditional density at level `k` for a forward field out of y.
fn product_row(first: ArrayView1<f64>, second: ArrayView1<f64>) -> Vec<f64> {
    first
        .iter()
        .zip(second)
        .map(|(a, b)| (a * b).max(0.0))
        .collect()
}

/// Conditional probabilities below and above c delta y / T (and the
/// conditional moments) by Green's-function quadrature.
pub fn conditional_prob_green(
    spec: &DriftSpec,
    query: &BridgeQuery,
    c: f64,
    res: &BridgeResources,
) -> Result<BridgeEstimate> {
    conditional_table(
        spec,
        query.y_start,
        &[query.delta],
        &[c],
        query.epsilon,
        res,
    )
    .map(|v| v[0])
}

/// All (delta, c) combinations for one start point from a single forward solve.
pub fn conditional_table(
    spec: &DriftSpec,
    y_start: f64,
    deltas: &[f64],
    fractions: &[f64],
    epsilon: f64,
    res: &BridgeResources,
) -> Result<Vec<BridgeEstimate>> {
    if !spec.vanishes_at_origin {
        return Err(Error::InvalidDrift(
            "bridge quadrature needs b(0, t) = 0".into(),
        ));
    }
    if (res.epsilon - epsilon).abs() > 0.0 || (spec.horizon_t - res.grid.t_end).abs() > 1e-12 {
        return Err(Error::Domain(
            "bridge resources were built for another (eps, T)".into(),
        ));
    }
    let forward = transition_density(spec, res.grid, epsilon, y_start)?;
    let mut out = Vec::with_capacity(deltas.len() * fractions.len());
    for &delta in deltas {
        let query = BridgeQuery::new(y_start, spec.horizon_t, delta, epsilon)?;
        let k = res.level(query.time())?;
        let f = product_row(forward.p.row(k), res.endpoint.row(k));
        for &c in fractions {
            out.push(estimate_from_density(&res.grid, &query, &f, c)?);
        }
    }
    Ok(out)
}

/// The unnormalised conditional density at T - delta together with
/// G(y, 0, 0, T), which it integrates to by the Chapman-Kolmogorov identity.
pub fn normalization_gap(
    spec: &DriftSpec,
    query: &BridgeQuery,
    res: &BridgeResources,
) -> Result<(f64, f64)> {
    let forward = transition_density(spec, res.grid, query.epsilon, query.y_start)?;
    let k = res.level(query.time())?;
    let f = product_row(forward.p.row(k), res.endpoint.row(k));
    let total = trapezoid(res.grid.h_y(), &f);
    let direct = res.endpoint[[0, res.grid.nearest_node(query.y_start)]];
    Ok((total, direct))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationConfig {
    /// c for the event Y(T - delta) < c delta y / T
    pub c_below: f64,
    /// c for the event Y(T - delta) > c delta y / T
    pub c_above: f64,
    /// Largest admissible A T.
    pub at_gate: f64,
    pub h_y: f64,
    pub n_t: usize,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig {
            c_below: 4.0,
            c_above: 0.25,
            at_gate: 0.5,
            h_y: 0.002,
            n_t: 2049,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationCell {
    pub y: f64,
    pub delta: f64,
    /// delta y^2 / (eps T^2)
    pub scale: f64,
    pub prob_below: f64,
    pub prob_above: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    pub fit: LineFit,
    /// Minus the fitted slope.
    pub gamma_hat: f64,
    /// Largest gamma with p <= exp(-gamma scale) on every cell.
    pub gamma_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub epsilon: f64,
    pub horizon_t: f64,
    pub config: ConcentrationConfig,
    pub method: BridgeMethod,
    pub cells: Vec<ConcentrationCell>,
    pub below: TailFit,
    pub above: TailFit,
    /// Probabilities fall as |y| grows, for every delta and side.
    pub monotone_in_y: bool,
    pub pass: bool,
}

fn admissible(
    eps: f64,
    big_t: f64,
    y_sweep: &[f64],
    delta_sweep: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let mut cells = Vec::new();
    for &delta in delta_sweep {
        if !(delta > 0.0 && delta <= 0.5 * big_t) {
            return Err(Error::Domain(format!(
                "delta = {delta} must lie in (0, T/2]"
            )));
        }
        for &y in y_sweep {
            if y < -big_t * (eps / delta).sqrt() {
                cells.push((y, delta));
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Domain(
            "no (y, delta) in the sweep satisfies y < -T sqrt(eps/delta)".into(),
        ));
    }
    Ok(cells)
}

fn tail_fit(cells: &[ConcentrationCell], side: Side) -> Result<TailFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut gamma_bound = f64::INFINITY;
    for c in cells {
        let p = match side {
            Side::Below => c.prob_below,
            Side::Above => c.prob_above,
        };
        if !(p > 0.0) {
            return Err(Error::Domain(format!(
                "zero tail probability at y = {}, delta = {}",
                c.y, c.delta
            )));
        }
        xs.push(c.scale);
        ys.push(p.ln());
        gamma_bound = gamma_bound.min(-p.ln() / c.scale);
    }
    let fit = linear_fit(&xs, &ys)
        .ok_or_else(|| Error::Domain("tail fit needs two distinct scales".into()))?;
    Ok(TailFit {
        fit,
        gamma_hat: -fit.slope,
        gamma_bound,
    })
}

fn assemble(
    eps: f64,
    big_t: f64,
    config: ConcentrationConfig,
    method: BridgeMethod,
    cells: Vec<ConcentrationCell>,
) -> Result<ConcentrationReport> {
    let below = tail_fit(&cells, Side::Below)?;
    let above = tail_fit(&cells, Side::Above)?;
    let mut monotone_in_y = true;
    for a in &cells {
        for b in &cells {
            if a.delta == b.delta
                && b.y < a.y
                && (b.prob_below > a.prob_below || b.prob_above > a.prob_above)
            {
                monotone_in_y = false;
            }
        }
    }
    let pass = below.fit.slope < 0.0
        && above.fit.slope < 0.0
        && below.fit.r_squared >= 0.9
        && above.fit.r_squared >= 0.9;
    Ok(ConcentrationReport {
        epsilon: eps,
        horizon_t: big_t,
        config,
        method,
        cells,
        below,
        above,
        monotone_in_y,
        pass,
    })
}

/// Tail probabilities of the pinned diffusion over a (y, delta) sweep by
/// Green's-function quadrature, with least-squares tail exponents.
pub fn concentration_check(
    spec: &DriftSpec,
    epsilon: f64,
    y_sweep: &[f64],
    delta_sweep: &[f64],
    config: ConcentrationConfig,
) -> Result<ConcentrationReport> {
    let big_t = spec.horizon_t;
    if !spec.vanishes_at_origin {
        return Err(Error::InvalidDrift(
            "concentration check needs b(0, t) = 0".into(),
        ));
    }
    if spec.lipschitz_a * big_t > config.at_gate {
        return Err(Error::Domain(format!(
            "A T = {} exceeds the gate {}",
            spec.lipschitz_a * big_t,
            config.at_gate
        )));
    }
    let cells = admissible(epsilon, big_t, y_sweep, delta_sweep)?;
    let lowest = cells.iter().map(|c| c.0).fold(0.0, f64::min);
    let res = BridgeResources::new(spec, epsilon, lowest, config.h_y, config.n_t)?;
    let mut ys: Vec<f64> = cells.iter().map(|c| c.0).collect();
    ys.dedup();
    let mut out = Vec::new();
    for &y in &ys {
        let deltas: Vec<f64> = cells.iter().filter(|c| c.0 == y).map(|c| c.1).collect();
        let table = conditional_table(
            spec,
            y,
            &deltas,
            &[config.c_below, config.c_above],
            epsilon,
            &res,
        )?;
        for (i, &delta) in deltas.iter().enumerate() {
            let (lo, hi) = (table[2 * i], table[2 * i + 1]);
            out.push(ConcentrationCell {
                y,
                delta,
                scale: lo.query.tail_scale(),
                prob_below: lo.prob_below,
                prob_above: hi.prob_above,
            });
        }
    }
    assemble(epsilon, big_t, config, BridgeMethod::GreenQuadrature, out)
}

/// The same sweep with closed-form Gaussian probabilities for b = A(s) y.
pub fn concentration_exact<F>(
    a_of_s: F,
    epsilon: f64,
    horizon_t: f64,
    y_sweep: &[f64],
    delta_sweep: &[f64],
    config: ConcentrationConfig,
) -> Result<ConcentrationReport>
where
    F: Fn(f64) -> f64 + Copy,
{
    let cells = admissible(epsilon, horizon_t, y_sweep, delta_sweep)?;
    let mut out = Vec::with_capacity(cells.len());
    for (y, delta) in cells {
        let q = BridgeQuery::new(y, horizon_t, delta, epsilon)?;
        let lo = linear_bridge_moments(a_of_s, &q, config.c_below)?.estimate;
        let hi = linear_bridge_moments(a_of_s, &q, config.c_above)?.estimate;
        out.push(ConcentrationCell {
            y,
            delta,
            scale: q.tail_scale(),
            prob_below: lo.prob_below,
            prob_above: hi.prob_above,
        });
    }
    assemble(epsilon, horizon_t, config, BridgeMethod::ExactLinear, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub y: f64,
    pub delta: f64,
    pub event: Side,
    pub probability: f64,
    /// exp(-gamma_bound delta y^2 / (eps T^2))
    pub bound_rhs: f64,
}

impl ConcentrationReport {
    pub fn rows(&self) -> Vec<TailRow> {
        let mut rows = Vec::with_capacity(2 * self.cells.len());
        for c in &self.cells {
            rows.push(TailRow {
                y: c.y,
                delta: c.delta,
                event: Side::Below,
                probability: c.prob_below,
                bound_rhs: (-self.below.gamma_bound * c.scale).exp(),
            });
            rows.push(TailRow {
                y: c.y,
                delta: c.delta,
                event: Side::Above,
                probability: c.prob_above,
                bound_rhs: (-self.above.gamma_bound * c.scale).exp(),
            });
        }
        rows
    }

    /// CSV with columns y, delta, event, probability, bound_rhs.
    pub fn write_csv(&self, out: &FsPath) -> Result<()> {
        let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", out.display()));
        let mut w = csv::Writer::from_path(out).map_err(csv_err)?;
        for row in self.rows() {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(out, e))
    }

    pub fn write_json(&self, out: &FsPath) -> Result<()> {
        let mut f = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n").map_err(|e| Error::io(out, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::solve_shooting;

    #[test]
    fn query_validation() {
        assert!(BridgeQuery::new(-1.0, 1.0, 0.0, 0.1).is_err());
        assert!(BridgeQuery::new(-1.0, 1.0, 1.5, 0.1).is_err());
        assert!(BridgeQuery::new(-1.0, 1.0, 0.5, 0.0).is_err());
        let q = BridgeQuery::new(-1.0, 1.0, 0.25, 0.1).unwrap();
        assert_eq!(q.event_threshold(4.0), -1.0);
        assert!((q.tail_scale() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn brownian_bridge_moments() {
        let q = BridgeQuery::new(-1.0, 1.0, 0.25, 0.1).unwrap();
        let b = linear_bridge_moments(|_| 0.0, &q, 4.0).unwrap();
        assert!((b.estimate.mean + 0.25).abs() < 1e-12);
        assert!((b.estimate.variance - 0.01875).abs() < 1e-12);
        assert!((b.mean_ratio - 1.0).abs() < 1e-12);
        let sd = 0.01875f64.sqrt();
        assert!((b.estimate.prob_below - normal::cdf(-0.75 / sd)).abs() < 1e-15);
    }

    #[test]
    fn linear_bridge_mean_is_the_minimiser() {
        let spec = DriftSpec::linear(0.5, 1.0).unwrap();
        let sol = solve_shooting(&spec, 0.0, -1.0, 0.0).unwrap();
        for &delta in &[0.5, 0.25, 0.125] {
            let q = BridgeQuery::new(-1.0, 1.0, delta, 0.1).unwrap();
            let b = linear_bridge_moments(|_| 0.5, &q, 4.0).unwrap();
            let k = ((1.0 - delta) * 2000.0f64).round() as usize;
            assert!(
                (sol.path.y[k] - b.estimate.mean).abs() < 1e-8,
                "{} vs {}",
                sol.path.y[k],
                b.estimate.mean
            );
        }
    }

    #[test]
    fn green_quadrature_matches_brownian_bridge() {
        let spec = DriftSpec::zero(1.0).unwrap();
        let res = BridgeResources::new(&spec, 0.1, -1.0, 0.004, 1025).unwrap();
        let q = BridgeQuery::new(-1.0, 1.0, 0.25, 0.1).unwrap();
        for c in [4.0, 0.25, 1.0] {
            let g = conditional_prob_green(&spec, &q, c, &res).unwrap();
            let e = linear_bridge_moments(|_| 0.0, &q, c).unwrap().estimate;
            assert!((g.prob_below - e.prob_below).abs() < 1e-3);
            assert!((g.prob_below + g.prob_above - 1.0).abs() < 1e-12);
            assert!(
                (g.mean - e.mean).abs() / e.mean.abs() < 1e-3,
                "{} {}",
                g.mean,
                e.mean
            );
            assert!(
                (g.variance - e.variance).abs() / e.variance < 1e-3,
                "{} {}",
                g.variance,
                e.variance
            );
        }
        let (total, direct) = normalization_gap(&spec, &q, &res).unwrap();
        assert!((total / direct - 1.0).abs() < 1e-3, "{total} {direct}");
    }

    #[test]
    fn concentration_on_brownian_bridge() {
        let ys: Vec<f64> = (0..8).map(|i| -0.7 - 0.1 * i as f64).collect();
        let exact = concentration_exact(
            |_| 0.0,
            0.1,
            1.0,
            &ys,
            &[0.25],
            ConcentrationConfig::default(),
        )
        .unwrap();
        assert!(exact.pass && exact.monotone_in_y);
        assert!(exact.below.gamma_hat > 0.0 && exact.above.gamma_hat > 0.0);
        assert!(concentration_exact(
            |_| 0.0,
            0.1,
            1.0,
            &[-0.1],
            &[0.25],
            ConcentrationConfig::default()
        )
        .is_err());
        assert!(concentration_exact(
            |_| 0.0,
            0.1,
            1.0,
            &ys,
            &[0.75],
            ConcentrationConfig::default()
        )
        .is_err());
    }
}
