//! Backward Kolmogorov solver for u_eps, the Hopf-Cole cost q_eps and the
//! fundamental solution G_eps.
//!
//! The equation is marched backward in time,
//!
//! ```text
//! u_t + b(y,t) u_y + (eps/2) u_yy = 0,   t < T,
//! ```
//!
//! with Crank-Nicolson diffusion and an explicit, van Leer limited upwind
//! drift term corrected by a Heun stage. The first two steps are replaced by
//! four backward-Euler half steps (Rannacher start-up) so that the step or
//! delta terminal data does not excite undamped Crank-Nicolson modes.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::drift::{DriftSpec, LinearDriftStats};
use crate::error::{Error, Result};
use crate::normal;

/// Nodes where u falls below this value are flagged rather than clamped.
pub const U_FLOOR: f64 = 1e-300;

const RANNACHER_STEPS: usize = 2;

/// Uniform space-time grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub y_min: f64,
    pub y_max: f64,
    pub n_y: usize,
    pub t_start: f64,
    /// Terminal time T of the solve.
    pub t_end: f64,
    pub n_t: usize,
}

impl Grid1D {
    pub fn new(
        y_min: f64,
        y_max: f64,
        n_y: usize,
        t_start: f64,
        t_end: f64,
        n_t: usize,
    ) -> Result<Self> {
        if !(y_min < y_max) || n_y < 3 || !(t_start < t_end) || n_t < 2 {
            return Err(Error::InvalidGrid(format!(
                "need y_min < y_max, n_y >= 3, t_start < T, n_t >= 2; got [{y_min}, {y_max}] x {n_y}, [{t_start}, {t_end}] x {n_t}"
            )));
        }
        Ok(Grid1D {
            y_min,
            y_max,
            n_y,
            t_start,
            t_end,
            n_t,
        })
    }

    /// Half-width of the spatial window around a threshold `x`:
    /// max(8 sqrt(eps (T-t)), 4) + (e^{A (T-t)} - 1) |x|.
    pub fn covering_half_width(
        spec: &DriftSpec,
        x: f64,
        eps: f64,
        t_start: f64,
        t_end: f64,
    ) -> f64 {
        let tau = t_end - t_start;
        (8.0 * (eps * tau).sqrt()).max(4.0) + ((spec.lipschitz_a * tau).exp() - 1.0) * x.abs()
    }

    /// Grid centred on the threshold `x`, wide enough by the domain rule.
    pub fn covering(
        spec: &DriftSpec,
        x: f64,
        eps: f64,
        t_start: f64,
        t_end: f64,
        n_y: usize,
        n_t: usize,
    ) -> Result<Self> {
        let half = Self::covering_half_width(spec, x, eps, t_start, t_end);
        Self::new(x - half, x + half, n_y, t_start, t_end, n_t)
    }

    pub fn h_y(&self) -> f64 {
        (self.y_max - self.y_min) / (self.n_y - 1) as f64
    }

    pub fn h_t(&self) -> f64 {
        (self.t_end - self.t_start) / (self.n_t - 1) as f64
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y_min + i as f64 * self.h_y()
    }

    pub fn t(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.h_t()
    }

    pub fn ys(&self) -> Vec<f64> {
        (0..self.n_y).map(|i| self.y(i)).collect()
    }

    pub fn nearest_node(&self, y: f64) -> usize {
        let i = ((y - self.y_min) / self.h_y()).round();
        i.clamp(0.0, (self.n_y - 1) as f64) as usize
    }

    pub fn nearest_level(&self, t: f64) -> usize {
        let k = ((t - self.t_start) / self.h_t()).round();
        k.clamp(0.0, (self.n_t - 1) as f64) as usize
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.y_min && y <= self.y_max
    }
}

/// Stability figures of a solve. Large diffusion numbers are allowed
/// (the diffusion is implicit) but recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// eps h_t / h_y^2
    pub diffusion_number: f64,
    /// max |b| h_t / h_y
    pub advective_cfl: f64,
}

/// u_eps(x, y, t) on a grid for one threshold x.
#[derive(Debug, Clone)]
pub struct HeatField {
    pub grid: Grid1D,
    pub epsilon: f64,
    /// Threshold after snapping to the nearest node.
    pub x_threshold: f64,
    pub threshold_node: usize,
    /// `u[[k, i]]`: level k (time t_start + k h_t), node i.
    pub u: Array2<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// q_eps = -eps ln u_eps and its derivatives.
#[derive(Debug, Clone)]
pub struct CostField {
    pub grid: Grid1D,
    pub epsilon: f64,
    pub x_threshold: f64,
    /// NaN where u was below the floor.
    pub q: Array2<f64>,
    pub dq_dy: Array2<f64>,
    /// Available when the field comes from a threshold bundle.
    pub dq_dx: Option<Array2<f64>>,
    /// Number of nodes where u < `U_FLOOR`.
    pub flagged: usize,
}

/// G_eps(y, x', t, T) sampled on (y-node, x'-node) pairs.
#[derive(Debug, Clone)]
pub struct GreenFunction {
    pub grid: Grid1D,
    pub epsilon: f64,
    pub x_nodes: Vec<usize>,
    pub x: Vec<f64>,
    /// `g[[i, j]]` = G(y_i, x_j, t_start, T).
    pub g: Array2<f64>,
}

/// Transition density of the forward diffusion started from a point.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub grid: Grid1D,
    pub epsilon: f64,
    pub y0: f64,
    /// `p[[k, i]]` = G(y0, y_i, t_start, t_k).
    pub p: Array2<f64>,
}

/// Solves for thresholds x_c + j dx, j = -(n-1)/2..(n-1)/2.
#[derive(Debug, Clone)]
pub struct ThresholdBundle {
    pub dx: f64,
    /// dx in grid nodes.
    pub stride: usize,
    pub thresholds: Vec<f64>,
    pub fields: Vec<HeatField>,
    /// Cost field at the centre threshold with `dq_dx` filled in.
    pub center: CostField,
}

/// Thomas algorithm for a tridiagonal system; `sub[0]` and `sup[n-1]` unused.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    scratch[0] = sup[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * scratch[i - 1];
        scratch[i] = sup[i] / m;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Harmonic-mean (van Leer) limited slope.
#[inline]
fn van_leer(a: f64, b: f64) -> f64 {
    let p = a * b;
    if p > 0.0 {
        2.0 * p / (a + b)
    } else {
        0.0
    }
}

/// Which direction a conservation/transport operator acts in.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Transport {
    /// u_tau = b u_y (backward Kolmogorov in reversed time)
    Backward,
    /// p_s = -(b p)_y (forward Fokker-Planck)
    Forward,
}

struct Marcher<'a> {
    spec: &'a DriftSpec,
    grid: Grid1D,
    eps: f64,
    mode: Transport,
    ys: Vec<f64>,
    faces: Vec<f64>,
}

impl<'a> Marcher<'a> {
    fn new(spec: &'a DriftSpec, grid: Grid1D, eps: f64, mode: Transport) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Domain(format!(
                "epsilon must be positive, got {eps}"
            )));
        }
        let h = grid.h_y();
        let ys = grid.ys();
        let faces = (0..grid.n_y - 1)
            .map(|i| grid.y_min + (i as f64 + 0.5) * h)
            .collect();
        Ok(Marcher {
            spec,
            grid,
            eps,
            mode,
            ys,
            faces,
        })
    }

    fn diagnostics(&self) -> Result<SolveDiagnostics> {
        let (h, dt) = (self.grid.h_y(), self.grid.h_t());
        let mut bmax: f64 = 0.0;
        for k in [0, self.grid.n_t / 2, self.grid.n_t - 1] {
            let t = self.grid.t(k);
            for &y in &self.ys {
                bmax = bmax.max(self.spec.b(y, t).abs());
            }
        }
        let diag = SolveDiagnostics {
            diffusion_number: self.eps * dt / (h * h),
            advective_cfl: bmax * dt / h,
        };
        if diag.advective_cfl > 1.0 {
            return Err(Error::InvalidGrid(format!(
                "advective CFL {:.3} exceeds 1; refine n_t",
                diag.advective_cfl
            )));
        }
        Ok(diag)
    }

    /// Explicit transport term evaluated at time `t` into `out` (interior only).
    fn transport(&self, u: &[f64], t: f64, out: &mut [f64]) {
        let n = u.len();
        let h = self.grid.h_y();
        out[0] = 0.0;
        out[n - 1] = 0.0;
        match self.mode {
            Transport::Backward => {
                // Left/right reconstructions of the face value between j and j+1.
                let from_right = |j: usize| -> f64 {
                    // cell j+1 reconstructed towards its left face
                    let c = j + 1;
                    if c + 1 < n {
                        u[c] - 0.5 * van_leer(u[c] - u[c - 1], u[c + 1] - u[c])
                    } else {
                        u[c]
                    }
                };
                let from_left = |j: usize| -> f64 {
                    if j >= 1 {
                        u[j] + 0.5 * van_leer(u[j] - u[j - 1], u[j + 1] - u[j])
                    } else {
                        u[j]
                    }
                };
                for i in 1..n - 1 {
                    let b = self.spec.b(self.ys[i], t);
                    // u_tau = b u_y moves information against b.
                    let (fp, fm) = if b >= 0.0 {
                        (from_right(i), from_right(i - 1))
                    } else {
                        (from_left(i), from_left(i - 1))
                    };
                    out[i] = b * (fp - fm) / h;
                }
            }
            Transport::Forward => {
                let mut prev_flux = 0.0;
                for j in 0..n - 1 {
                    let b = self.spec.b(self.faces[j], t);
                    let face = if b >= 0.0 {
                        if j >= 1 {
                            u[j] + 0.5 * van_leer(u[j] - u[j - 1], u[j + 1] - u[j])
                        } else {
                            u[j]
                        }
                    } else if j + 2 < n {
                        u[j + 1] - 0.5 * van_leer(u[j + 1] - u[j], u[j + 2] - u[j + 1])
                    } else {
                        u[j + 1]
                    };
                    let flux = b * face;
                    if j >= 1 {
                        out[j] = -(flux - prev_flux) / h;
                    }
                    prev_flux = flux;
                }
            }
        }
    }

    /// One theta-step of length `dt` from time `t_old` to `t_new`.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        u: &mut Vec<f64>,
        dt: f64,
        theta: f64,
        t_old: f64,
        t_new: f64,
        bc_new: (f64, f64),
        work: &mut Work,
    ) {
        let n = u.len();
        let r = 0.5 * self.eps / (self.grid.h_y() * self.grid.h_y());
        let (a_im, a_ex) = (theta * dt * r, (1.0 - theta) * dt * r);
        for i in 0..n {
            if i == 0 || i == n - 1 {
                work.sub[i] = 0.0;
                work.sup[i] = 0.0;
                work.diag[i] = 1.0;
            } else {
                work.sub[i] = -a_im;
                work.sup[i] = -a_im;
                work.diag[i] = 1.0 + 2.0 * a_im;
            }
        }
        // Explicit part of the diffusion.
        work.base[0] = bc_new.0;
        work.base[n - 1] = bc_new.1;
        for i in 1..n - 1 {
            work.base[i] = u[i] + a_ex * (u[i + 1] - 2.0 * u[i] + u[i - 1]);
        }
        self.transport(u, t_old, &mut work.adv_old);
        // Predictor.
        for i in 0..n {
            work.rhs[i] = work.base[i] + dt * work.adv_old[i];
        }
        work.rhs[0] = bc_new.0;
        work.rhs[n - 1] = bc_new.1;
        solve_tridiagonal(
            &work.sub,
            &work.diag,
            &work.sup,
            &mut work.rhs,
            &mut work.scratch,
        );
        std::mem::swap(&mut work.rhs, &mut work.pred);
        self.transport(&work.pred, t_new, &mut work.adv_new);
        // Heun corrector.
        for i in 0..n {
            work.rhs[i] = work.base[i] + 0.5 * dt * (work.adv_old[i] + work.adv_new[i]);
        }
        work.rhs[0] = bc_new.0;
        work.rhs[n - 1] = bc_new.1;
        solve_tridiagonal(
            &work.sub,
            &work.diag,
            &work.sup,
            &mut work.rhs,
            &mut work.scratch,
        );
        std::mem::swap(u, &mut work.rhs);
    }

    /// Marches from `start` at level `from` towards level `to` (either
    /// direction), returning every level visited when `keep_all`.
    fn march<B>(
        &self,
        start: Vec<f64>,
        from: usize,
        to: usize,
        bc: B,
        keep_all: bool,
    ) -> Array2<f64>
    where
        B: Fn(f64) -> (f64, f64),
    {
        let n = self.grid.n_y;
        let mut out = if keep_all {
            Array2::zeros((self.grid.n_t, n))
        } else {
            Array2::zeros((1, n))
        };
        let store = |k: usize, u: &[f64], out: &mut Array2<f64>| {
            if keep_all {
                out.row_mut(k).iter_mut().zip(u).for_each(|(o, v)| *o = *v);
            } else if k == to {
                out.row_mut(0).iter_mut().zip(u).for_each(|(o, v)| *o = *v);
            }
        };
        let mut u = start;
        store(from, &u, &mut out);
        let mut work = Work::new(n);
        let dt = self.grid.h_t();
        let dir: isize = if to >= from { 1 } else { -1 };
        let mut k = from as isize;
        let mut taken = 0;
        while k != to as isize {
            let k_new = k + dir;
            let (t_old, t_new) = (self.grid.t(k as usize), self.grid.t(k_new as usize));
            if taken < RANNACHER_STEPS {
                let t_mid = 0.5 * (t_old + t_new);
                self.step(&mut u, 0.5 * dt, 1.0, t_old, t_mid, bc(t_mid), &mut work);
                self.step(&mut u, 0.5 * dt, 1.0, t_mid, t_new, bc(t_new), &mut work);
            } else {
                self.step(&mut u, dt, 0.5, t_old, t_new, bc(t_new), &mut work);
            }
            taken += 1;
            k = k_new;
            store(k as usize, &u, &mut out);
        }
        out
    }
}

struct Work {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    base: Vec<f64>,
    rhs: Vec<f64>,
    pred: Vec<f64>,
    adv_old: Vec<f64>,
    adv_new: Vec<f64>,
    scratch: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        let z = || vec![0.0; n];
        Work {
            sub: z(),
            diag: z(),
            sup: z(),
            base: z(),
            rhs: z(),
            pred: z(),
            adv_old: z(),
            adv_new: z(),
            scratch: z(),
        }
    }
}

/// Free-space Gaussian approximation of u used as Dirichlet data at the
/// edges of the window: drift frozen at the boundary node.
fn boundary_value(spec: &DriftSpec, x: f64, y: f64, t: f64, t_end: f64, eps: f64) -> f64 {
    let tau = t_end - t;
    if tau <= 0.0 {
        return if y > x {
            1.0
        } else if y < x {
            0.0
        } else {
            0.5
        };
    }
    normal::cdf((y + spec.b(y, t) * tau - x) / (eps * tau).sqrt())
}

fn step_data(grid: &Grid1D, node: usize) -> Vec<f64> {
    (0..grid.n_y)
        .map(|i| match i.cmp(&node) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => 0.5,
            std::cmp::Ordering::Greater => 1.0,
        })
        .collect()
}

/// Solves for u_eps with threshold `x_threshold` (snapped to the nearest node).
pub fn solve_u(
    spec: &DriftSpec,
    x_threshold: f64,
    grid: Grid1D,
    epsilon: f64,
) -> Result<HeatField> {
    if grid.t_end > spec.horizon_t + 1e-12 {
        return Err(Error::InvalidGrid(format!(
            "grid ends at {} beyond drift horizon {}",
            grid.t_end, spec.horizon_t
        )));
    }
    if !grid.contains(x_threshold) {
        return Err(Error::GridExtent(format!(
            "threshold {x_threshold} outside the grid"
        )));
    }
    let marcher = Marcher::new(spec, grid, epsilon, Transport::Backward)?;
    let diagnostics = marcher.diagnostics()?;
    let node = grid.nearest_node(x_threshold);
    let x = grid.y(node);
    let (y_lo, y_hi) = (grid.y_min, grid.y_max);
    let bc = |t: f64| {
        (
            boundary_value(spec, x, y_lo, t, grid.t_end, epsilon),
            boundary_value(spec, x, y_hi, t, grid.t_end, epsilon),
        )
    };
    let u = marcher.march(step_data(&grid, node), grid.n_t - 1, 0, bc, true);
    Ok(HeatField {
        grid,
        epsilon,
        x_threshold: x,
        threshold_node: node,
        u,
        diagnostics,
    })
}

/// u = N((Lambda y - x) / sqrt(eps sigma^2)) for linear drifts.
pub fn exact_gaussian_u(stats: LinearDriftStats, x: f64, y: f64, epsilon: f64) -> f64 {
    normal::cdf((stats.lambda * y - x) / (epsilon * stats.sigma2).sqrt())
}

/// G = exp(-(x - Lambda y)^2 / (2 eps sigma^2)) / sqrt(2 pi eps sigma^2).
pub fn exact_gaussian_density(stats: LinearDriftStats, x: f64, y: f64, epsilon: f64) -> f64 {
    let s = (epsilon * stats.sigma2).sqrt();
    normal::pdf((x - stats.lambda * y) / s) / s
}

fn centered_y_derivative(row: &[f64], h: f64, out: &mut [f64]) {
    let n = row.len();
    for i in 1..n - 1 {
        out[i] = (row[i + 1] - row[i - 1]) / (2.0 * h);
    }
    out[0] = (-3.0 * row[0] + 4.0 * row[1] - row[2]) / (2.0 * h);
    out[n - 1] = (3.0 * row[n - 1] - 4.0 * row[n - 2] + row[n - 3]) / (2.0 * h);
}

/// Hopf-Cole transform q = -eps ln u with centred y-derivatives.
pub fn hopf_cole(field: &HeatField) -> CostField {
    let grid = field.grid;
    let eps = field.epsilon;
    let mut flagged = 0;
    let q = field.u.mapv(|u| {
        if u >= U_FLOOR {
            -eps * u.ln()
        } else {
            flagged += 1;
            f64::NAN
        }
    });
    let mut dq_dy = Array2::zeros(q.raw_dim());
    let h = grid.h_y();
    let mut buf = vec![0.0; grid.n_y];
    for (k, row) in q.outer_iter().enumerate() {
        let row = row.to_vec();
        centered_y_derivative(&row, h, &mut buf);
        dq_dy
            .row_mut(k)
            .iter_mut()
            .zip(&buf)
            .for_each(|(o, v)| *o = *v);
    }
    CostField {
        grid,
        epsilon: eps,
        x_threshold: field.x_threshold,
        q,
        dq_dy,
        dq_dx: None,
        flagged,
    }
}

/// Solves for `n_x` (odd, >= 3) thresholds centred on `x_center`, spaced
/// by `dx` rounded to a whole number of grid nodes.
pub fn solve_bundle(
    spec: &DriftSpec,
    x_center: f64,
    n_x: usize,
    dx: f64,
    grid: Grid1D,
    epsilon: f64,
) -> Result<ThresholdBundle> {
    if n_x < 3 || n_x.is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "bundle size must be odd and >= 3, got {n_x}"
        )));
    }
    let h = grid.h_y();
    let stride = ((dx / h).round() as usize).max(1);
    let dx = stride as f64 * h;
    let center_node = grid.nearest_node(x_center);
    let half = (n_x - 1) / 2;
    if center_node < half * stride + 1 || center_node + half * stride + 1 >= grid.n_y {
        return Err(Error::GridExtent("threshold bundle leaves the grid".into()));
    }
    let mut fields = Vec::with_capacity(n_x);
    let mut thresholds = Vec::with_capacity(n_x);
    for j in 0..n_x {
        let node = center_node + j * stride - half * stride;
        let x = grid.y(node);
        thresholds.push(x);
        fields.push(solve_u(spec, x, grid, epsilon)?);
    }
    let mut center = hopf_cole(&fields[half]);
    let eps = epsilon;
    let lo = &fields[half - 1].u;
    let hi = &fields[half + 1].u;
    let mut dq_dx = Array2::from_elem(lo.raw_dim(), f64::NAN);
    ndarray::Zip::from(&mut dq_dx)
        .and(lo)
        .and(hi)
        .for_each(|d, &ul, &uh| {
            if ul >= U_FLOOR && uh >= U_FLOOR {
                *d = -eps * (uh.ln() - ul.ln()) / (2.0 * dx);
            }
        });
    center.dq_dx = Some(dq_dx);
    Ok(ThresholdBundle {
        dx,
        stride,
        thresholds,
        fields,
        center,
    })
}

/// Samples G_eps(y, x', t_start, T) for x' on every `x_stride`-th interior
/// node. Each column is -(u(x'+h) - u(x'-h)) / (2h), obtained from a single
/// solve with the difference of the two step data as terminal data.
pub fn green_function(
    spec: &DriftSpec,
    grid: Grid1D,
    epsilon: f64,
    x_stride: usize,
) -> Result<GreenFunction> {
    let x_nodes: Vec<usize> = (1..grid.n_y - 1).step_by(x_stride.max(1)).collect();
    green_function_at(spec, grid, epsilon, &x_nodes)
}

/// As [`green_function`] for an explicit list of x'-nodes.
pub fn green_function_at(
    spec: &DriftSpec,
    grid: Grid1D,
    epsilon: f64,
    x_nodes: &[usize],
) -> Result<GreenFunction> {
    let marcher = Marcher::new(spec, grid, epsilon, Transport::Backward)?;
    marcher.diagnostics()?;
    let h = grid.h_y();
    let mut g = Array2::zeros((grid.n_y, x_nodes.len()));
    for (col, &j) in x_nodes.iter().enumerate() {
        if j == 0 || j + 1 >= grid.n_y {
            return Err(Error::GridExtent(format!("x-node {j} is on the boundary")));
        }
        let mut data = vec![0.0; grid.n_y];
        data[j - 1] = 0.5 / (2.0 * h);
        data[j] = 1.0 / (2.0 * h);
        data[j + 1] = 0.5 / (2.0 * h);
        let levels = marcher.march(data, grid.n_t - 1, 0, |_| (0.0, 0.0), false);
        g.column_mut(col).assign(&levels.row(0));
    }
    Ok(GreenFunction {
        grid,
        epsilon,
        x_nodes: x_nodes.to_vec(),
        x: x_nodes.iter().map(|&j| grid.y(j)).collect(),
        g,
    })
}

/// G_eps(y, x, s, T) for every node y and every level s, from one backward
/// solve with a unit mass on the node nearest `x`.
pub fn green_column_all_levels(
    spec: &DriftSpec,
    grid: Grid1D,
    epsilon: f64,
    x: f64,
) -> Result<Array2<f64>> {
    let marcher = Marcher::new(spec, grid, epsilon, Transport::Backward)?;
    marcher.diagnostics()?;
    let j = grid.nearest_node(x);
    if j == 0 || j + 1 >= grid.n_y {
        return Err(Error::GridExtent(format!("endpoint {x} on the boundary")));
    }
    let mut data = vec![0.0; grid.n_y];
    data[j] = 1.0 / grid.h_y();
    Ok(marcher.march(data, grid.n_t - 1, 0, |_| (0.0, 0.0), true))
}

/// Forward Fokker-Planck solve: the transition density out of `y0` at
/// `grid.t_start`, for every later level.
pub fn transition_density(
    spec: &DriftSpec,
    grid: Grid1D,
    epsilon: f64,
    y0: f64,
) -> Result<DensityField> {
    if grid.t_end > spec.horizon_t + 1e-12 {
        return Err(Error::InvalidGrid("grid beyond drift horizon".into()));
    }
    let marcher = Marcher::new(spec, grid, epsilon, Transport::Forward)?;
    marcher.diagnostics()?;
    let j = grid.nearest_node(y0);
    if j == 0 || j + 1 >= grid.n_y {
        return Err(Error::GridExtent(format!(
            "start point {y0} on the boundary"
        )));
    }
    let mut data = vec![0.0; grid.n_y];
    data[j] = 1.0 / grid.h_y();
    let p = marcher.march(data, 0, grid.n_t - 1, |_| (0.0, 0.0), true);
    Ok(DensityField {
        grid,
        epsilon,
        y0: grid.y(j),
        p,
    })
}

/// Linear interpolation of a row in y; `None` outside the grid or next to
/// a NaN node.
pub fn interp_row(grid: &Grid1D, row: ndarray::ArrayView1<f64>, y: f64) -> Option<f64> {
    if !grid.contains(y) {
        return None;
    }
    let s = (y - grid.y_min) / grid.h_y();
    let i = (s.floor() as usize).min(grid.n_y - 2);
    let w = s - i as f64;
    let v = if w < 1e-9 {
        row[i]
    } else if w > 1.0 - 1e-9 {
        row[i + 1]
    } else {
        (1.0 - w) * row[i] + w * row[i + 1]
    };
    v.is_finite().then_some(v)
}

impl HeatField {
    pub fn u_at(&self, y: f64, level: usize) -> Option<f64> {
        interp_row(&self.grid, self.u.row(level), y)
    }
}

impl CostField {
    /// q_eps at time level 0 (t = t_start).
    pub fn q_at(&self, y: f64) -> Option<f64> {
        interp_row(&self.grid, self.q.row(0), y)
    }

    pub fn dq_dy_at(&self, y: f64) -> Option<f64> {
        interp_row(&self.grid, self.dq_dy.row(0), y)
    }

    pub fn dq_dx_at(&self, y: f64) -> Option<f64> {
        self.dq_dx
            .as_ref()
            .and_then(|d| interp_row(&self.grid, d.row(0), y))
    }
}

/// Second differences of q in a bundle at node `i` of level `level`:
/// (q_yy, q_xy, q_xx), with the mixed term recovered from the diagonal
/// direction so that a function of x - y gives an exactly singular Hessian.
pub fn bundle_hessian(bundle: &ThresholdBundle, i: usize, level: usize) -> Option<[f64; 3]> {
    let m = bundle.stride;
    let half = (bundle.fields.len() - 1) / 2;
    let n = bundle.center.grid.n_y;
    if i < m || i + m >= n {
        return None;
    }
    let eps = bundle.center.epsilon;
    let q = |j: usize, node: usize| -> Option<f64> {
        let u = bundle.fields[j].u[[level, node]];
        (u >= U_FLOOR).then(|| -eps * u.ln())
    };
    let d = bundle.dx;
    let c = q(half, i)?;
    let d_yy = q(half, i + m)? - 2.0 * c + q(half, i - m)?;
    let d_xx = q(half + 1, i)? - 2.0 * c + q(half - 1, i)?;
    let d_diag = q(half + 1, i + m)? - 2.0 * c + q(half - 1, i - m)?;
    let q_yy = d_yy / (d * d);
    let q_xx = d_xx / (d * d);
    let q_xy = (d_diag - d_xx - d_yy) / (2.0 * d * d);
    Some([q_yy, q_xy, q_xx])
}

/// Smallest eigenvalue of the symmetric 2x2 matrix [[a, b], [b, c]].
pub fn min_eigenvalue_2x2(a: f64, b: f64, c: f64) -> f64 {
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    mean - rad
}

/// Re-solves on a window 1.5x wider with the same spacing and returns the
/// largest change of u at the probes (level 0). Fails above 1e-6.
pub fn audit_extent(spec: &DriftSpec, field: &HeatField, probes: &[f64]) -> Result<f64> {
    let g = field.grid;
    let h = g.h_y();
    let x = field.x_threshold;
    let left = ((x - g.y_min) * 1.5 / h).round() * h;
    let right = ((g.y_max - x) * 1.5 / h).round() * h;
    let n_y = ((left + right) / h).round() as usize + 1;
    let wide = Grid1D::new(x - left, x + right, n_y, g.t_start, g.t_end, g.n_t)?;
    let other = solve_u(spec, x, wide, field.epsilon)?;
    let mut worst: f64 = 0.0;
    for &y in probes {
        let a = field
            .u_at(y, 0)
            .ok_or_else(|| Error::GridExtent(format!("probe {y} outside grid")))?;
        let b = other
            .u_at(y, 0)
            .ok_or_else(|| Error::GridExtent(format!("probe {y} outside grid")))?;
        worst = worst.max((a - b).abs());
    }
    if worst > 1e-6 {
        return Err(Error::GridExtent(format!(
            "boundary influence {worst:.3e} at probes exceeds 1e-6"
        )));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::linear_stats;

    fn grid(n_y: usize, n_t: usize) -> Grid1D {
        Grid1D::new(-4.0, 4.0, n_y, 0.0, 1.0, n_t).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid1D::new(1.0, 0.0, 10, 0.0, 1.0, 10).is_err());
        assert!(Grid1D::new(0.0, 1.0, 2, 0.0, 1.0, 10).is_err());
        assert!(Grid1D::new(0.0, 1.0, 3, 1.0, 1.0, 10).is_err());
        assert!(Grid1D::new(0.0, 1.0, 3, 0.0, 1.0, 1).is_err());
        let g = grid(2001, 2001);
        assert!((g.h_y() - 0.004).abs() < 1e-15);
        assert_eq!(g.nearest_node(-1.0), 750);
    }

    #[test]
    fn tridiagonal_solver() {
        let sub = [0.0, -1.0, -1.0, -1.0];
        let diag = [4.0, 4.0, 4.0, 4.0];
        let sup = [-1.0, -1.0, -1.0, 0.0];
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut rhs: Vec<f64> = (0..4)
            .map(|i| {
                diag[i] * x[i]
                    + if i > 0 { sub[i] * x[i - 1] } else { 0.0 }
                    + if i < 3 { sup[i] * x[i + 1] } else { 0.0 }
            })
            .collect();
        let mut scratch = vec![0.0; 4];
        solve_tridiagonal(&sub, &diag, &sup, &mut rhs, &mut scratch);
        for i in 0..4 {
            assert!((rhs[i] - x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_drift_probe_and_symmetry() {
        let spec = DriftSpec::zero(1.0).unwrap();
        let field = solve_u(&spec, 0.0, grid(2001, 2001), 0.1).unwrap();
        let u = field.u_at(-1.0, 0).unwrap();
        let exact = normal::cdf(-1.0 / 0.1f64.sqrt());
        assert!((u - exact).abs() < 1e-5, "{u} vs {exact}");
        for k in 0..field.grid.n_t {
            assert!((field.u[[k, field.threshold_node]] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn maximum_principle_and_monotonicity() {
        for spec in [
            DriftSpec::linear(0.5, 1.0).unwrap(),
            DriftSpec::log_cosh(0.5, 1.0).unwrap(),
            DriftSpec::sine(0.3, 1.0).unwrap(),
        ] {
            let field = solve_u(&spec, 0.2, grid(401, 401), 0.05).unwrap();
            for row in field.u.outer_iter() {
                for w in row.as_slice().unwrap().windows(2) {
                    assert!(w[1] - w[0] >= -1e-12);
                }
                for &v in row {
                    assert!((-1e-12..=1.0 + 1e-12).contains(&v));
                }
            }
        }
    }

    #[test]
    fn linear_drift_oracle() {
        let spec = DriftSpec::linear(0.5, 1.0).unwrap();
        let field = solve_u(&spec, 0.0, grid(2001, 2001), 0.1).unwrap();
        let stats = linear_stats(|_| 0.5, 0.0, 1.0).unwrap();
        let half = 4.0 * (0.1 * stats.sigma2).sqrt() / stats.lambda;
        let mut worst: f64 = 0.0;
        for (i, y) in field.grid.ys().into_iter().enumerate() {
            if y.abs() <= half {
                worst = worst.max((field.u[[0, i]] - exact_gaussian_u(stats, 0.0, y, 0.1)).abs());
            }
        }
        assert!(worst <= 1e-4, "max error {worst}");
    }

    #[test]
    fn hopf_cole_examples() {
        let g = grid(5, 2);
        let mut u = Array2::from_elem((2, 5), 1.0);
        u[[0, 2]] = (-5.0f64).exp();
        u[[1, 0]] = 0.0;
        let field = HeatField {
            grid: g,
            epsilon: 0.1,
            x_threshold: 0.0,
            threshold_node: 2,
            u,
            diagnostics: SolveDiagnostics {
                diffusion_number: 0.0,
                advective_cfl: 0.0,
            },
        };
        let cost = hopf_cole(&field);
        assert_eq!(cost.q[[0, 0]], 0.0);
        assert!((cost.q[[0, 2]] - 0.5).abs() < 1e-15);
        assert!(cost.q[[1, 0]].is_nan());
        assert_eq!(cost.flagged, 1);
    }

    #[test]
    fn hopf_cole_probe_value() {
        let spec = DriftSpec::zero(1.0).unwrap();
        let cost = hopf_cole(&solve_u(&spec, 0.0, grid(2001, 2001), 0.1).unwrap());
        // -0.1 ln N(-1/sqrt(0.1))
        let q = cost.q_at(-1.0).unwrap();
        assert!((q - 0.715_275_963_471_006_9).abs() < 2e-4, "{q}");
        for (k, row) in cost.q.outer_iter().enumerate().take(cost.grid.n_t - 1) {
            for (i, &v) in row.iter().enumerate() {
                if v.is_finite() {
                    assert!(v >= 0.0);
                    if i > 0 && i + 1 < cost.grid.n_y && cost.dq_dy[[k, i]].is_finite() {
                        assert!(cost.dq_dy[[k, i]] <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn bundle_translation_invariance_for_zero_drift() {
        let spec = DriftSpec::zero(1.0).unwrap();
        let b = solve_bundle(&spec, 0.0, 3, 0.004, grid(2001, 1001), 0.1).unwrap();
        let dqdx = b.center.dq_dx_at(-1.0).unwrap();
        let dqdy = b.center.dq_dy_at(-1.0).unwrap();
        assert!((dqdx + dqdy).abs() < 1e-6, "{dqdx} {dqdy}");
        // closed form: d/dx [-eps ln N((y-x)/sqrt(eps))] = sqrt(eps) * mills
        let z = 1.0 / 0.1f64.sqrt();
        let exact = 0.1f64.sqrt() * normal::inverse_mills(z);
        assert!((dqdx - exact).abs() < 1e-3, "{dqdx} vs {exact}");
        assert!(solve_bundle(&spec, 0.0, 4, 0.004, grid(101, 11), 0.1).is_err());
    }

    #[test]
    fn green_function_zero_drift() {
        let spec = DriftSpec::zero(1.0).unwrap();
        let g = grid(801, 401);
        let green = green_function(&spec, g, 0.1, 4).unwrap();
        let i = green.x_nodes[100];
        let col = green.x_nodes.iter().position(|&j| j == i).unwrap();
        let peak = green.g[[i, col]];
        let exact = 1.0 / (2.0 * std::f64::consts::PI * 0.1).sqrt();
        assert!((peak - exact).abs() < 2e-3, "{peak} vs {exact}");
        let dx = 4.0 * g.h_y();
        let row_sum: f64 = green.g.row(i).iter().sum::<f64>() * dx;
        assert!((row_sum - 1.0).abs() < 1e-4, "{row_sum}");
        assert!(green.g.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn forward_density_matches_gaussian() {
        let spec = DriftSpec::linear(0.5, 1.0).unwrap();
        let g = grid(801, 401);
        let dens = transition_density(&spec, g, 0.1, -1.0).unwrap();
        let stats = linear_stats(|_| 0.5, 0.0, 1.0).unwrap();
        let last = dens.p.row(g.n_t - 1);
        let mut worst: f64 = 0.0;
        let mut mass = 0.0;
        for (i, y) in g.ys().into_iter().enumerate() {
            worst = worst.max((last[i] - exact_gaussian_density(stats, y, -1.0, 0.1)).abs());
            mass += last[i] * g.h_y();
        }
        assert!(worst < 2e-3, "{worst}");
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }

    #[test]
    fn extent_audit() {
        let spec = DriftSpec::zero(1.0).unwrap();
        let g = Grid1D::covering(&spec, 0.0, 0.1, 0.0, 1.0, 801, 201).unwrap();
        let field = solve_u(&spec, 0.0, g, 0.1).unwrap();
        assert!(audit_extent(&spec, &field, &[-1.0, 0.5]).unwrap() <= 1e-6);
        // The Gaussian edge data is only exact without drift.
        let spec = DriftSpec::sine(0.3, 1.0).unwrap();
        let tight = Grid1D::new(-0.6, 0.6, 121, 0.0, 1.0, 201).unwrap();
        let field = solve_u(&spec, 0.0, tight, 0.1).unwrap();
        assert!(matches!(
            audit_extent(&spec, &field, &[-0.5]),
            Err(Error::GridExtent(_))
        ));
    }

    #[test]
    fn advective_cfl_guard() {
        let spec = DriftSpec::linear(5.0, 1.0).unwrap();
        let g = Grid1D::new(-4.0, 4.0, 801, 0.0, 1.0, 11).unwrap();
        assert!(matches!(
            solve_u(&spec, 0.0, g, 0.1),
            Err(Error::InvalidGrid(_))
        ));
    }
}
