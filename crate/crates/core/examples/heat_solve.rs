//! Solves the backward equation for P(Y(T) > x | Y(t) = y), turns it into
//! the cost q_eps = -eps ln u and watches q_eps approach the zero-noise cost
//! as eps shrinks.

use zeronoise::classical::solve_shooting;
use zeronoise::drift::DriftSpec;
use zeronoise::pde::{exact_gaussian_u, solve_bundle, Grid1D};

fn main() -> zeronoise::Result<()> {
    let (x, y, t, big_t) = (0.0, -1.0, 0.0, 1.0);

    // Linear drift: the exact answer is a Gaussian tail.
    let linear = DriftSpec::linear(0.5, big_t)?;
    let grid = Grid1D::covering(&linear, x, 0.1, t, big_t, 2001, 2001)?;
    let bundle = solve_bundle(&linear, x, 3, grid.h_y(), grid, 0.1)?;
    let u = bundle.fields[1].u_at(y, 0).unwrap();
    let stats = linear.linear_stats(t, big_t).unwrap()?;
    println!("linear drift, eps = 0.1");
    println!(
        "  u  = {u:.8e} (exact {:.8e})",
        exact_gaussian_u(stats, x, y, 0.1)
    );
    println!(
        "  q = {:.6}, dq/dy = {:.6}, dq/dx = {:.6}",
        bundle.center.q_at(y).unwrap(),
        bundle.center.dq_dy_at(y).unwrap(),
        bundle.center.dq_dx_at(y).unwrap()
    );

    // Log-cosh drift: compare with the variational cost along a sweep.
    let spec = DriftSpec::log_cosh(0.5, big_t)?;
    let q0 = solve_shooting(&spec, x, y, t)?.q_value;
    println!("\nlog-cosh drift, zero-noise cost q = {q0:.6}");
    println!("  {:>7} {:>10} {:>10}", "eps", "q_eps", "gap");
    for eps in [0.4, 0.2, 0.1, 0.05] {
        let grid = Grid1D::covering(&spec, x, eps, t, big_t, 1001, 1001)?;
        let field = solve_bundle(&spec, x, 3, grid.h_y(), grid, eps)?;
        let q = field.center.q_at(y).unwrap();
        println!("  {eps:>7} {q:>10.6} {:>10.6}", q - q0);
    }
    Ok(())
}
