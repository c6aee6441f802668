//! Importance sampling of P(Y(T) > x) with the optimal control taken from
//! the PDE cost, against crude Monte Carlo and the PDE itself.

use zeronoise::drift::DriftSpec;
use zeronoise::pde::{solve_bundle, Grid1D};
use zeronoise::sde::{
    estimate_u_naive, run_controlled, simulate_uncontrolled, ControllerField, SimConfig,
};

fn main() -> zeronoise::Result<()> {
    let (x, y, t, big_t, eps) = (0.0, -1.0, 0.0, 1.0, 0.1);
    let spec = DriftSpec::log_cosh(0.5, big_t)?;
    let grid = Grid1D::covering(&spec, x, eps, t, big_t, 1001, 1001)?;
    let bundle = solve_bundle(&spec, x, 3, grid.h_y(), grid, eps)?;
    let u_pde = bundle.fields[1].u_at(y, 0).unwrap();

    let sim = SimConfig::new(20_000, 1e-3, 7, t, big_t);
    let free = simulate_uncontrolled(&spec, eps, y, t, &sim)?;
    let naive = estimate_u_naive(&free, x);

    let ctrl = ControllerField::new(&spec, &bundle.center);
    let run = run_controlled(&ctrl, y, t, &sim)?;
    let is = run.importance_sampling(x);

    println!("P(Y(T) > {x}) from y = {y}, eps = {eps}");
    println!("  PDE       {u_pde:.4e}");
    println!(
        "  crude MC  {:.4e} +/- {:.1e}",
        naive.estimate, naive.std_error
    );
    println!(
        "  IS        {:.4e} +/- {:.1e} (variance reduction x{:.0})",
        is.estimate.estimate, is.estimate.std_error, is.variance_ratio
    );
    let q = run.representation_q();
    let (dy, dx, _) = run.representation_dq();
    println!("\ncost along controlled paths:");
    println!(
        "  q      {:.4} +/- {:.1e} (PDE {:.4})",
        q.estimate,
        q.std_error,
        bundle.center.q_at(y).unwrap()
    );
    println!(
        "  dq/dy  {:.4} +/- {:.1e} (PDE {:.4})",
        dy.estimate,
        dy.std_error,
        bundle.center.dq_dy_at(y).unwrap()
    );
    println!(
        "  dq/dx  {:.4} +/- {:.1e} (PDE {:.4})",
        dx.estimate,
        dx.std_error,
        bundle.center.dq_dx_at(y).unwrap()
    );
    println!("  paths above x at the cutoff: {:.3}", run.exceedance(x));
    Ok(())
}
