//! The zero-noise problem: the cheapest control that pushes Y from y to
//! above x by time T. Shooting on the Hamiltonian system and a direct
//! discretised minimisation should give the same cost.

use zeronoise::classical::{
    derivatives_first, minimize_direct, momentum_drift, solve_shooting, DIRECT_NODES,
};
use zeronoise::drift::DriftSpec;

fn main() -> zeronoise::Result<()> {
    let big_t = 1.0;
    let drifts = [
        DriftSpec::zero(big_t)?,
        DriftSpec::linear(0.5, big_t)?,
        DriftSpec::log_cosh(0.5, big_t)?,
        DriftSpec::sine(0.3, big_t)?,
    ];
    for spec in &drifts {
        println!("{:?}", spec.kind);
        for (x, y) in [(0.0, -1.0), (0.5, -1.5), (1.0, 0.0)] {
            let sol = solve_shooting(spec, x, y, 0.0)?;
            let (_, q_direct) = minimize_direct(spec, x, y, 0.0, DIRECT_NODES)?;
            let d = derivatives_first(&sol, spec);
            println!(
                "  x = {x:4}, y = {y:4}: q = {:.6} (direct {:.6}), lambda* = {:.4}, dq/dy = {:.4}, dq/dx = {:.4}, momentum drift {:.1e}",
                sol.q_value,
                q_direct,
                sol.lambda_star,
                d.dq_dy,
                d.dq_dx,
                momentum_drift(&sol, spec)
            );
        }
    }
    Ok(())
}
