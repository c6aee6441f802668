use approx::assert_relative_eq;
use proptest::prelude::*;

use zeronoise::bridge::{linear_bridge_moments, BridgeQuery};
use zeronoise::classical::solve_shooting;
use zeronoise::drift::DriftSpec;
use zeronoise::normal;

fn linear_cost(a: f64, x: f64, y: f64, tau: f64) -> f64 {
    let growth = (a * tau).exp();
    let spread = if a == 0.0 {
        tau
    } else {
        ((2.0 * a * tau).exp() - 1.0) / (2.0 * a)
    };
    let gap = x - growth * y;
    if gap > 0.0 {
        gap * gap / (2.0 * spread)
    } else {
        0.0
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shooting_reproduces_the_linear_cost(a in 0.0f64..1.0, x in -1.0f64..1.0, y in -2.0f64..1.0, t in 0.0f64..0.8) {
        let spec = DriftSpec::linear(a, 1.0).unwrap();
        let sol = solve_shooting(&spec, x, y, t).unwrap();
        let exact = linear_cost(a, x, y, 1.0 - t);
        prop_assert!((sol.q_value - exact).abs() <= 1e-6 * (1.0 + exact), "{} vs {exact}", sol.q_value);
        prop_assert_eq!(sol.zero_cost, exact == 0.0);
    }

    #[test]
    fn cost_increases_with_the_gap(x in -1.0f64..1.0, gap in 0.05f64..2.0, extra in 0.01f64..1.0) {
        let spec = DriftSpec::log_cosh(0.5, 1.0).unwrap();
        let near = solve_shooting(&spec, x, x - gap, 0.0).unwrap().q_value;
        let far = solve_shooting(&spec, x, x - gap - extra, 0.0).unwrap().q_value;
        prop_assert!(far > near);
    }

    #[test]
    fn brownian_bridge_moments(y in -2.0f64..2.0, frac in 0.01f64..1.0, eps in 0.01f64..1.0) {
        let q = BridgeQuery::new(y, 1.0, frac, eps).unwrap();
        let m = linear_bridge_moments(|_| 0.0, &q, 1.0).unwrap();
        assert_relative_eq!(m.estimate.mean, y * frac, epsilon = 1e-12);
        assert_relative_eq!(m.estimate.variance, eps * frac * (1.0 - frac), epsilon = 1e-12);
        assert_relative_eq!(m.estimate.prob_below + m.estimate.prob_above, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn log_cdf_is_consistent(z in -30.0f64..8.0) {
        let direct = normal::cdf(z);
        if direct > 1e-300 {
            assert_relative_eq!(normal::ln_cdf(z), direct.ln(), max_relative = 1e-10, epsilon = 1e-15);
        }
        prop_assert!(normal::cdf(z) + normal::cdf(-z) - 1.0 <= 1e-15);
    }
}
