//! Property tests of structural invariants of the solvers.

use alveoli::coefficients::LeakProfile;
use alveoli::scenario::{Scenario, VelocityConfig};
use alveoli::study::{solve, Solver};
use proptest::prelude::*;

const QUICK: &str = include_str!("../../../scenarios/quick.toml");

fn quick() -> Scenario {
    Scenario::parse(QUICK).unwrap()
}

fn solver() -> impl Strategy<Value = Solver> {
    prop_oneof![
        Just(Solver::Micro),
        Just(Solver::Limit),
        Just(Solver::Outer),
        Just(Solver::Corrector)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    /// With no vertical velocity, a nonnegative leak into zero initial data
    /// never produces negative concentrations.
    #[test]
    fn maximum_principle(
        amplitude in 0.1f64..5.0,
        t_m in 0.02f64..0.2,
        a_inner in 0.05f64..2.0,
        lateral in -1.0f64..1.0,
        lambda in 0.0f64..3.0,
        micro in any::<bool>(),
    ) {
        let mut s = quick();
        s.source = LeakProfile::Pulse { amplitude, t_m };
        s.coefficients.a_inner = vec![a_inner, 0.0, 0.0, a_inner];
        s.coefficients.lambda = Some(lambda);
        s.coefficients.velocity = VelocityConfig::Uniform { inner: vec![lateral, 0.0], outer: vec![0.5 * lateral, 0.0] };
        let run = solve(&s, if micro { Solver::Micro } else { Solver::Limit }).unwrap();
        let max = run.series.max_abs();
        prop_assert!(max > 0.0);
        for v in &run.series.values {
            for &x in v {
                prop_assert!(x >= -1e-12 * max, "negative value {x}");
            }
        }
    }

    /// Every solver closes its per-step mass budget, and the hole influx is
    /// the integral of the leak over its support.
    #[test]
    fn conservation(
        amplitude in 0.1f64..5.0,
        t_m in 0.02f64..0.2,
        vertical in -0.5f64..0.5,
        lambda in 0.0f64..3.0,
        solver in solver(),
    ) {
        let mut s = quick();
        s.source = LeakProfile::Pulse { amplitude, t_m };
        s.coefficients.lambda = Some(lambda);
        s.coefficients.velocity = VelocityConfig::Uniform { inner: vec![0.2, vertical], outer: vec![0.5, vertical] };
        let run = solve(&s, solver).unwrap();
        prop_assert!(run.report.worst_balance <= 1e-10, "{:?}: {:.3e}", solver, run.report.worst_balance);
        if solver == Solver::Micro {
            let weight: f64 = run.report.total_injected / (amplitude * t_m);
            let again = {
                let mut s2 = s.clone();
                s2.source = LeakProfile::Pulse { amplitude: 2.0 * amplitude, t_m };
                solve(&s2, solver).unwrap()
            };
            prop_assert!((again.report.total_injected / (2.0 * amplitude * t_m) - weight).abs() <= 1e-12 * weight);
        }
    }

    /// The leak enters linearly: scaling it scales every snapshot.
    #[test]
    fn linearity_in_the_leak(factor in 0.1f64..10.0, solver in solver()) {
        let s = quick();
        let base = solve(&s, solver).unwrap();
        let mut scaled = s.clone();
        scaled.source = LeakProfile::Pulse { amplitude: factor, t_m: 0.1 };
        let run = solve(&scaled, solver).unwrap();
        let max = base.series.max_abs();
        for (a, b) in base.series.values.iter().zip(&run.series.values) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((factor * x - y).abs() <= 1e-9 * factor * max);
            }
        }
    }

    /// Echoing a scenario and parsing it back is lossless.
    #[test]
    fn scenario_round_trip(
        eps_index in 0usize..2,
        dt in 0.001f64..0.1,
        amplitude in 0.1f64..10.0,
        h in 1.1f64..3.0,
        omega in 0.1f64..2.0,
    ) {
        let mut s = quick().with_eps([0.0625, 0.03125][eps_index]).unwrap();
        s.run.dt = dt;
        s.source = LeakProfile::Pulse { amplitude, t_m: 0.1 };
        s.coefficients.h = h;
        s.coefficients.omega_inner = omega;
        s.validate().unwrap();
        let text = s.echo();
        let back = Scenario::parse(&text).unwrap();
        prop_assert_eq!(back.echo(), text);
        prop_assert_eq!(back.run.dt, dt);
        prop_assert_eq!(back.coefficients.h, h);
    }
}

/// The layered medium and the array are ε-periodic laterally and the
/// lateral boundary is periodic, so the microscopic solution is invariant
/// under a lateral shift by one period.
#[test]
fn periodic_shift_invariance() {
    let s = quick();
    let run = solve(&s, Solver::Micro).unwrap();
    let g = &run.series.grid;
    let dims = g.dims();
    let per_period = s.geometry.resolution.cells_per_eps;
    assert_eq!(dims[0] % per_period, 0);
    let max = run.series.max_abs();
    assert!(max > 0.0);
    let mut worst = 0.0f64;
    for values in &run.series.values {
        for c in 0..g.len() {
            let mut idx = g.multi_index(c);
            idx[0] = (idx[0] + per_period) % dims[0];
            let shifted = g.index(&idx[..g.ndim()]);
            worst = worst.max((values[c] - values[shifted]).abs());
        }
    }
    assert!(worst <= 1e-10 * max, "shift deviation {worst:.3e}");
}
