use crossdiff::oracles::{homogeneous_ode_reference, homogeneous_ode_reference_with_steps};
use crossdiff::stepper::integrate;
use crossdiff::{Field, Grid, ParamSet, SchemeConfig, State};

// Canonical homogeneous system from (0.5, 1.0) at T = 1. With equal competition
// the sum s = u + v is logistic, s' = s(2 − s), and u/v is conserved, so
// s(1) = 2 / (1 + (2/s0 − 1) e^{−2}). Values computed to 30 digits offline.
const FROZEN_U: f64 = 0.637_890_311_346_669_2;
const FROZEN_V: f64 = 1.275_780_622_693_338_3;

#[test]
fn rk4_matches_frozen_closed_form() {
    let s = homogeneous_ode_reference(&ParamSet::canonical(), 0.5, 1.0, 1.0);
    assert!((s.u - FROZEN_U).abs() < 1e-12, "{}", s.u);
    assert!((s.v - FROZEN_V).abs() < 1e-12, "{}", s.v);
}

#[test]
fn reference_at_the_canonical_fixture_stays_put() {
    // (0.5, 1.5) lies on the line of equilibria u + v = 2.
    let s = homogeneous_ode_reference_with_steps(&ParamSet::canonical(), 0.5, 1.5, 1.0, 10_000);
    assert_eq!((s.u, s.v), (0.5, 1.5));
}

#[test]
fn stepper_keeps_zero_axis_like_the_oracle() {
    let p = ParamSet::canonical();
    let ode = homogeneous_ode_reference_with_steps(&p, 0.0, 0.7, 0.5, 10_000);
    let grid = Grid::line(8, 1.0).unwrap();
    let init = State::new(Field::zeros(grid), Field::constant(grid, 0.7), 0.0);
    let (traj, _) = integrate(init, &p, &SchemeConfig::new(0.5, 50)).unwrap();
    let last = traj.states.last().unwrap();
    assert_eq!(ode.u, 0.0);
    assert!(last.u.values().iter().all(|&x| x == 0.0));
    assert!((last.v.values()[0] - ode.v).abs() < 1e-2);
}

/// Away from the equilibrium line the implicit scheme shows first-order
/// convergence towards the ODE solution.
#[test]
fn stepper_converges_at_first_order_off_equilibrium() {
    let p = ParamSet::canonical();
    let grid = Grid::line(8, 1.0).unwrap();
    let mut errors = Vec::new();
    for tau in [1e-2, 5e-3, 2.5e-3] {
        let steps = (1.0f64 / tau).round() as usize;
        let init = State::new(Field::constant(grid, 0.5), Field::constant(grid, 1.0), 0.0);
        let (traj, _) = integrate(init, &p, &SchemeConfig::new(1.0, steps)).unwrap();
        let last = traj.states.last().unwrap();
        let err = (last.u.values()[0] - FROZEN_U)
            .abs()
            .max((last.v.values()[0] - FROZEN_V).abs());
        errors.push(err);
    }
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}, errors {errors:?}");
    }
    assert!(errors[2] / FROZEN_V < 1e-2);
}
