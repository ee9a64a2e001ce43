use std::f64::consts::PI;

use crossdiff::stepper::{integrate, run, step, weak_residual, Equation, FnTestFunction, StepError};
use crossdiff::{DiagnosticsConfig, Field, Grid, ParamSet, SchemeConfig, State, Trajectory};
use proptest::prelude::*;

fn bump_state(grid: Grid) -> State {
    let l = grid.length(0);
    State::new(
        Field::from_fn(grid, |x| 1.0 + 0.5 * (PI * x[0] / l).cos()),
        Field::from_fn(grid, |x| 1.0 - 0.5 * (PI * x[0] / l).cos()),
        0.0,
    )
}

fn canonical(n: usize, steps: usize, t: f64) -> Trajectory {
    let grid = Grid::line(n, 1.0).unwrap();
    integrate(bump_state(grid), &ParamSet::canonical(), &SchemeConfig::new(t, steps))
        .unwrap()
        .0
}

#[test]
fn runs_are_bitwise_deterministic() {
    let a = canonical(64, 40, 0.2);
    let b = canonical(64, 40, 0.2);
    for (x, y) in a.states.iter().zip(&b.states) {
        for (p, q) in x.u.values().iter().zip(y.u.values()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
        for (p, q) in x.v.values().iter().zip(y.v.values()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }
}

#[test]
fn reflection_symmetric_data_stays_symmetric() {
    let grid = Grid::line(64, 1.0).unwrap();
    let init = State::new(
        Field::from_fn(grid, |x| 1.0 + 0.4 * (2.0 * PI * x[0]).cos()),
        Field::from_fn(grid, |x| 1.2 - 0.3 * (2.0 * PI * x[0]).cos()),
        0.0,
    );
    let (traj, _) = integrate(init, &ParamSet::canonical(), &SchemeConfig::new(0.3, 60)).unwrap();
    let n = grid.len();
    for s in &traj.states {
        for i in 0..n / 2 {
            assert!((s.u.values()[i] - s.u.values()[n - 1 - i]).abs() < 1e-12);
            assert!((s.v.values()[i] - s.v.values()[n - 1 - i]).abs() < 1e-12);
        }
    }
}

#[test]
fn run_returns_diagnostics_for_the_trajectory() {
    let grid = Grid::line(32, 1.0).unwrap();
    let p = ParamSet::canonical();
    let (traj, report) = run(bump_state(grid), &p, &SchemeConfig::new(0.2, 20), &DiagnosticsConfig::for_params(&p)).unwrap();
    assert_eq!(traj.steps(), 20);
    assert!(report.all_pass(), "failing: {:?}", report.failing());
}

#[test]
fn step_errors_carry_the_step_index() {
    let grid = Grid::line(8, 1.0).unwrap();
    let err = integrate(bump_state(grid), &ParamSet::canonical(), &SchemeConfig::new(3.0, 10)).unwrap_err();
    assert_eq!(err.step, 0);
    assert!(matches!(err.source, StepError::StepSizeViolation(_)));
}

#[test]
fn two_dimensional_run_is_positive_and_conserves_pure_diffusion_mass() {
    let grid = Grid::rect(24, 20, 1.0, 0.8).unwrap();
    let init = State::new(
        Field::from_fn(grid, |x| 1.0 + 0.5 * (PI * x[0]).cos() * (PI * x[1] / 0.8).cos()),
        Field::from_fn(grid, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).cos()),
        0.0,
    );
    let mass0 = crossdiff::grid::integrate(&init.u);
    let mut p = ParamSet::pure_diffusion(1.0, 0.5);
    p.d_beta = 2.0;
    p.beta = 1.0;
    let (traj, _) = integrate(init, &p, &SchemeConfig::new(0.05, 10)).unwrap();
    for s in &traj.states {
        assert!(s.min() > 0.0);
        assert!((crossdiff::grid::integrate(&s.u) - mass0).abs() < 1e-10);
    }
}

fn bump(t0: f64) -> impl Fn(f64) -> f64 + Copy + Send + Sync {
    move |t: f64| if t < t0 { (1.0 - t / t0).powi(4) } else { 0.0 }
}

#[test]
fn weak_residual_of_spatially_constant_test_function_is_mass_telescoping() {
    let b = bump(0.6);
    let psi = FnTestFunction {
        value: move |t: f64, _x: [f64; 2]| b(t),
        gradient: |_t: f64, _x: [f64; 2]| [0.0, 0.0],
    };
    let grid = Grid::line(40, 1.0).unwrap();
    let p = ParamSet::pure_diffusion(1.0, 2.0);
    let (traj, _) = integrate(bump_state(grid), &p, &SchemeConfig::new(1.0, 50)).unwrap();
    assert!(weak_residual(&traj, &psi, Equation::U).abs() <= 1e-10);
    assert!(weak_residual(&traj, &psi, Equation::V).abs() <= 1e-10);
}

#[test]
fn weak_residual_halves_under_refinement() {
    let b = bump(0.8);
    let psi = FnTestFunction {
        value: move |t: f64, x: [f64; 2]| (PI * x[0]).cos() * b(t),
        gradient: move |t: f64, x: [f64; 2]| [-PI * (PI * x[0]).sin() * b(t), 0.0],
    };
    // τ halves and h² halves (n grows by √2) at each level.
    let levels = [(32, 25), (45, 50), (64, 100)];
    for which in [Equation::U, Equation::V] {
        let r: Vec<f64> = levels
            .iter()
            .map(|&(n, steps)| weak_residual(&canonical(n, steps, 1.0), &psi, which).abs())
            .collect();
        for w in r.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.6..=2.5).contains(&ratio), "{which:?}: ratio {ratio} from {r:?}");
        }
    }
}

#[derive(Debug, Clone)]
struct Case {
    p: ParamSet,
    u: Vec<f64>,
    v: Vec<f64>,
}

fn case() -> impl Strategy<Value = Case> {
    let exps = (0.0f64..2.0, 0.2f64..2.0, 0.0f64..2.0, 0.3f64..2.0, 0.3f64..2.0);
    let coefs = prop::collection::vec(0.1f64..2.5, 11);
    let fracs = (0.05f64..0.99, 0.05f64..0.99);
    (exps, coefs, fracs, prop::collection::vec(0.05f64..3.0, 16), prop::collection::vec(0.05f64..3.0, 16)).prop_map(
        |((alpha, beta, gamma, b, c), k, (fa, fd), u, v)| {
            let p = ParamSet {
                d_u: k[0],
                d_v: k[1],
                d_alpha: k[2],
                d_beta: k[3],
                d_gamma: k[4],
                r_u: k[5],
                r_v: k[6],
                r_a: k[7],
                r_b: k[8],
                r_c: k[9],
                r_d: k[10],
                a: fa * (1.0 + alpha),
                b,
                c,
                d: fd * (2.0 + alpha),
                alpha,
                beta,
                gamma,
                strict_validation: true,
            };
            Case { p, u, v }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accepted_steps_are_positive_meet_the_residual_contract_and_cap_v(c in case()) {
        prop_assume!(c.p.validate().is_ok());
        let grid = Grid::line(16, 1.0).unwrap();
        let prev = State::new(Field::new(grid, c.u).unwrap(), Field::new(grid, c.v).unwrap(), 0.0);
        let cfg = SchemeConfig::new(0.05, 1);
        let (next, report) = step(&prev, &c.p, &cfg).unwrap();
        prop_assert!(next.min() > 0.0);
        let scale = 1.0 + next.u.max_abs().max(next.v.max_abs());
        prop_assert!(report.final_residual <= cfg.newton_tol * scale);
        let cap = c.p.v_cap().unwrap();
        prop_assert!(next.v.max() <= prev.v.max().max(cap) + 1e-12);
    }
}
