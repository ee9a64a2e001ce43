use std::f64::consts::PI;

use crossdiff::diagnostics::{
    dual_probe_report, duality_functional, entropy_tolerance, entropy_v_cumulative, entropy_v_step_check, evaluate,
    phi_p, phi_p_prime, regularity_norms, Forcing,
};
use crossdiff::stepper::integrate;
use crossdiff::{DiagnosticsConfig, Field, Grid, ParamSet, SchemeConfig, State, Status, Trajectory};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn bump_run(p: &ParamSet, n: usize, steps: usize, t: f64) -> Trajectory {
    let grid = Grid::line(n, 1.0).unwrap();
    let init = State::new(
        Field::from_fn(grid, |x| 1.0 + 0.5 * (PI * x[0]).cos()),
        Field::from_fn(grid, |x| 1.0 - 0.5 * (PI * x[0]).cos()),
        0.0,
    );
    integrate(init, p, &SchemeConfig::new(t, steps)).unwrap().0
}

fn alpha_zero() -> ParamSet {
    let mut p = ParamSet::canonical();
    p.alpha = 0.0;
    p.a = 0.5;
    p.d = 1.0;
    p
}

fn full_config() -> DiagnosticsConfig {
    DiagnosticsConfig {
        dual_probe: Some(Forcing::Constant(1.0)),
        ..DiagnosticsConfig::default()
    }
}

#[test]
fn cumulative_series_are_monotone_and_finite() {
    let traj = bump_run(&ParamSet::canonical(), 48, 60, 0.6);
    let report = evaluate(&traj, &full_config());
    let cumulative = ["duality", "entropy_v_grad_p0.5", "entropy_v_grad_p2", "regularity_dt_v"];
    for name in cumulative {
        let s = report.get(name).unwrap_or_else(|| panic!("missing {name}"));
        assert_ne!(s.status, Status::Fail, "{name}");
        for w in s.rows.windows(2) {
            assert!(w[1].value.is_finite());
            assert!(w[1].value >= w[0].value, "{name} decreases at step {}", w[1].step);
        }
    }
}

#[test]
fn evaluation_is_pure() {
    let traj = bump_run(&ParamSet::canonical(), 32, 30, 0.3);
    let a = evaluate(&traj, &full_config());
    let b = evaluate(&traj, &full_config());
    assert_eq!(a, b);
    assert_eq!(a.summary_json(), b.summary_json());
}

/// Each step value recomputed with a dense Neumann Laplacian: the secant
/// dissipation equals `−vol φ'(v)ᵀ L v`.
#[test]
fn entropy_step_values_match_dense_oracle() {
    let p = ParamSet::canonical();
    let n = 16;
    let traj = bump_run(&p, n, 10, 0.1);
    let h = 1.0 / n as f64;
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in [i.wrapping_sub(1), i + 1] {
            if j < n {
                lap[(i, j)] += 1.0 / (h * h);
                lap[(i, i)] -= 1.0 / (h * h);
            }
        }
    }
    for exponent in [0.0, 0.5] {
        let series = entropy_v_step_check(&traj, exponent);
        assert_eq!(series.status, Status::Pass);
        for (k, row) in (1..=10).zip(&series.rows) {
            let s = &traj.states[k];
            let prev = &traj.states[k - 1];
            let v = DVector::from_column_slice(s.v.values());
            let u = s.u.values();
            let dphi = v.map(|z| phi_p_prime(exponent, z));
            let energy = |st: &State| st.v.values().iter().map(|&z| phi_p(exponent, z)).sum::<f64>() * h;
            let dissipation = -h * p.d_v * dphi.dot(&(&lap * &v));
            let reaction: f64 = (0..n)
                .map(|i| dphi[i] * v[i] * (p.r_v - p.r_c * v[i] - p.r_d * u[i]))
                .sum::<f64>()
                * h;
            let expected = energy(s) - energy(prev) + traj.tau * (dissipation - reaction);
            assert!((row.value - expected).abs() < 1e-12, "p {exponent} k {k}: {} vs {expected}", row.value);
            assert!(row.value <= entropy_tolerance(&traj.grid));
        }
    }
}

#[test]
fn duality_is_stable_under_refinement() {
    let p = ParamSet::canonical();
    let coarse = duality_functional(&bump_run(&p, 64, 100, 1.0));
    let fine = duality_functional(&bump_run(&p, 128, 200, 1.0));
    assert!(coarse > 0.0 && fine > 0.0);
    assert!((coarse / fine - 1.0).abs() < 0.05, "{coarse} vs {fine}");
}

/// The cumulative gradient entropy converges at first order: the gaps between
/// successive refinements roughly halve.
#[test]
fn gradient_entropy_converges_under_refinement() {
    let p = ParamSet::canonical();
    let values: Vec<f64> = [(32, 50), (64, 100), (128, 200), (256, 400)]
        .iter()
        .map(|&(n, steps)| entropy_v_cumulative(&bump_run(&p, n, steps, 1.0), 0.5))
        .collect();
    let gaps: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    for w in gaps.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.6..=2.5).contains(&ratio), "ratio {ratio} from {values:?}");
    }
}

#[test]
fn dual_probe_ratios_are_stable_under_refinement() {
    let p = alpha_zero();
    let coarse = bump_run(&p, 64, 100, 0.5);
    let fine = bump_run(&p, 128, 200, 0.5);
    let f = |_t: f64, x: [f64; 2]| 1.0 + (PI * x[0]).cos();
    let a = dual_probe_report(&coarse, &f).unwrap();
    let b = dual_probe_report(&fine, &f).unwrap();
    for ((nu, ra), (_, rb)) in a.ratios.iter().zip(&b.ratios) {
        assert!(*ra < 0.0);
        assert!((ra / rb - 1.0).abs() < 0.10, "nu {nu}: {ra} vs {rb}");
    }
}

#[test]
fn regularity_norms_settle_without_self_diffusion_of_v() {
    let mut p = ParamSet::canonical();
    p.gamma = 0.0;
    let coarse = regularity_norms(&bump_run(&p, 64, 100, 0.5), 2.0);
    let fine = regularity_norms(&bump_run(&p, 128, 200, 0.5), 2.0);
    for (a, b) in [(coarse.0, fine.0), (coarse.1, fine.1), (coarse.2, fine.2)] {
        assert!(a.is_finite() && b.is_finite());
        assert!((a / b - 1.0).abs() < 0.10, "{a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dual_stays_nonnegative_for_nonpositive_forcing(seed in 0u64..10_000) {
        let traj = bump_run(&alpha_zero(), 32, 20, 0.4);
        let forcing = Forcing::RandomSmooth { seed };
        let f = forcing.evaluator(&traj.grid);
        let rep = dual_probe_report(&traj, f.as_ref()).unwrap();
        prop_assert!(rep.min_value >= -1e-12);
    }
}
