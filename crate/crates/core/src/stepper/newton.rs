//! Damped Newton iteration with a positivity-preserving line search.

use crate::linalg::{self, BandedLu, Csr};

pub trait NonlinearSystem {
    fn size(&self) -> usize;
    fn residual(&self, x: &[f64], out: &mut [f64]);
    fn jacobian(&self, x: &[f64]) -> Csr;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolver {
    Banded,
    Gmres,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub floor: f64,
    pub solver: LinearSolver,
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub damping_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NewtonFailure {
    Divergence(Vec<f64>),
    Positivity,
    Linear(String),
}

const MAX_HALVINGS: usize = 30;
const ARMIJO: f64 = 1e-4;

pub(crate) fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn two_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn linear_solve(j: &Csr, rhs: &[f64], solver: LinearSolver) -> Result<Vec<f64>, String> {
    match solver {
        LinearSolver::Banded => BandedLu::factor(j).map(|lu| lu.solve(rhs)),
        LinearSolver::Gmres => linalg::gmres(j, rhs, 1e-12, 40, 40 * j.n + 400),
    }
}

/// Runs Newton from `x0` until `‖G‖∞ ≤ tol (1 + ‖x‖∞)`, then tries one extra
/// polishing step that is kept only if it lowers the residual.
pub fn solve(
    sys: &impl NonlinearSystem,
    x0: Vec<f64>,
    opts: &NewtonOptions,
) -> Result<NewtonOutcome, NewtonFailure> {
    let n = sys.size();
    let mut x = x0;
    let mut g = vec![0.0; n];
    sys.residual(&x, &mut g);
    let mut history = vec![inf_norm(&g)];
    let mut iterations = 0;
    let mut damping_events = 0;
    let converged = |g: &[f64], x: &[f64]| inf_norm(g) <= opts.tol * (1.0 + inf_norm(x));
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];

    while !converged(&g, &x) {
        if iterations >= opts.max_iter || !history.last().unwrap().is_finite() {
            return Err(NewtonFailure::Divergence(history));
        }
        let jac = sys.jacobian(&x);
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let dx = linear_solve(&jac, &neg_g, opts.solver).map_err(NewtonFailure::Linear)?;
        let g_norm = two_norm(&g);
        let mut lambda = 1.0;
        let mut found_positive = false;
        let mut accepted = false;
        for halving in 0..=MAX_HALVINGS {
            for i in 0..n {
                trial[i] = x[i] + lambda * dx[i];
            }
            if trial.iter().all(|&t| t >= opts.floor) {
                found_positive = true;
                sys.residual(&trial, &mut g_trial);
                if two_norm(&g_trial) <= (1.0 - ARMIJO * lambda) * g_norm {
                    accepted = true;
                    if halving > 0 {
                        damping_events += 1;
                    }
                    break;
                }
            }
            lambda *= 0.5;
        }
        iterations += 1;
        if !accepted {
            return Err(if found_positive {
                NewtonFailure::Divergence(history)
            } else {
                NewtonFailure::Positivity
            });
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_trial);
        history.push(inf_norm(&g));
    }

    let scale = 1.0 + inf_norm(&x);
    if inf_norm(&g) > 1e-13 * scale && iterations > 0 {
        let jac = sys.jacobian(&x);
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        if let Ok(dx) = linear_solve(&jac, &neg_g, opts.solver) {
            for i in 0..n {
                trial[i] = x[i] + dx[i];
            }
            if trial.iter().all(|&t| t >= opts.floor) {
                sys.residual(&trial, &mut g_trial);
                if inf_norm(&g_trial) < inf_norm(&g) {
                    std::mem::swap(&mut x, &mut trial);
                    std::mem::swap(&mut g, &mut g_trial);
                    iterations += 1;
                }
            }
        }
    }

    Ok(NewtonOutcome {
        residual: inf_norm(&g),
        x,
        iterations,
        damping_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CsrBuilder;

    /// Componentwise `x_i² = c_i`.
    struct Squares(Vec<f64>);

    impl NonlinearSystem for Squares {
        fn size(&self) -> usize {
            self.0.len()
        }
        fn residual(&self, x: &[f64], out: &mut [f64]) {
            for i in 0..x.len() {
                out[i] = x[i] * x[i] - self.0[i];
            }
        }
        fn jacobian(&self, x: &[f64]) -> Csr {
            let mut b = CsrBuilder::new(x.len());
            for (i, xi) in x.iter().enumerate() {
                b.add(i, i, 2.0 * xi);
            }
            b.build()
        }
    }

    fn opts() -> NewtonOptions {
        NewtonOptions {
            tol: 1e-12,
            max_iter: 50,
            floor: 1e-14,
            solver: LinearSolver::Banded,
        }
    }

    #[test]
    fn converges_to_positive_roots() {
        let sys = Squares(vec![4.0, 9.0, 0.25]);
        let out = solve(&sys, vec![1.0; 3], &opts()).unwrap();
        for (x, e) in out.x.iter().zip([2.0, 3.0, 0.5]) {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn damping_keeps_iterates_above_floor() {
        // A full step from x = 10 towards the root of x² = 1e-4 overshoots below zero.
        let sys = Squares(vec![1e-4]);
        let out = solve(&sys, vec![10.0], &opts()).unwrap();
        assert!((out.x[0] - 1e-2).abs() < 1e-12);
    }

    #[test]
    fn reports_divergence_with_history() {
        let sys = Squares(vec![-1.0]);
        match solve(&sys, vec![1.0], &opts()) {
            Err(NewtonFailure::Divergence(h)) => assert!(!h.is_empty()),
            Err(NewtonFailure::Positivity) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exact_initial_guess_takes_no_iterations() {
        let sys = Squares(vec![1.0, 4.0]);
        let out = solve(&sys, vec![1.0, 2.0], &opts()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.residual, 0.0);
    }
}
