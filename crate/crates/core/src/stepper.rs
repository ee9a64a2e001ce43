//! Fully implicit Euler time stepping for the coupled system.
//!
//! Each step solves, cellwise,
//!
//! ```text
//! (u_k − u_{k−1})/τ − Δ_h[a₁(u_k, v_k) u_k] = r₁(u_k, v_k) u_k
//! (v_k − v_{k−1})/τ − Δ_h[a₂(v_k) v_k]      = r₂(u_k, v_k) v_k
//! ```
//!
//! for the stacked unknown with a damped Newton method. The residual is scaled
//! by τ, so it is measured in units of the state.

pub mod newton;

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::diagnostics::{self, DiagnosticsConfig, DiagnosticsReport};
use crate::grid::{self, CompensatedSum, Field, Grid};
use crate::linalg::{Csr, CsrBuilder};
use crate::model::{power, ModelError, ParamSet};
use newton::{LinearSolver, NewtonFailure, NewtonOptions, NonlinearSystem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("step size violation: tau * max(r_u, r_v) = {0} >= 1/2")]
    StepSizeViolation(f64),
    #[error("invalid scheme configuration: {0}")]
    InvalidConfig(String),
    #[error("Newton iteration diverged (residual history {residuals:?})")]
    NewtonDivergence { residuals: Vec<f64> },
    #[error("no strictly positive damped Newton iterate found")]
    PositivityLoss,
    #[error("previous state is not strictly positive (min {0})")]
    NonPositiveInput(f64),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("step {step}: {source}")]
pub struct RunError {
    pub step: usize,
    pub source: StepError,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub final_time: f64,
    pub steps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub positivity_floor: f64,
}

impl SchemeConfig {
    pub fn new(final_time: f64, steps: usize) -> Self {
        Self {
            final_time,
            steps,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            positivity_floor: 1e-14,
        }
    }

    pub fn tau(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    /// Checks `T > 0`, `N ≥ 1` and `τ max(r_u, r_v) < 1/2`.
    pub fn check(&self, p: &ParamSet) -> Result<(), StepError> {
        if !(self.final_time > 0.0 && self.final_time.is_finite()) || self.steps == 0 {
            return Err(StepError::InvalidConfig(format!(
                "T = {}, N = {}",
                self.final_time, self.steps
            )));
        }
        if !(self.newton_tol > 0.0) || !(self.positivity_floor > 0.0) {
            return Err(StepError::InvalidConfig("newton_tol and positivity_floor must be > 0".into()));
        }
        let product = self.tau() * p.max_growth_rate();
        if product >= 0.5 {
            return Err(StepError::StepSizeViolation(product));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Field,
    pub v: Field,
    pub time: f64,
}

impl State {
    pub fn new(u: Field, v: Field, time: f64) -> Self {
        assert_eq!(u.grid(), v.grid(), "u and v must live on the same grid");
        Self { u, v, time }
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    pub fn min(&self) -> f64 {
        self.u.min().min(self.v.min())
    }

    fn interleave(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.u.values().len());
        for (a, b) in self.u.values().iter().zip(self.v.values()) {
            x.push(*a);
            x.push(*b);
        }
        x
    }

    fn from_interleaved(grid: Grid, x: &[f64], time: f64) -> Result<Self, StepError> {
        let u: Vec<f64> = x.iter().step_by(2).copied().collect();
        let v: Vec<f64> = x.iter().skip(1).step_by(2).copied().collect();
        Ok(Self {
            u: field_or_divergence(grid, u)?,
            v: field_or_divergence(grid, v)?,
            time,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub tau: f64,
    pub params: ParamSet,
    pub grid: Grid,
}

impl Trajectory {
    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn final_time(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.time)
    }

    /// Time increment ending at state `k`. Equals τ for a full trajectory, a
    /// multiple of it for one rebuilt from snapshots.
    pub fn dt(&self, k: usize) -> f64 {
        self.states[k].time - self.states[k - 1].time
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub newton_iterations: usize,
    pub final_residual: f64,
    pub damping_events: usize,
    pub wall_time: Duration,
    pub fallback_used: bool,
}

/// Truncates and lifts initial data: `(min(u_in, N) + 1/N, v_in + 1/N)`.
pub fn initial_lift(u_in: &Field, v_in: &Field, n: usize) -> Result<State, StepError> {
    assert!(n > 0, "lift parameter must be positive");
    let n_f = n as f64;
    for f in [u_in, v_in] {
        if let Some(&neg) = f.values().iter().find(|&&x| x < 0.0) {
            return Err(ModelError::NegativeInput(neg).into());
        }
    }
    Ok(State::new(
        u_in.map(|x| x.min(n_f) + 1.0 / n_f),
        v_in.map(|x| x + 1.0 / n_f),
        0.0,
    ))
}

#[derive(Clone, Copy)]
enum Block<'a> {
    Coupled,
    /// Only `u` is unknown; `v` is frozen at the given values.
    U(&'a [f64]),
    /// Only `v` is unknown; `u` is frozen.
    V(&'a [f64]),
}

/// Residual `G = x − x_prev − τ (Δ_h w(x) + R(x))` of one implicit step.
struct StepSystem<'a> {
    grid: Grid,
    p: &'a ParamSet,
    prev_u: &'a [f64],
    prev_v: &'a [f64],
    tau: f64,
    floor: f64,
    block: Block<'a>,
}

impl StepSystem<'_> {
    fn cells(&self) -> usize {
        self.grid.len()
    }

    fn split<'x>(&'x self, x: &'x [f64], i: usize) -> (f64, f64) {
        match self.block {
            Block::Coupled => (x[2 * i], x[2 * i + 1]),
            Block::U(v) => (x[i], v[i]),
            Block::V(u) => (u[i], x[i]),
        }
    }

    /// Fluxes `w₁ = a₁ u`, `w₂ = a₂ v` at every cell.
    fn fluxes(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.cells();
        let mut w1 = vec![0.0; n];
        let mut w2 = vec![0.0; n];
        for i in 0..n {
            let (u, v) = self.split(x, i);
            w1[i] = self.p.a1(u, v) * u;
            w2[i] = self.p.a2(v) * v;
        }
        (w1, w2)
    }

    fn laplacian_rows(&self, i: usize, mut add: impl FnMut(usize, f64)) {
        for axis in 0..self.grid.dim() {
            let w = 1.0 / self.grid.h(axis).powi(2);
            let (lo, hi) = self.grid.neighbours(i, axis);
            add(lo, w);
            add(hi, w);
            add(i, -2.0 * w);
        }
    }

    fn floored_power(&self, x: f64, e: f64) -> f64 {
        power(x.max(self.floor), e)
    }
}

impl NonlinearSystem for StepSystem<'_> {
    fn size(&self) -> usize {
        match self.block {
            Block::Coupled => 2 * self.cells(),
            _ => self.cells(),
        }
    }

    fn residual(&self, x: &[f64], out: &mut [f64]) {
        let n = self.cells();
        let (w1, w2) = self.fluxes(x);
        let mut lap1 = vec![0.0; n];
        let mut lap2 = vec![0.0; n];
        if !matches!(self.block, Block::V(_)) {
            grid::apply_laplacian(&self.grid, &w1, &mut lap1);
        }
        if !matches!(self.block, Block::U(_)) {
            grid::apply_laplacian(&self.grid, &w2, &mut lap2);
        }
        for i in 0..n {
            let (u, v) = self.split(x, i);
            let gu = u - self.prev_u[i] - self.tau * (lap1[i] + self.p.r1(u, v) * u);
            let gv = v - self.prev_v[i] - self.tau * (lap2[i] + self.p.r2(u, v) * v);
            match self.block {
                Block::Coupled => {
                    out[2 * i] = gu;
                    out[2 * i + 1] = gv;
                }
                Block::U(_) => out[i] = gu,
                Block::V(_) => out[i] = gv,
            }
        }
    }

    fn jacobian(&self, x: &[f64]) -> Csr {
        let p = self.p;
        let n = self.cells();
        let tau = self.tau;
        let mut dw1du = vec![0.0; n];
        let mut dw1dv = vec![0.0; n];
        let mut dw2dv = vec![0.0; n];
        for i in 0..n {
            let (u, v) = self.split(x, i);
            dw1du[i] = p.d_u + p.d_alpha * (1.0 + p.alpha) * power(u, p.alpha) + p.d_beta * power(v, p.beta);
            dw1dv[i] = p.d_beta * p.beta * self.floored_power(v, p.beta - 1.0) * u;
            dw2dv[i] = p.d_v + p.d_gamma * (1.0 + p.gamma) * power(v, p.gamma);
        }
        let mut b = CsrBuilder::new(self.size());
        for i in 0..n {
            let (u, v) = self.split(x, i);
            let dr1du = p.r1(u, v) - p.r_a * p.a * self.floored_power(u, p.a - 1.0) * u;
            let dr1dv = -p.r_b * p.b * self.floored_power(v, p.b - 1.0) * u;
            let dr2dv = p.r2(u, v) - p.r_c * p.c * self.floored_power(v, p.c - 1.0) * v;
            let dr2du = -p.r_d * p.d * self.floored_power(u, p.d - 1.0) * v;
            match self.block {
                Block::Coupled => {
                    let (ru, rv) = (2 * i, 2 * i + 1);
                    b.add(ru, ru, 1.0 - tau * dr1du);
                    b.add(ru, rv, -tau * dr1dv);
                    b.add(rv, rv, 1.0 - tau * dr2dv);
                    b.add(rv, ru, -tau * dr2du);
                    self.laplacian_rows(i, |j, w| {
                        b.add(ru, 2 * j, -tau * w * dw1du[j]);
                        b.add(ru, 2 * j + 1, -tau * w * dw1dv[j]);
                        b.add(rv, 2 * j + 1, -tau * w * dw2dv[j]);
                    });
                }
                Block::U(_) => {
                    b.add(i, i, 1.0 - tau * dr1du);
                    self.laplacian_rows(i, |j, w| b.add(i, j, -tau * w * dw1du[j]));
                }
                Block::V(_) => {
                    b.add(i, i, 1.0 - tau * dr2dv);
                    self.laplacian_rows(i, |j, w| b.add(i, j, -tau * w * dw2dv[j]));
                }
            }
        }
        b.build()
    }
}

const MAX_STAGGERED_SWEEPS: usize = 50;

/// Advances `prev` by one implicit Euler step of length `cfg.tau()`.
///
/// Each component of `prev` must be strictly positive or identically zero. A
/// zero component is an exact solution of its own equation and stays zero.
pub fn step(prev: &State, p: &ParamSet, cfg: &SchemeConfig) -> Result<(State, StepReport), StepError> {
    p.validate()?;
    cfg.check(p)?;
    let started = Instant::now();
    let positive = |f: &Field| f.values().iter().all(|&x| x > 0.0);
    let zero = |f: &Field| f.values().iter().all(|&x| x == 0.0);
    let (u_zero, v_zero) = (zero(&prev.u), zero(&prev.v));
    if !(u_zero || positive(&prev.u)) || !(v_zero || positive(&prev.v)) {
        return Err(StepError::NonPositiveInput(prev.min()));
    }
    let grid = *prev.grid();
    let tau = cfg.tau();
    let time = prev.time + tau;
    let zeros = vec![0.0; grid.len()];
    let (block, x0) = match (u_zero, v_zero) {
        (false, false) => (Block::Coupled, prev.interleave()),
        (true, false) => (Block::V(&zeros), prev.v.values().to_vec()),
        (false, true) => (Block::U(&zeros), prev.u.values().to_vec()),
        (true, true) => {
            let report = StepReport {
                newton_iterations: 0,
                final_residual: 0.0,
                damping_events: 0,
                wall_time: started.elapsed(),
                fallback_used: false,
            };
            return Ok((State { time, ..prev.clone() }, report));
        }
    };
    let opts = NewtonOptions {
        tol: cfg.newton_tol,
        max_iter: cfg.newton_max_iter,
        floor: cfg.positivity_floor,
        solver: if grid.dim() == 1 {
            LinearSolver::Banded
        } else {
            LinearSolver::Gmres
        },
    };
    let system = StepSystem {
        grid,
        p,
        prev_u: prev.u.values(),
        prev_v: prev.v.values(),
        tau,
        floor: cfg.positivity_floor,
        block,
    };
    let (x, iterations, residual, damping, fallback) = match newton::solve(&system, x0, &opts) {
        Ok(out) => (out.x, out.iterations, out.residual, out.damping_events, false),
        Err(NewtonFailure::Divergence(history)) if matches!(block, Block::Coupled) => {
            let (x, it, res, damp) = staggered(&system, prev, &opts).map_err(|e| match e {
                StepError::NewtonDivergence { .. } => StepError::NewtonDivergence {
                    residuals: history.clone(),
                },
                other => other,
            })?;
            (x, it, res, damp, true)
        }
        Err(NewtonFailure::Divergence(history)) => return Err(StepError::NewtonDivergence { residuals: history }),
        Err(NewtonFailure::Positivity) => return Err(StepError::PositivityLoss),
        Err(NewtonFailure::Linear(msg)) => return Err(StepError::LinearSolve(msg)),
    };
    let next = match block {
        Block::Coupled => State::from_interleaved(grid, &x, time)?,
        Block::V(_) => State::new(Field::zeros(grid), field_or_divergence(grid, x)?, time),
        Block::U(_) => State::new(field_or_divergence(grid, x)?, Field::zeros(grid), time),
    };
    Ok((
        next,
        StepReport {
            newton_iterations: iterations,
            final_residual: residual,
            damping_events: damping,
            wall_time: started.elapsed(),
            fallback_used: fallback,
        },
    ))
}

fn field_or_divergence(grid: Grid, values: Vec<f64>) -> Result<Field, StepError> {
    Field::new(grid, values).map_err(|_| StepError::NewtonDivergence { residuals: vec![f64::NAN] })
}

/// Block Gauss–Seidel: alternately solve the v equation with u frozen and the
/// u equation with v frozen until the coupled residual meets the tolerance.
fn staggered(
    coupled: &StepSystem<'_>,
    prev: &State,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, usize, f64, usize), StepError> {
    let mut u = prev.u.values().to_vec();
    let mut v = prev.v.values().to_vec();
    let mut iterations = 0;
    let mut damping = 0;
    let mut history = Vec::new();
    let sub_opts = *opts;
    let lift = |e: NewtonFailure| match e {
        NewtonFailure::Divergence(h) => StepError::NewtonDivergence { residuals: h },
        NewtonFailure::Positivity => StepError::PositivityLoss,
        NewtonFailure::Linear(m) => StepError::LinearSolve(m),
    };
    let mut g = vec![0.0; coupled.size()];
    for _ in 0..MAX_STAGGERED_SWEEPS {
        let v_sys = StepSystem {
            block: Block::V(&u),
            ..*coupled
        };
        let out = newton::solve(&v_sys, v.clone(), &sub_opts).map_err(lift)?;
        v = out.x;
        iterations += out.iterations;
        damping += out.damping_events;
        let u_sys = StepSystem {
            block: Block::U(&v),
            ..*coupled
        };
        let out = newton::solve(&u_sys, u.clone(), &sub_opts).map_err(lift)?;
        u = out.x;
        iterations += out.iterations;
        damping += out.damping_events;

        let x: Vec<f64> = u.iter().zip(&v).flat_map(|(a, b)| [*a, *b]).collect();
        coupled.residual(&x, &mut g);
        let res = newton::inf_norm(&g);
        history.push(res);
        if res <= opts.tol * (1.0 + newton::inf_norm(&x)) {
            return Ok((x, iterations, res, damping));
        }
    }
    Err(StepError::NewtonDivergence { residuals: history })
}

/// Runs `cfg.steps` implicit steps from `initial` and returns every state.
pub fn integrate(
    initial: State,
    p: &ParamSet,
    cfg: &SchemeConfig,
) -> Result<(Trajectory, Vec<StepReport>), RunError> {
    let at = |step| move |source| RunError { step, source };
    p.validate().map_err(|e| at(0)(StepError::Model(e)))?;
    cfg.check(p).map_err(at(0))?;
    let grid = *initial.grid();
    let tau = cfg.tau();
    let mut states = Vec::with_capacity(cfg.steps + 1);
    let mut reports = Vec::with_capacity(cfg.steps);
    let mut current = State {
        time: 0.0,
        ..initial
    };
    for k in 1..=cfg.steps {
        let (mut next, report) = step(&current, p, cfg).map_err(at(k))?;
        next.time = k as f64 * tau;
        states.push(std::mem::replace(&mut current, next));
        reports.push(report);
    }
    states.push(current);
    Ok((
        Trajectory {
            states,
            tau,
            params: *p,
            grid,
        },
        reports,
    ))
}

/// [`integrate`] followed by the diagnostics selected in `diag`.
pub fn run(
    initial: State,
    p: &ParamSet,
    cfg: &SchemeConfig,
    diag: &DiagnosticsConfig,
) -> Result<(Trajectory, DiagnosticsReport), RunError> {
    let (traj, _) = integrate(initial, p, cfg)?;
    let report = diagnostics::evaluate(&traj, diag);
    Ok((traj, report))
}

/// A smooth test function of time and space.
pub trait TestFunction: Sync {
    fn value(&self, t: f64, x: [f64; 2]) -> f64;
    fn gradient(&self, t: f64, x: [f64; 2]) -> [f64; 2];
}

/// Test function given by a pair of closures.
pub struct FnTestFunction<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> TestFunction for FnTestFunction<F, G>
where
    F: Fn(f64, [f64; 2]) -> f64 + Sync,
    G: Fn(f64, [f64; 2]) -> [f64; 2] + Sync,
{
    fn value(&self, t: f64, x: [f64; 2]) -> f64 {
        (self.value)(t, x)
    }
    fn gradient(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        (self.gradient)(t, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equation {
    U,
    V,
}

/// Discrete weak-form residual of one equation against `ψ`:
///
/// ```text
/// −Σ_k ∫ u_k (ψ_k − ψ_{k−1}) − ∫ ψ_0 u_0 + Σ_k dt_k ∫ ∇ψ_k · ∇_h w_k − Σ_k dt_k ∫ ψ_k R_k u_k
/// ```
///
/// where `w` is the diffusive flux and gradients of `w` are face differences
/// paired with `∇ψ` at face centres. `ψ` should vanish at the final time.
pub fn weak_residual(traj: &Trajectory, psi: &dyn TestFunction, which: Equation) -> f64 {
    let g = traj.grid;
    let p = &traj.params;
    let vol = g.cell_volume();
    let cells = g.len();
    let psi_at = |k: usize| -> Vec<f64> {
        let t = traj.states[k].time;
        (0..cells).map(|i| psi.value(t, g.center(i))).collect()
    };
    let component = |s: &State| match which {
        Equation::U => s.u.values().to_vec(),
        Equation::V => s.v.values().to_vec(),
    };

    let mut total = CompensatedSum::new();
    let mut psi_prev = psi_at(0);
    let z0 = component(&traj.states[0]);
    for i in 0..cells {
        total.add(-psi_prev[i] * z0[i] * vol);
    }
    for k in 1..traj.states.len() {
        let s = &traj.states[k];
        let dt = traj.dt(k);
        let psi_k = psi_at(k);
        let (u, v) = (s.u.values(), s.v.values());
        let z = component(s);
        for i in 0..cells {
            total.add(-z[i] * (psi_k[i] - psi_prev[i]) * vol);
            let reaction = match which {
                Equation::U => p.r1(u[i], v[i]) * u[i],
                Equation::V => p.r2(u[i], v[i]) * v[i],
            };
            total.add(-dt * psi_k[i] * reaction * vol);
        }
        let w: Vec<f64> = (0..cells)
            .map(|i| match which {
                Equation::U => p.a1(u[i], v[i]) * u[i],
                Equation::V => p.a2(v[i]) * v[i],
            })
            .collect();
        for face in g.faces() {
            let grad_psi = psi.gradient(s.time, g.face_center(&face))[face.axis];
            let grad_w = (w[face.right] - w[face.left]) / g.h(face.axis);
            total.add(dt * grad_psi * grad_w * vol);
        }
        psi_prev = psi_k;
    }
    total.value()
}
