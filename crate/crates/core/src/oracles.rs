//! Reference solutions used to validate the stepper.

use crate::grid::{Field, Grid};
use crate::model::{power, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeState {
    pub u: f64,
    pub v: f64,
    pub time: f64,
}

/// Default number of RK4 steps.
pub const ODE_STEPS: usize = 1_000_000;

/// Solution at `T` of the diffusion-free system
/// `u' = u r₁(u, v)`, `v' = v r₂(u, v)` by classical RK4 with `T/10⁶` steps.
pub fn homogeneous_ode_reference(p: &ParamSet, u0: f64, v0: f64, t: f64) -> OdeState {
    homogeneous_ode_reference_with_steps(p, u0, v0, t, ODE_STEPS)
}

pub fn homogeneous_ode_reference_with_steps(p: &ParamSet, u0: f64, v0: f64, t: f64, steps: usize) -> OdeState {
    assert!(u0 >= 0.0 && v0 >= 0.0, "initial values must be nonnegative");
    let rhs = |u: f64, v: f64| {
        let (u, v) = (u.max(0.0), v.max(0.0));
        (
            u * (p.r_u - p.r_a * power(u, p.a) - p.r_b * power(v, p.b)),
            v * (p.r_v - p.r_c * power(v, p.c) - p.r_d * power(u, p.d)),
        )
    };
    let dt = t / steps as f64;
    let (mut u, mut v) = (u0, v0);
    for _ in 0..steps {
        let k1 = rhs(u, v);
        let k2 = rhs(u + 0.5 * dt * k1.0, v + 0.5 * dt * k1.1);
        let k3 = rhs(u + 0.5 * dt * k2.0, v + 0.5 * dt * k2.1);
        let k4 = rhs(u + dt * k3.0, v + dt * k3.1);
        u += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        v += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    OdeState {
        u: u.max(0.0),
        v: v.max(0.0),
        time: t,
    }
}

/// Discrete Neumann eigenvalue `(2/h²)(1 − cos(kπh/L))` of `−Δ_h` along axis 0.
pub fn discrete_eigenvalue(grid: &Grid, k_mode: usize) -> f64 {
    let h = grid.h(0);
    let l = grid.length(0);
    (2.0 / (h * h)) * (1.0 - (k_mode as f64 * std::f64::consts::PI * h / l).cos())
}

/// `cos(kπx/L) exp(−d_u λ_h T)`, the exact semi-discrete heat evolution of a
/// single Neumann mode along the first axis.
pub fn heat_mode_reference(grid: &Grid, d_u: f64, k_mode: usize, t: f64) -> Field {
    let l = grid.length(0);
    let decay = (-d_u * discrete_eigenvalue(grid, k_mode) * t).exp();
    let k = k_mode as f64 * std::f64::consts::PI;
    Field::from_fn(*grid, |x| (k * x[0] / l).cos() * decay)
}
