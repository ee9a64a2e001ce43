//! Implicit finite-volume solver for two-species cross-diffusion systems with
//! power-law diffusion and competition, plus runtime monitors for the a-priori
//! estimates such systems satisfy.

pub mod config;
pub mod diagnostics;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod stepper;

pub use config::{InitSpec, RunConfig};
pub use diagnostics::{DiagnosticsConfig, DiagnosticsReport, MonitorKind, Status};
pub use grid::{Field, Grid};
pub use model::{validate_params, ParamSet, RegimeTag};
pub use stepper::{integrate, run, step, SchemeConfig, State, Trajectory};
