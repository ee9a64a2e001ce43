//! A-priori estimate monitors evaluated along a trajectory.
//!
//! Every monitor is a pure function of the [`Trajectory`]. Monitors with a
//! computable bound are asserted; the rest are reported, with monotone
//! accumulation checked where the quantity is a sum of nonnegative terms.
//!
//! Rows use one sign convention throughout: `margin > 0` means the bound is
//! violated by that amount.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;

use crate::grid::{ksum, Field, Grid};
use crate::linalg::{self, BandedLu, CsrBuilder};
use crate::model::{power, ParamSet};
use crate::stepper::{State, Trajectory};

const FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MonitorKind {
    MaxPrinciple,
    Mass,
    Duality,
    EntropyV,
    EntropyU,
    LogEntropy,
    DualProbe,
    Regularity,
}

impl MonitorKind {
    pub const ALL: [MonitorKind; 8] = [
        MonitorKind::MaxPrinciple,
        MonitorKind::Mass,
        MonitorKind::Duality,
        MonitorKind::EntropyV,
        MonitorKind::EntropyU,
        MonitorKind::LogEntropy,
        MonitorKind::DualProbe,
        MonitorKind::Regularity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MonitorKind::MaxPrinciple => "max_v",
            MonitorKind::Mass => "mass",
            MonitorKind::Duality => "duality",
            MonitorKind::EntropyV => "entropy_v",
            MonitorKind::EntropyU => "entropy_u",
            MonitorKind::LogEntropy => "log_entropy",
            MonitorKind::DualProbe => "dual_probe",
            MonitorKind::Regularity => "regularity",
        }
    }
}

impl fmt::Display for MonitorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MonitorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MonitorKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| format!("unknown monitor `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
    Reported,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRow {
    pub step: usize,
    pub time: f64,
    pub value: f64,
    pub bound: Option<f64>,
    pub margin: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorSeries {
    pub name: String,
    pub status: Status,
    pub rows: Vec<MonitorRow>,
    pub note: Option<String>,
}

impl MonitorSeries {
    fn not_applicable(name: &str, note: &str) -> Self {
        Self {
            name: name.to_string(),
            status: Status::NotApplicable,
            rows: Vec::new(),
            note: Some(note.to_string()),
        }
    }

    /// Series whose rows carry their own pass flags.
    fn asserted(name: String, rows: Vec<MonitorRow>, asserted: bool, note: Option<String>) -> Self {
        let status = if !asserted {
            Status::Reported
        } else if rows.iter().all(|r| r.pass != Some(false)) {
            Status::Pass
        } else {
            Status::Fail
        };
        Self {
            name,
            status,
            rows,
            note,
        }
    }

    /// Cumulative series: each row passes iff it is finite and not below the previous one.
    fn cumulative(name: String, points: Vec<(usize, f64, f64)>, asserted: bool, note: Option<String>) -> Self {
        let mut rows = Vec::with_capacity(points.len());
        let mut previous = f64::NEG_INFINITY;
        for (step, time, value) in points {
            let ok = value.is_finite() && value >= previous;
            previous = value;
            rows.push(MonitorRow {
                step,
                time,
                value,
                bound: None,
                margin: None,
                pass: Some(ok),
            });
        }
        Self::asserted(name, rows, asserted, note)
    }

    /// Largest margin over all rows, if any row has one.
    pub fn worst_margin(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.margin).reduce(f64::max)
    }

    pub fn last_value(&self) -> Option<f64> {
        self.rows.last().map(|r| r.value)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,time,value,bound,margin,pass")?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step,
                r.time,
                r.value,
                opt(r.bound),
                opt(r.margin),
                r.pass.map(|p| p.to_string()).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

/// Forcing for the dual probe; every preset is nonpositive.
#[derive(Debug, Clone, PartialEq)]
pub enum Forcing {
    /// `f ≡ −c` with `c ≥ 0`.
    Constant(f64),
    /// `−(c₀ + Σ a_m cos(mπx/L) cos(mπy/L) cos(m t))` with random `a_m`, `c₀ = Σ|a_m| + 0.1`.
    RandomSmooth { seed: u64 },
}

impl Forcing {
    pub fn evaluator(&self, grid: &Grid) -> Box<dyn Fn(f64, [f64; 2]) -> f64 + Send + Sync> {
        match *self {
            Forcing::Constant(c) => Box::new(move |_, _| -c.abs()),
            Forcing::RandomSmooth { seed } => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let amps: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let c0 = amps.iter().map(|a| a.abs()).sum::<f64>() + 0.1;
                let (lx, ly, dim) = (grid.length(0), grid.length(1), grid.dim());
                Box::new(move |t, x| {
                    let mut s = c0;
                    for (m, a) in amps.iter().enumerate() {
                        let k = (m + 1) as f64 * std::f64::consts::PI;
                        let mut mode = (k * x[0] / lx).cos() * ((m + 1) as f64 * t).cos();
                        if dim == 2 {
                            mode *= (k * x[1] / ly).cos();
                        }
                        s += a * mode;
                    }
                    -s
                })
            }
        }
    }
}

impl FromStr for Forcing {
    type Err = String;

    /// `constant:<c>` or `random:<seed>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s.trim().split_once(':').ok_or_else(|| format!("bad forcing `{s}`"))?;
        match kind {
            "constant" => arg
                .parse::<f64>()
                .map(Forcing::Constant)
                .map_err(|_| format!("bad forcing value `{arg}`")),
            "random" => arg
                .parse::<u64>()
                .map(|seed| Forcing::RandomSmooth { seed })
                .map_err(|_| format!("bad forcing seed `{arg}`")),
            _ => Err(format!("unknown forcing `{kind}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    /// Exponents `p > 0`, `p ≠ 1`. `p = 0` (the logarithmic entropy) is always checked.
    pub entropy_exponents: Vec<f64>,
    pub include_log_entropies: bool,
    pub dual_probe: Option<Forcing>,
    /// Lebesgue exponent of the regularity norms.
    pub regularity_q: f64,
    pub monitors: BTreeSet<MonitorKind>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            entropy_exponents: vec![0.5, 2.0],
            include_log_entropies: true,
            dual_probe: None,
            regularity_q: 2.0,
            monitors: MonitorKind::ALL.into_iter().collect(),
        }
    }
}

impl DiagnosticsConfig {
    /// Default exponents `{0.5, 2, β}`; `β` is dropped when it equals 1.
    pub fn for_params(p: &ParamSet) -> Self {
        let mut cfg = Self::default();
        if p.beta != 1.0 && !cfg.entropy_exponents.contains(&p.beta) {
            cfg.entropy_exponents.push(p.beta);
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), String> {
        for &p in &self.entropy_exponents {
            if !(p > 0.0 && p.is_finite()) || p == 1.0 {
                return Err(format!("entropy exponent {p} must be > 0 and != 1"));
            }
        }
        if !(self.regularity_q >= 1.0 && self.regularity_q.is_finite()) {
            return Err(format!("regularity exponent q = {} must be >= 1", self.regularity_q));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub series: BTreeMap<String, MonitorSeries>,
    pub scalars: BTreeMap<String, f64>,
    /// True when the trajectory has time increments larger than τ.
    pub snapshot_resolution: bool,
}

#[derive(Debug, Serialize)]
struct SummaryEntry<'a> {
    status: Status,
    worst_margin: Option<f64>,
    final_value: Option<f64>,
    note: Option<&'a str>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    all_pass: bool,
    snapshot_resolution: bool,
    monitors: BTreeMap<&'a str, SummaryEntry<'a>>,
    scalars: &'a BTreeMap<String, f64>,
}

impl DiagnosticsReport {
    pub fn all_pass(&self) -> bool {
        self.series.values().all(|s| s.status != Status::Fail)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.series
            .values()
            .filter(|s| s.status == Status::Fail)
            .map(|s| s.name.as_str())
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&MonitorSeries> {
        self.series.get(name)
    }

    pub fn summary_json(&self) -> String {
        let monitors = self
            .series
            .iter()
            .map(|(k, s)| {
                (
                    k.as_str(),
                    SummaryEntry {
                        status: s.status,
                        worst_margin: s.worst_margin(),
                        final_value: s.last_value(),
                        note: s.note.as_deref(),
                    },
                )
            })
            .collect();
        let summary = Summary {
            all_pass: self.all_pass(),
            snapshot_resolution: self.snapshot_resolution,
            monitors,
            scalars: &self.scalars,
        };
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    }

    /// Writes `<dir>/monitors/<name>.csv` for every series and `<dir>/summary.json`.
    /// Returns the written paths relative to `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        let monitor_dir = dir.join("monitors");
        std::fs::create_dir_all(&monitor_dir)?;
        let mut written = Vec::new();
        for s in self.series.values() {
            let rel = PathBuf::from("monitors").join(format!("{}.csv", s.name));
            let file = std::fs::File::create(dir.join(&rel))?;
            s.write_csv(std::io::BufWriter::new(file))?;
            written.push(rel);
        }
        std::fs::write(dir.join("summary.json"), self.summary_json() + "\n")?;
        written.push(PathBuf::from("summary.json"));
        Ok(written)
    }
}

/// `C(a, r_u, r_a) = sup_{z≥0} (r_u z − (r_a/2) z^{1+a})`, attained at
/// `z* = (2 r_u / (r_a (1+a)))^{1/a}`. Infinite when `r_a = 0 < r_u`.
pub fn mass_constant(a: f64, r_u: f64, r_a: f64) -> f64 {
    if r_u <= 0.0 {
        return 0.0;
    }
    if r_a <= 0.0 {
        return f64::INFINITY;
    }
    let z = power(2.0 * r_u / (r_a * (1.0 + a)), 1.0 / a);
    r_u * z - 0.5 * r_a * power(z, 1.0 + a)
}

/// `sup_{z≥0} 2z (r_u − r_a z^a)`, attained at `z* = (r_u / (r_a (1+a)))^{1/a}`.
pub fn entropy_u_constant(r_u: f64, r_a: f64, a: f64) -> f64 {
    if r_u <= 0.0 {
        return 0.0;
    }
    if r_a <= 0.0 {
        return f64::INFINITY;
    }
    let z = power(r_u / (r_a * (1.0 + a)), 1.0 / a);
    2.0 * z * (r_u - r_a * power(z, a))
}

/// `φ_p(z) = z − z^p/p − 1 + 1/p`, and `φ₀(z) = z − log z` for `p = 0`.
pub fn phi_p(p: f64, z: f64) -> f64 {
    let z = z.max(FLOOR);
    if p == 0.0 {
        z - z.ln()
    } else {
        z - power(z, p) / p - 1.0 + 1.0 / p
    }
}

pub fn phi_p_prime(p: f64, z: f64) -> f64 {
    let z = z.max(FLOOR);
    if p == 0.0 {
        1.0 - 1.0 / z
    } else {
        1.0 - power(z, p - 1.0)
    }
}

pub fn phi_p_second(p: f64, z: f64) -> f64 {
    let z = z.max(FLOOR);
    if p == 0.0 {
        1.0 / (z * z)
    } else {
        (1.0 - p) * power(z, p - 2.0)
    }
}

/// `φ(z) = 2z − log(1 + z)`.
pub fn phi_u(z: f64) -> f64 {
    2.0 * z - z.ln_1p()
}

pub fn phi_u_prime(z: f64) -> f64 {
    2.0 - 1.0 / (1.0 + z)
}

pub fn phi_u_second(z: f64) -> f64 {
    1.0 / ((1.0 + z) * (1.0 + z))
}

/// Constant `K` of the dual estimate.
pub fn probe_constant(r_u: f64, r_a: f64, a: f64) -> f64 {
    if r_a <= 0.0 {
        return f64::INFINITY;
    }
    let ratio = r_u / r_a;
    if r_u < r_a {
        r_u * power(ratio, 1.0 / a)
    } else {
        r_u * power(ratio, 2.0 / a)
    }
}

/// Per-step inequality tolerance `1e−6 + 10 h²`.
pub fn entropy_tolerance(grid: &Grid) -> f64 {
    1e-6 + 10.0 * grid.h_max().powi(2)
}

fn integral(grid: &Grid, values: impl Iterator<Item = f64>) -> f64 {
    ksum(values) * grid.cell_volume()
}

/// `Σ_faces g(face) · |cell|`, where `g` sees the face and its spacing.
fn face_integral(grid: &Grid, g: impl Fn(usize, usize, f64) -> f64) -> f64 {
    ksum(grid.faces().map(|f| g(f.left, f.right, grid.h(f.axis)))) * grid.cell_volume()
}

/// Discrete `∫|∇ F(z)|²`.
fn grad_sq_of(grid: &Grid, z: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let fz: Vec<f64> = z.iter().map(|&x| f(x)).collect();
    face_integral(grid, |l, r, h| ((fz[r] - fz[l]) / h).powi(2))
}

/// `Σ_faces (φ'(z_r) − φ'(z_l))(z_r − z_l)/h² · |cell|`, the exact discrete
/// counterpart of `∫ φ''(z)|∇z|²`.
fn secant_dissipation(grid: &Grid, z: &[f64], dphi: impl Fn(f64) -> f64) -> f64 {
    let d: Vec<f64> = z.iter().map(|&x| dphi(x)).collect();
    face_integral(grid, |l, r, h| (d[r] - d[l]) * (z[r] - z[l]) / (h * h))
}

struct Ctx<'a> {
    traj: &'a Trajectory,
    grid: Grid,
    p: &'a ParamSet,
    uniform: bool,
}

impl Ctx<'_> {
    fn states(&self) -> &[State] {
        &self.traj.states
    }

    fn time(&self, k: usize) -> f64 {
        self.traj.states[k].time
    }

    fn dt(&self, k: usize) -> f64 {
        self.traj.dt(k)
    }

    fn snapshot_note(&self) -> Option<String> {
        (!self.uniform).then(|| "snapshot resolution: step inequality not asserted".to_string())
    }
}

/// Evaluates every monitor enabled in `cfg`. Monitors run concurrently.
pub fn evaluate(traj: &Trajectory, cfg: &DiagnosticsConfig) -> DiagnosticsReport {
    let uniform = (1..traj.states.len()).all(|k| (traj.dt(k) - traj.tau).abs() <= 1e-9 * traj.tau);
    let ctx = Ctx {
        traj,
        grid: traj.grid,
        p: &traj.params,
        uniform,
    };
    let kinds: Vec<MonitorKind> = cfg.monitors.iter().copied().collect();
    let parts: Vec<(Vec<MonitorSeries>, Vec<(String, f64)>)> = kinds
        .par_iter()
        .map(|kind| match kind {
            MonitorKind::MaxPrinciple => (vec![max_principle(&ctx)], vec![]),
            MonitorKind::Mass => (vec![mass_estimate(&ctx)], vec![]),
            MonitorKind::Duality => duality(&ctx),
            MonitorKind::EntropyV => (entropy_v(&ctx, &cfg.entropy_exponents), vec![]),
            MonitorKind::EntropyU => (vec![entropy_u(&ctx)], vec![]),
            MonitorKind::LogEntropy if cfg.include_log_entropies => (log_entropies(&ctx), vec![]),
            MonitorKind::LogEntropy => (vec![], vec![]),
            MonitorKind::DualProbe => match &cfg.dual_probe {
                Some(forcing) => dual_probe(&ctx, forcing),
                None => (vec![], vec![]),
            },
            MonitorKind::Regularity => regularity(&ctx, cfg.regularity_q),
        })
        .collect();
    let mut report = DiagnosticsReport {
        series: BTreeMap::new(),
        scalars: BTreeMap::new(),
        snapshot_resolution: !uniform,
    };
    for (series, scalars) in parts {
        for s in series {
            report.series.insert(s.name.clone(), s);
        }
        report.scalars.extend(scalars);
    }
    report
}

/// `max v_k ≤ max(max v_0, (r_v/r_c)^{1/c})`.
pub fn check_max_principle(traj: &Trajectory) -> MonitorSeries {
    max_principle(&Ctx {
        traj,
        grid: traj.grid,
        p: &traj.params,
        uniform: true,
    })
}

fn max_principle(ctx: &Ctx) -> MonitorSeries {
    let Some(cap) = ctx.p.v_cap() else {
        return MonitorSeries::not_applicable("max_v", "r_c = 0: no equilibrium cap");
    };
    let bound = ctx.states()[0].v.max().max(cap);
    let tol = 1e-12 * (1.0 + bound);
    let rows = ctx
        .states()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let value = s.v.max();
            MonitorRow {
                step: k,
                time: s.time,
                value,
                bound: Some(bound),
                margin: Some(value - bound),
                pass: Some(value - bound <= tol),
            }
        })
        .collect();
    MonitorSeries::asserted("max_v".into(), rows, true, None)
}

/// `∫u_k + (r_a/2) Σ_{j≤k} τ ∫u_j^{1+a} ≤ ∫u_0 + |Ω| t_k C(a, r_u, r_a)`.
pub fn check_mass_estimate(traj: &Trajectory) -> MonitorSeries {
    mass_estimate(&Ctx {
        traj,
        grid: traj.grid,
        p: &traj.params,
        uniform: true,
    })
}

fn mass_estimate(ctx: &Ctx) -> MonitorSeries {
    let p = ctx.p;
    if p.r_a <= 0.0 && p.r_u > 0.0 {
        return MonitorSeries::not_applicable("mass", "r_a = 0: constant is infinite");
    }
    let g = &ctx.grid;
    let c = mass_constant(p.a, p.r_u, p.r_a);
    let mass0 = integral(g, ctx.states()[0].u.values().iter().copied());
    let mut accumulated = 0.0;
    let mut rows = Vec::with_capacity(ctx.states().len());
    for (k, s) in ctx.states().iter().enumerate() {
        if k > 0 {
            accumulated += ctx.dt(k) * integral(g, s.u.values().iter().map(|&u| power(u, 1.0 + p.a)));
        }
        let lhs = integral(g, s.u.values().iter().copied()) + 0.5 * p.r_a * accumulated;
        let rhs = mass0 + g.volume() * s.time * c;
        let tol = 1e-8 + 10.0 * (ctx.traj.tau + g.h_max().powi(2)) * rhs.abs();
        rows.push(MonitorRow {
            step: k,
            time: s.time,
            value: lhs,
            bound: Some(rhs),
            margin: Some(lhs - rhs),
            pass: Some(lhs - rhs <= tol),
        });
    }
    MonitorSeries::asserted("mass".into(), rows, true, None)
}

/// `Σ_{k=1}^N τ ∫ (1 + u_k^α) u_k^2`.
pub fn duality_functional(traj: &Trajectory) -> f64 {
    duality_with_exponent(traj, 2.0).last().map_or(0.0, |x| x.2)
}

fn duality_with_exponent(traj: &Trajectory, e: f64) -> Vec<(usize, f64, f64)> {
    let g = &traj.grid;
    let alpha = traj.params.alpha;
    let mut total = 0.0;
    let mut out = vec![(0, traj.states[0].time, 0.0)];
    for k in 1..traj.states.len() {
        let s = &traj.states[k];
        total += traj.dt(k) * integral(g, s.u.values().iter().map(|&u| (1.0 + power(u, alpha)) * power(u, e)));
        out.push((k, s.time, total));
    }
    out
}

fn duality(ctx: &Ctx) -> (Vec<MonitorSeries>, Vec<(String, f64)>) {
    let partial = duality_with_exponent(ctx.traj, 2.0);
    let mut scalars = vec![("duality".to_string(), partial.last().unwrap().2)];
    for nu in [0.05, 0.1] {
        let v = duality_with_exponent(ctx.traj, 2.0 + nu).last().unwrap().2;
        scalars.push((format!("duality_nu{nu}"), v));
    }
    (
        vec![MonitorSeries::cumulative(
            "duality".into(),
            partial,
            true,
            Some("no absolute bound: constant is not explicit".into()),
        )],
        scalars,
    )
}

fn exponent_label(p: f64) -> String {
    format!("p{p}")
}

/// Per-step check of the `v` entropy inequality for `p ∈ [0, 1)`:
/// `∫[φ_p(v_k) − φ_p(v_{k−1})] + τ d_v ∫φ_p''(v_k)|∇v_k|² − τ∫φ_p'(v_k) v_k r₂ ≤ 0`.
pub fn entropy_v_step_check(traj: &Trajectory, p: f64) -> MonitorSeries {
    let ctx = Ctx {
        traj,
        grid: traj.grid,
        p: &traj.params,
        uniform: true,
    };
    entropy_v_series(&ctx, p)
}

fn entropy_v_series(ctx: &Ctx, exponent: f64) -> MonitorSeries {
    let g = &ctx.grid;
    let p = ctx.p;
    let name = format!("entropy_v_{}", exponent_label(exponent));
    let tol = entropy_tolerance(g);
    let functional = |s: &State| integral(g, s.v.values().iter().map(|&v| phi_p(exponent, v)));
    if exponent > 1.0 {
        let points = ctx
            .states()
            .iter()
            .enumerate()
            .map(|(k, s)| MonitorRow {
                step: k,
                time: s.time,
                value: functional(s),
                bound: None,
                margin: None,
                pass: None,
            })
            .collect();
        return MonitorSeries::asserted(name, points, false, Some("p > 1: functional reported".into()));
    }
    let mut rows = Vec::with_capacity(ctx.states().len());
    let mut previous = functional(&ctx.states()[0]);
    for k in 1..ctx.states().len() {
        let s = &ctx.states()[k];
        let dt = ctx.dt(k);
        let current = functional(s);
        let (u, v) = (s.u.values(), s.v.values());
        let dissipation = p.d_v * secant_dissipation(g, v, |z| phi_p_prime(exponent, z));
        let reaction = integral(
            g,
            (0..v.len()).map(|i| phi_p_prime(exponent, v[i]) * v[i] * p.r2(u[i], v[i])),
        );
        let value = current - previous + dt * dissipation - dt * reaction;
        rows.push(MonitorRow {
            step: k,
            time: s.time,
            value,
            bound: Some(0.0),
            margin: Some(value),
            pass: Some(value <= tol),
        });
        previous = current;
    }
    MonitorSeries::asserted(name, rows, ctx.uniform, ctx.snapshot_note())
}

/// `Σ_k τ ∫|∇_h v_k^{p/2}|²` as a cumulative series.
pub fn entropy_v_cumulative(traj: &Trajectory, p: f64) -> f64 {
    entropy_v_cumulative_points(traj, p).last().map_or(0.0, |x| x.2)
}

fn entropy_v_cumulative_points(traj: &Trajectory, p: f64) -> Vec<(usize, f64, f64)> {
    let g = &traj.grid;
    let mut total = 0.0;
    let mut out = vec![(0, traj.states[0].time, 0.0)];
    for k in 1..traj.states.len() {
        let s = &traj.states[k];
        total += traj.dt(k) * grad_sq_of(g, s.v.values(), |z| power(z, 0.5 * p));
        out.push((k, s.time, total));
    }
    out
}

fn entropy_v(ctx: &Ctx, exponents: &[f64]) -> Vec<MonitorSeries> {
    let mut out = vec![entropy_v_series(ctx, 0.0)];
    for &p in exponents {
        out.push(entropy_v_series(ctx, p));
        out.push(MonitorSeries::cumulative(
            format!("entropy_v_grad_{}", exponent_label(p)),
            entropy_v_cumulative_points(ctx.traj, p),
            true,
            None,
        ));
    }
    out
}

/// Per-step check of the `u` entropy inequality with `φ(z) = 2z − log(1+z)`.
pub fn entropy_u_step_check(traj: &Trajectory) -> MonitorSeries {
    entropy_u(&Ctx {
        traj,
        grid: traj.grid,
        p: &traj.params,
        uniform: true,
    })
}

fn entropy_u(ctx: &Ctx) -> MonitorSeries {
    let g = &ctx.grid;
    let p = ctx.p;
    if p.r_a <= 0.0 && p.r_u > 0.0 {
        return MonitorSeries::not_applicable("entropy_u", "r_a = 0: constant is infinite");
    }
    let c = entropy_u_constant(p.r_u, p.r_a, p.a);
    let tol = entropy_tolerance(g);
    let functional = |s: &State| integral(g, s.u.values().iter().map(|&u| phi_u(u)));
    let mut rows = Vec::with_capacity(ctx.states().len());
    let mut previous = functional(&ctx.states()[0]);
    for k in 1..ctx.states().len() {
        let s = &ctx.states()[k];
        let dt = ctx.dt(k);
        let current = functional(s);
        let (u, v) = (s.u.values(), s.v.values());
        let dphi: Vec<f64> = u.iter().map(|&z| phi_u_prime(z)).collect();
        let dissipation = face_integral(g, |l, r, h| {
            let coef = p.d_u
                + p.d_alpha * (1.0 + p.alpha) * 0.5 * (power(u[l], p.alpha) + power(u[r], p.alpha))
                + 0.25 * p.d_beta * (power(v[l], p.beta) + power(v[r], p.beta));
            coef * (dphi[r] - dphi[l]) * (u[r] - u[l]) / (h * h)
        });
        let value = current - previous + dt * dissipation;
        let bound = 2.0 * dt * p.d_beta * grad_sq_of(g, v, |z| power(z, 0.5 * p.beta)) + dt * g.volume() * c;
        rows.push(MonitorRow {
            step: k,
            time: s.time,
            value,
            bound: Some(bound),
            margin: Some(value - bound),
            pass: Some(value - bound <= tol),
        });
        previous = current;
    }
    MonitorSeries::asserted("entropy_u".into(), rows, ctx.uniform, ctx.snapshot_note())
}

fn log_entropies(ctx: &Ctx) -> Vec<MonitorSeries> {
    let g = &ctx.grid;
    let mut out = Vec::new();
    for (label, pick) in [("u", 0usize), ("v", 1usize)] {
        let mut sup = f64::NEG_INFINITY;
        let mut sup_points = Vec::new();
        let mut grad_points = vec![(0, ctx.time(0), 0.0)];
        let mut total = 0.0;
        for (k, s) in ctx.states().iter().enumerate() {
            let z = if pick == 0 { s.u.values() } else { s.v.values() };
            sup = sup.max(integral(g, z.iter().map(|&x| x.max(FLOOR).ln().abs())));
            sup_points.push((k, s.time, sup));
            if k > 0 {
                total += ctx.dt(k) * grad_sq_of(g, z, |x| x.max(FLOOR).ln());
                grad_points.push((k, s.time, total));
            }
        }
        out.push(MonitorSeries::cumulative(format!("log_entropy_{label}"), sup_points, true, None));
        out.push(MonitorSeries::cumulative(format!("log_entropy_grad_{label}"), grad_points, true, None));
    }
    out
}

/// Solves `∂_t w + M Δ_h w = f`, `w(T) = 0`, backwards by implicit steps
/// `w^{k−1} − dt_k M_k Δ_h w^{k−1} = w^k − dt_k f(t_k)`.
///
/// `times` holds `t_0 .. t_N`; `mobility[k−1]` is `M_k` on the cells.
pub fn solve_backward_dual(
    grid: &Grid,
    times: &[f64],
    mobility: &[Vec<f64>],
    f: &dyn Fn(f64, [f64; 2]) -> f64,
) -> Result<Vec<Field>, String> {
    let steps = times.len() - 1;
    assert_eq!(mobility.len(), steps, "one mobility field per step");
    let n = grid.len();
    let mut w = vec![Field::zeros(*grid); steps + 1];
    for k in (1..=steps).rev() {
        let dt = times[k] - times[k - 1];
        let m = &mobility[k - 1];
        let mut b = CsrBuilder::new(n);
        for i in 0..n {
            b.add(i, i, 1.0);
            for axis in 0..grid.dim() {
                let c = dt * m[i] / grid.h(axis).powi(2);
                let (lo, hi) = grid.neighbours(i, axis);
                b.add(i, lo, -c);
                b.add(i, hi, -c);
                b.add(i, i, 2.0 * c);
            }
        }
        let a = b.build();
        let rhs: Vec<f64> = (0..n)
            .map(|i| w[k].values()[i] - dt * f(times[k], grid.center(i)))
            .collect();
        let sol = if grid.dim() == 1 {
            BandedLu::factor(&a)?.solve(&rhs)
        } else {
            linalg::gmres(&a, &rhs, 1e-13, 40, 40 * n + 400)?
        };
        w[k - 1] = Field::new(*grid, sol).map_err(|e| e.to_string())?;
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualProbeReport {
    pub dual: Vec<Field>,
    pub min_value: f64,
    /// `(ν̂, ratio)` pairs.
    pub ratios: Vec<(f64, f64)>,
}

pub const PROBE_NU: [f64; 3] = [0.0, 0.05, 0.1];

/// Backward dual solve with `M_k = d_u + d_α u_k^α + d_β v_k^β` and the ratio
/// `∫∫u(−f) / ((‖u_0‖₂ + K) ‖f‖_{2−ν̂})`.
pub fn dual_probe_report(
    traj: &Trajectory,
    f: &dyn Fn(f64, [f64; 2]) -> f64,
) -> Result<DualProbeReport, String> {
    let g = traj.grid;
    let p = &traj.params;
    let times: Vec<f64> = traj.states.iter().map(|s| s.time).collect();
    let mobility: Vec<Vec<f64>> = traj.states[1..]
        .iter()
        .map(|s| {
            s.u.values()
                .iter()
                .zip(s.v.values())
                .map(|(&u, &v)| p.d_u + p.d_alpha * power(u, p.alpha) + p.d_beta * power(v, p.beta))
                .collect()
        })
        .collect();
    let dual = solve_backward_dual(&g, &times, &mobility, f)?;
    let min_value = dual.iter().map(|w| w.min()).fold(f64::INFINITY, f64::min);

    let mut numerator = 0.0;
    let f_values: Vec<Vec<f64>> = (1..times.len())
        .map(|k| (0..g.len()).map(|i| f(times[k], g.center(i))).collect())
        .collect();
    for k in 1..times.len() {
        let u = traj.states[k].u.values();
        numerator += traj.dt(k) * integral(&g, (0..g.len()).map(|i| -u[i] * f_values[k - 1][i]));
    }
    let u0_norm = integral(&g, traj.states[0].u.values().iter().map(|x| x * x)).sqrt();
    let k_const = probe_constant(p.r_u, p.r_a, p.a);
    let ratios = PROBE_NU
        .iter()
        .map(|&nu| {
            let e = 2.0 - nu;
            let mut s = 0.0;
            for k in 1..times.len() {
                s += traj.dt(k) * integral(&g, f_values[k - 1].iter().map(|x| x.abs().powf(e)));
            }
            let norm = s.powf(1.0 / e);
            let ratio = if numerator == 0.0 {
                0.0
            } else {
                numerator / ((u0_norm + k_const) * norm)
            };
            (nu, ratio)
        })
        .collect();
    Ok(DualProbeReport {
        dual,
        min_value,
        ratios,
    })
}

fn dual_probe(ctx: &Ctx, forcing: &Forcing) -> (Vec<MonitorSeries>, Vec<(String, f64)>) {
    let f = forcing.evaluator(&ctx.grid);
    match dual_probe_report(ctx.traj, f.as_ref()) {
        Ok(rep) => {
            let rows = rep
                .dual
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let value = w.min();
                    MonitorRow {
                        step: k,
                        time: ctx.time(k),
                        value,
                        bound: Some(-1e-12),
                        margin: Some(-1e-12 - value),
                        pass: Some(value >= -1e-12),
                    }
                })
                .collect();
            let mut scalars = vec![("dual_probe_min".to_string(), rep.min_value)];
            for (nu, r) in rep.ratios {
                scalars.push((format!("dual_probe_ratio_nu{nu}"), r));
            }
            (vec![MonitorSeries::asserted("dual_probe".into(), rows, true, None)], scalars)
        }
        Err(e) => (
            vec![MonitorSeries {
                name: "dual_probe".into(),
                status: Status::Fail,
                rows: Vec::new(),
                note: Some(format!("backward solve failed: {e}")),
            }],
            vec![],
        ),
    }
}

/// Cellwise Frobenius norm of the discrete Hessian with mirrored neighbours.
fn hessian_norms(grid: &Grid, z: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let mut sq = 0.0;
            for axis in 0..grid.dim() {
                let (lo, hi) = grid.neighbours(i, axis);
                let h = grid.h(axis);
                sq += ((z[lo] - 2.0 * z[i] + z[hi]) / (h * h)).powi(2);
            }
            if grid.dim() == 2 {
                let (xl, xh) = grid.neighbours(i, 0);
                let corner = |x: usize| grid.neighbours(x, 1);
                let (ll, lh) = corner(xl);
                let (hl, hh) = corner(xh);
                let dxy = (z[hh] - z[hl] - z[lh] + z[ll]) / (4.0 * grid.h(0) * grid.h(1));
                sq += 2.0 * dxy * dxy;
            }
            sq.sqrt()
        })
        .collect()
}

/// Cellwise Euclidean norm of the centred gradient with mirrored neighbours.
fn gradient_norms(grid: &Grid, z: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let mut sq = 0.0;
            for axis in 0..grid.dim() {
                let (lo, hi) = grid.neighbours(i, axis);
                sq += ((z[hi] - z[lo]) / (2.0 * grid.h(axis))).powi(2);
            }
            sq.sqrt()
        })
        .collect()
}

/// `(‖∂_t v‖_q, ‖∇²_h v‖_q, ‖∇_h v‖_{2q})` over space-time.
pub fn regularity_norms(traj: &Trajectory, q: f64) -> (f64, f64, f64) {
    let pts = regularity_points(traj, q);
    let last = |i: usize| pts[i].last().map_or(0.0, |x| x.2);
    (last(0), last(1), last(2))
}

fn regularity_points(traj: &Trajectory, q: f64) -> [Vec<(usize, f64, f64)>; 3] {
    let g = &traj.grid;
    let mut sums = [0.0f64; 3];
    let exps = [q, q, 2.0 * q];
    let mut out: [Vec<(usize, f64, f64)>; 3] = Default::default();
    for series in out.iter_mut() {
        series.push((0, traj.states[0].time, 0.0));
    }
    for k in 1..traj.states.len() {
        let dt = traj.dt(k);
        let v = traj.states[k].v.values();
        let prev = traj.states[k - 1].v.values();
        sums[0] += dt * integral(g, v.iter().zip(prev).map(|(a, b)| ((a - b) / dt).abs().powf(q)));
        sums[1] += dt * integral(g, hessian_norms(g, v).into_iter().map(|x| x.powf(q)));
        sums[2] += dt * integral(g, gradient_norms(g, v).into_iter().map(|x| x.powf(2.0 * q)));
        for j in 0..3 {
            out[j].push((k, traj.states[k].time, sums[j].powf(1.0 / exps[j])));
        }
    }
    out
}

fn regularity(ctx: &Ctx, q: f64) -> (Vec<MonitorSeries>, Vec<(String, f64)>) {
    let asserted = ctx.p.gamma == 0.0;
    let note = (!asserted).then(|| "gamma > 0: reported only".to_string());
    let [dt, hess, grad] = regularity_points(ctx.traj, q);
    let scalars = vec![
        ("regularity_dt_v".to_string(), dt.last().unwrap().2),
        ("regularity_hess_v".to_string(), hess.last().unwrap().2),
        ("regularity_grad_v".to_string(), grad.last().unwrap().2),
    ];
    (
        vec![
            MonitorSeries::cumulative("regularity_dt_v".into(), dt, asserted, note.clone()),
            MonitorSeries::cumulative("regularity_hess_v".into(), hess, asserted, note.clone()),
            MonitorSeries::cumulative("regularity_grad_v".into(), grad, asserted, note),
        ],
        scalars,
    )
}
