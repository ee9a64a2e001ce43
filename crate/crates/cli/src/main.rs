use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use crossdiff::config::{parse_monitors, ConfigError};
use crossdiff::diagnostics::{duality_functional, evaluate};
use crossdiff::grid::integrate as integral;
use crossdiff::oracles::homogeneous_ode_reference;
use crossdiff::{validate_params, Field, RunConfig, State, Trajectory};
use rayon::prelude::*;
use serde::Serialize;

const CONFIG_COPY: &str = "config.txt";
const SNAPSHOT_DIR: &str = "snapshots";
const SNAPSHOT_INDEX: &str = "snapshots/index.csv";

#[derive(Parser)]
#[command(name = "crossdiff", version, about = "Cross-diffusion solver and estimate monitors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a config and report the parameter regime.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Integrate a config, writing snapshots, monitors and a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seeds of random initial data and forcing.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        monitors: Option<String>,
    },
    /// Run one config at several refinement levels and tabulate functionals.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<f64>,
        /// Directory for `sweep_<axis>.csv`; the table goes to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute monitors on the snapshots of a previous run.
    Diagnose {
        /// Output directory of `crossdiff run`.
        dir: PathBuf,
        /// Defaults to the config copy stored in `dir`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to `<dir>/diagnose`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        monitors: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Tau,
    H,
    #[value(name = "d_beta", alias = "d-beta")]
    DBeta,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::Tau => "tau",
            Axis::H => "h",
            Axis::DBeta => "d_beta",
        }
    }
}

struct Failure {
    code: u8,
    kind: &'static str,
    reason: String,
}

impl Failure {
    fn new(code: u8, kind: &'static str, reason: impl ToString) -> Self {
        Failure {
            code,
            kind,
            reason: reason.to_string(),
        }
    }

    fn io(e: impl ToString) -> Self {
        Failure::new(1, "io", e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(2, "config", e)
    }
}

#[derive(Serialize)]
struct RunManifest {
    config: PathBuf,
    output_dir: PathBuf,
    artifacts: Vec<PathBuf>,
    seed: Option<u64>,
    version: &'static str,
    steps: usize,
    snapshot_stride: usize,
    all_pass: bool,
    failing: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let reason = e.to_string();
            let first = reason.lines().next().unwrap_or("").trim_start_matches("error: ");
            report_error(&Failure::new(2, "usage", first));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Run {
            config,
            out,
            seed,
            monitors,
        } => cmd_run(&config, &out, seed, monitors.as_deref()),
        Command::Sweep {
            config,
            axis,
            levels,
            out,
            seed,
        } => cmd_sweep(&config, axis, &levels, out.as_deref(), seed),
        Command::Diagnose {
            dir,
            config,
            out,
            monitors,
        } => cmd_diagnose(&dir, config.as_deref(), out.as_deref(), monitors.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            report_error(&f);
            ExitCode::from(f.code)
        }
    }
}

fn report_error(f: &Failure) {
    let line = serde_json::json!({ "error": f.kind, "reason": f.reason });
    eprintln!("{line}");
}

fn load(path: &Path, seed: Option<u64>, monitors: Option<&str>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.reseed(seed);
    }
    if let Some(list) = monitors {
        cfg.diagnostics.monitors = parse_monitors(list).map_err(|e| Failure::new(2, "config", e))?;
    }
    Ok(cfg)
}

fn cmd_validate(path: &Path) -> Result<u8, Failure> {
    let cfg = load(path, None, None)?;
    let regime = validate_params(&cfg.params).map_err(|e| Failure::new(2, "inadmissible", e))?;
    let grid = cfg.grid()?;
    cfg.scheme
        .check(&cfg.params)
        .map_err(|e| Failure::new(2, "inadmissible", e))?;
    let report = serde_json::json!({
        "valid": true,
        "regime": regime.to_string(),
        "grid": grid.to_string(),
        "tau": cfg.scheme.tau(),
        "v_cap": cfg.params.v_cap(),
    });
    println!("{report}");
    Ok(0)
}

fn cmd_run(path: &Path, out: &Path, seed: Option<u64>, monitors: Option<&str>) -> Result<u8, Failure> {
    let cfg = load(path, seed, monitors)?;
    validate_params(&cfg.params).map_err(|e| Failure::new(2, "inadmissible", e))?;
    let initial = cfg.initial_state()?;
    let (traj, report) =
        crossdiff::run(initial, &cfg.params, &cfg.scheme, &cfg.diagnostics).map_err(|e| Failure::new(4, "solver", e))?;

    fs::create_dir_all(out.join(SNAPSHOT_DIR)).map_err(Failure::io)?;
    let steps = cfg.scheme.steps;
    let stride = steps.div_ceil(100).max(1);
    let mut artifacts = write_snapshots(out, &traj, stride).map_err(Failure::io)?;
    artifacts.extend(report.write_to(out).map_err(Failure::io)?);
    fs::copy(path, out.join(CONFIG_COPY)).map_err(Failure::io)?;
    artifacts.push(PathBuf::from(CONFIG_COPY));

    let manifest = RunManifest {
        config: path.to_path_buf(),
        output_dir: out.to_path_buf(),
        artifacts,
        seed,
        version: env!("CARGO_PKG_VERSION"),
        steps,
        snapshot_stride: stride,
        all_pass: report.all_pass(),
        failing: report.failing().into_iter().map(String::from).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(out.join("manifest.json"), text + "\n").map_err(Failure::io)?;

    if report.all_pass() {
        Ok(0)
    } else {
        let reason = format!("monitors failed: {}", report.failing().join(","));
        Err(Failure::new(3, "monitor", reason))
    }
}

fn snapshot_name(field: char, k: usize) -> PathBuf {
    PathBuf::from(SNAPSHOT_DIR).join(format!("{field}_{k:06}.csv"))
}

fn write_snapshots(out: &Path, traj: &Trajectory, stride: usize) -> std::io::Result<Vec<PathBuf>> {
    let last = traj.steps();
    let mut written = Vec::new();
    let mut index = BufWriter::new(fs::File::create(out.join(SNAPSHOT_INDEX))?);
    writeln!(index, "step,time")?;
    for (k, s) in traj.states.iter().enumerate() {
        if k % stride != 0 && k != last {
            continue;
        }
        for (name, field) in [('u', &s.u), ('v', &s.v)] {
            let rel = snapshot_name(name, k);
            field.write_csv(BufWriter::new(fs::File::create(out.join(&rel))?))?;
            written.push(rel);
        }
        writeln!(index, "{k},{}", s.time)?;
    }
    index.flush()?;
    written.push(PathBuf::from(SNAPSHOT_INDEX));
    Ok(written)
}

fn read_snapshots(dir: &Path, cfg: &RunConfig) -> Result<Trajectory, Failure> {
    let grid = cfg.grid()?;
    let bad = |m: String| Failure::new(2, "snapshots", m);
    let index = fs::read_to_string(dir.join(SNAPSHOT_INDEX)).map_err(Failure::io)?;
    let mut states = Vec::new();
    for (line_no, line) in index.lines().enumerate().skip(1) {
        let (k, t) = line
            .split_once(',')
            .ok_or_else(|| bad(format!("index line {}: `{line}`", line_no + 1)))?;
        let k: usize = k.parse().map_err(|_| bad(format!("bad step `{k}`")))?;
        let time: f64 = t.parse().map_err(|_| bad(format!("bad time `{t}`")))?;
        let read = |name: char| -> Result<Field, Failure> {
            let path = dir.join(snapshot_name(name, k));
            let file = fs::File::open(&path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
            Field::read_csv(grid, BufReader::new(file)).map_err(|e| bad(format!("{}: {e}", path.display())))
        };
        states.push(State::new(read('u')?, read('v')?, time));
    }
    if states.len() < 2 {
        return Err(bad("need at least two snapshots".into()));
    }
    Ok(Trajectory {
        states,
        tau: cfg.scheme.tau(),
        params: cfg.params,
        grid,
    })
}

/// Seed recorded in the run manifest, so seeded forcing matches the original run.
fn recorded_seed(dir: &Path) -> Option<u64> {
    let text = fs::read_to_string(dir.join("manifest.json")).ok()?;
    let manifest: serde_json::Value = serde_json::from_str(&text).ok()?;
    manifest.get("seed")?.as_u64()
}

fn cmd_diagnose(dir: &Path, config: Option<&Path>, out: Option<&Path>, monitors: Option<&str>) -> Result<u8, Failure> {
    let config = config.map_or_else(|| dir.join(CONFIG_COPY), Path::to_path_buf);
    let cfg = load(&config, recorded_seed(dir), monitors)?;
    let traj = read_snapshots(dir, &cfg)?;
    let report = evaluate(&traj, &cfg.diagnostics);
    let out = out.map_or_else(|| dir.join("diagnose"), Path::to_path_buf);
    fs::create_dir_all(&out).map_err(Failure::io)?;
    report.write_to(&out).map_err(Failure::io)?;
    if report.all_pass() {
        Ok(0)
    } else {
        let reason = format!("monitors failed: {}", report.failing().join(","));
        Err(Failure::new(3, "monitor", reason))
    }
}

struct SweepRow {
    level: f64,
    n: usize,
    steps: usize,
    duality: f64,
    mass_u: f64,
    mass_v: f64,
    max_v: f64,
    ode_error: Option<f64>,
}

fn level_config(base: &RunConfig, axis: Axis, level: f64) -> Result<RunConfig, Failure> {
    let mut cfg = base.clone();
    let whole = |total: f64| -> Result<usize, Failure> {
        let count = (total / level).round();
        if !(level > 0.0) || count < 1.0 || (count * level - total).abs() > 1e-9 * total {
            return Err(Failure::new(2, "levels", format!("{level} does not divide {total}")));
        }
        Ok(count as usize)
    };
    match axis {
        Axis::Tau => cfg.scheme.steps = whole(cfg.scheme.final_time)?,
        Axis::H => cfg.n = whole(cfg.length)?,
        Axis::DBeta => cfg.params.d_beta = level,
    }
    validate_params(&cfg.params).map_err(|e| Failure::new(2, "inadmissible", e))?;
    Ok(cfg)
}

fn sweep_level(cfg: &RunConfig, level: f64) -> Result<SweepRow, Failure> {
    let initial = cfg.initial_state()?;
    let homogeneous = [&initial.u, &initial.v].iter().all(|f| f.max() == f.min());
    let (u0, v0) = (initial.u.values()[0], initial.v.values()[0]);
    let (traj, _) = crossdiff::integrate(initial, &cfg.params, &cfg.scheme)
        .map_err(|e| Failure::new(4, "solver", format!("level {level}: {e}")))?;
    let last = traj.states.last().expect("trajectory has a final state");
    let ode_error = homogeneous.then(|| {
        let r = homogeneous_ode_reference(&cfg.params, u0, v0, cfg.scheme.final_time);
        let eu = last.u.values().iter().map(|x| (x - r.u).abs()).fold(0.0, f64::max);
        let ev = last.v.values().iter().map(|x| (x - r.v).abs()).fold(0.0, f64::max);
        eu.max(ev)
    });
    Ok(SweepRow {
        level,
        n: cfg.n,
        steps: cfg.scheme.steps,
        duality: duality_functional(&traj),
        mass_u: integral(&last.u),
        mass_v: integral(&last.v),
        max_v: last.v.max(),
        ode_error,
    })
}

fn ratio(prev: Option<f64>, cur: Option<f64>) -> String {
    match (prev, cur) {
        (Some(a), Some(b)) if b != 0.0 && a.is_finite() => format!("{}", a / b),
        _ => String::new(),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn cmd_sweep(path: &Path, axis: Axis, levels: &[f64], out: Option<&Path>, seed: Option<u64>) -> Result<u8, Failure> {
    let base = load(path, seed, None)?;
    let configs = levels
        .iter()
        .map(|&l| level_config(&base, axis, l))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = configs
        .par_iter()
        .zip(levels.par_iter())
        .map(|(cfg, &level)| sweep_level(cfg, level))
        .collect::<Result<Vec<_>, _>>()?;

    let mut table = String::from("level,n,N,duality,mass_u,mass_v,max_v,ode_error,ode_error_ratio,duality_ratio\n");
    for (i, r) in rows.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| &rows[j]);
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.level,
            r.n,
            r.steps,
            r.duality,
            r.mass_u,
            r.mass_v,
            r.max_v,
            opt(r.ode_error),
            ratio(prev.and_then(|p| p.ode_error), r.ode_error),
            ratio(prev.map(|p| p.duality), Some(r.duality)),
        ));
    }
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(Failure::io)?;
            fs::write(dir.join(format!("sweep_{}.csv", axis.name())), table).map_err(Failure::io)?;
        }
        None => print!("{table}"),
    }
    Ok(0)
}
