//! Run configuration: a flat `key = value` file.
//!
//! ```text
//! # parameters (all eighteen keys required)
//! d_u = 1
//! ...
//! dim = 1
//! n = 128
//! length = 1
//! T = 0.5
//! N = 500
//! u_init = cosine_bump:0.5
//! v_init = random:7,0.5,1.5
//! ```
//!
//! Optional keys: `strict_validation`, `newton_tol`, `newton_max_iter`,
//! `positivity_floor`, `initial_lift`, `entropy_exponents`, `log_entropies`,
//! `dual_probe`, `q`, `monitors`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::diagnostics::{DiagnosticsConfig, Forcing, MonitorKind};
use crate::grid::{Field, Grid};
use crate::model::{ParamSet, PARAM_KEYS};
use crate::stepper::{initial_lift, SchemeConfig, State};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error("key `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Initial-data preset.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Constant(f64),
    /// `1 + amp · cos(πx/L_x)` (times `cos(πy/L_y)` in 2D).
    CosineBump(f64),
    /// Independent uniform samples in `[lo, hi]` per cell.
    Random { seed: u64, lo: f64, hi: f64 },
    /// Field CSV file.
    File(PathBuf),
}

impl InitSpec {
    pub fn realize(&self, grid: Grid) -> Result<Field, ConfigError> {
        let field = match self {
            InitSpec::Constant(c) => Field::constant(grid, *c),
            InitSpec::CosineBump(amp) => {
                let (lx, ly, dim) = (grid.length(0), grid.length(1), grid.dim());
                Field::from_fn(grid, |x| {
                    let mut m = (std::f64::consts::PI * x[0] / lx).cos();
                    if dim == 2 {
                        m *= (std::f64::consts::PI * x[1] / ly).cos();
                    }
                    1.0 + amp * m
                })
            }
            InitSpec::Random { seed, lo, hi } => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
                let values = (0..grid.len()).map(|_| rng.gen_range(*lo..=*hi)).collect();
                Field::new(grid, values).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            InitSpec::File(path) => {
                let file = std::fs::File::open(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                Field::read_csv(grid, std::io::BufReader::new(file))
                    .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?
            }
        };
        if let Some(bad) = field.values().iter().find(|&&x| x < 0.0) {
            return Err(ConfigError::Invalid(format!("initial data has negative value {bad}")));
        }
        Ok(field)
    }

    fn with_seed(&self, seed: u64) -> Self {
        match self {
            InitSpec::Random { lo, hi, .. } => InitSpec::Random { seed, lo: *lo, hi: *hi },
            other => other.clone(),
        }
    }
}

impl FromStr for InitSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s.trim().split_once(':').ok_or_else(|| format!("expected <preset>:<args>, got `{s}`"))?;
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("bad number `{x}`"));
        match kind {
            "constant" => num(arg).map(InitSpec::Constant),
            "cosine_bump" => num(arg).map(InitSpec::CosineBump),
            "random" => {
                let parts: Vec<&str> = arg.split(',').collect();
                if parts.len() != 3 {
                    return Err("random expects <seed>,<lo>,<hi>".into());
                }
                let seed = parts[0].trim().parse::<u64>().map_err(|_| format!("bad seed `{}`", parts[0]))?;
                let (lo, hi) = (num(parts[1])?, num(parts[2])?);
                if !(lo <= hi) {
                    return Err(format!("random range [{lo}, {hi}] is empty"));
                }
                Ok(InitSpec::Random { seed, lo, hi })
            }
            "file" => Ok(InitSpec::File(PathBuf::from(arg.trim()))),
            _ => Err(format!("unknown preset `{kind}`")),
        }
    }
}

impl fmt::Display for InitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitSpec::Constant(c) => write!(f, "constant:{c}"),
            InitSpec::CosineBump(a) => write!(f, "cosine_bump:{a}"),
            InitSpec::Random { seed, lo, hi } => write!(f, "random:{seed},{lo},{hi}"),
            InitSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ParamSet,
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub scheme: SchemeConfig,
    pub u_init: InitSpec,
    pub v_init: InitSpec,
    pub initial_lift: bool,
    pub diagnostics: DiagnosticsConfig,
}

impl RunConfig {
    /// Reads a config file; `file:` paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for spec in [&mut cfg.u_init, &mut cfg.v_init] {
            if let InitSpec::File(p) = spec {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax {
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }

        let mut take = |key: &'static str| entries.remove(key).map(|(_, v)| v);
        let value_err = |key: &str, message: String| ConfigError::Value {
            key: key.to_string(),
            message,
        };
        fn parse_as<T: FromStr>(key: &str, s: &str) -> Result<T, ConfigError> {
            s.parse::<T>().map_err(|_| ConfigError::Value {
                key: key.to_string(),
                message: format!("cannot parse `{s}`"),
            })
        }

        let mut params = ParamSet::canonical();
        for key in PARAM_KEYS {
            let raw = take(key).ok_or(ConfigError::Missing(key))?;
            params
                .set(key, parse_as::<f64>(key, &raw)?)
                .map_err(|e| value_err(key, e.to_string()))?;
        }
        params.strict_validation = match take("strict_validation") {
            Some(s) => parse_as::<bool>("strict_validation", &s)?,
            None => true,
        };

        let dim = take("dim").map_or(Ok(1), |s| parse_as::<usize>("dim", &s))?;
        let n = parse_as::<usize>("n", &take("n").ok_or(ConfigError::Missing("n"))?)?;
        let length = take("length").map_or(Ok(1.0), |s| parse_as::<f64>("length", &s))?;
        let t = parse_as::<f64>("T", &take("T").ok_or(ConfigError::Missing("T"))?)?;
        let steps = parse_as::<usize>("N", &take("N").ok_or(ConfigError::Missing("N"))?)?;
        let mut scheme = SchemeConfig::new(t, steps);
        if let Some(s) = take("newton_tol") {
            scheme.newton_tol = parse_as("newton_tol", &s)?;
        }
        if let Some(s) = take("newton_max_iter") {
            scheme.newton_max_iter = parse_as("newton_max_iter", &s)?;
        }
        if let Some(s) = take("positivity_floor") {
            scheme.positivity_floor = parse_as("positivity_floor", &s)?;
        }
        let init = |key: &'static str, raw: Option<String>| -> Result<InitSpec, ConfigError> {
            let raw = raw.ok_or(ConfigError::Missing(key))?;
            raw.parse::<InitSpec>().map_err(|m| value_err(key, m))
        };
        let u_init = init("u_init", take("u_init"))?;
        let v_init = init("v_init", take("v_init"))?;
        let initial_lift = take("initial_lift").map_or(Ok(false), |s| parse_as::<bool>("initial_lift", &s))?;

        let mut diagnostics = DiagnosticsConfig::for_params(&params);
        if let Some(s) = take("entropy_exponents") {
            diagnostics.entropy_exponents = s
                .split(',')
                .filter(|x| !x.trim().is_empty())
                .map(|x| parse_as::<f64>("entropy_exponents", x.trim()))
                .collect::<Result<_, _>>()?;
        }
        if let Some(s) = take("log_entropies") {
            diagnostics.include_log_entropies = parse_as("log_entropies", &s)?;
        }
        if let Some(s) = take("dual_probe") {
            diagnostics.dual_probe = Some(s.parse::<Forcing>().map_err(|m| value_err("dual_probe", m))?);
        }
        if let Some(s) = take("q") {
            diagnostics.regularity_q = parse_as("q", &s)?;
        }
        if let Some(s) = take("monitors") {
            diagnostics.monitors = parse_monitors(&s).map_err(|m| value_err("monitors", m))?;
        }
        diagnostics.validate().map_err(ConfigError::Invalid)?;

        if let Some((key, (line, _))) = entries.into_iter().next() {
            return Err(ConfigError::Syntax {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        let cfg = RunConfig {
            params,
            dim,
            n,
            length,
            scheme,
            u_init,
            v_init,
            initial_lift,
            diagnostics,
        };
        cfg.grid()?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Grid::uniform(self.dim, self.n, self.length).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Initial state, lifted by `1/N` when `initial_lift` is set.
    pub fn initial_state(&self) -> Result<State, ConfigError> {
        let grid = self.grid()?;
        let u = self.u_init.realize(grid)?;
        let v = self.v_init.realize(grid)?;
        if self.initial_lift {
            initial_lift(&u, &v, self.scheme.steps).map_err(|e| ConfigError::Invalid(e.to_string()))
        } else {
            Ok(State::new(u, v, 0.0))
        }
    }

    /// Replaces the seeds of random presets.
    pub fn reseed(&mut self, seed: u64) {
        self.u_init = self.u_init.with_seed(seed);
        self.v_init = self.v_init.with_seed(seed.wrapping_add(1));
        if let Some(Forcing::RandomSmooth { .. }) = self.diagnostics.dual_probe {
            self.diagnostics.dual_probe = Some(Forcing::RandomSmooth {
                seed: seed.wrapping_add(2),
            });
        }
    }
}

pub fn parse_monitors(list: &str) -> Result<BTreeSet<MonitorKind>, String> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<MonitorKind>())
        .collect()
}
