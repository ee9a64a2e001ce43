//! Parameter set, admissibility rules and the power-law coefficient laws.
//!
//! The system solved by this crate is
//!
//! ```text
//! ∂t u − Δ[(d_u + d_α u^α + d_β v^β) u] = u (r_u − r_a u^a − r_b v^b)
//! ∂t v − Δ[(d_v + d_γ v^γ) v]           = v (r_v − r_c v^c − r_d u^d)
//! ```
//!
//! with homogeneous Neumann conditions. Everything here is a pure function of
//! its arguments.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Below this magnitude a base is replaced by this value before taking a log.
const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("inadmissible parameters: {0}")]
    Inadmissible(String),
    #[error("negative input: {0}")]
    NegativeInput(f64),
    #[error("root finding did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("parameter file: {0}")]
    Parse(String),
}

/// `x^e` for `x >= 0`, with `x^0 = 1` identically and `0^e = 0` for `e > 0`.
#[inline]
pub fn power(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if x <= 0.0 {
        0.0
    } else {
        (e * x.max(LOG_FLOOR).ln()).exp()
    }
}

/// The eighteen model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSet {
    pub d_u: f64,
    pub d_v: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
    pub d_gamma: f64,
    pub r_u: f64,
    pub r_v: f64,
    pub r_a: f64,
    pub r_b: f64,
    pub r_c: f64,
    pub r_d: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// When off, reaction rates and the self/cross-diffusion coefficients may
    /// be zero. Used for decoupled reference runs only.
    pub strict_validation: bool,
}

/// Keys of the parameter file, in canonical order.
pub const PARAM_KEYS: [&str; 18] = [
    "d_u", "d_v", "d_alpha", "d_beta", "d_gamma", "r_u", "r_v", "r_a", "r_b", "r_c", "r_d", "a",
    "b", "c", "d", "alpha", "beta", "gamma",
];

impl Default for ParamSet {
    fn default() -> Self {
        Self::canonical()
    }
}

impl ParamSet {
    /// Triangular SKT system: every coefficient and exponent 1, `r_u = r_v = 2`.
    pub fn canonical() -> Self {
        Self {
            d_u: 1.0,
            d_v: 1.0,
            d_alpha: 1.0,
            d_beta: 1.0,
            d_gamma: 1.0,
            r_u: 2.0,
            r_v: 2.0,
            r_a: 1.0,
            r_b: 1.0,
            r_c: 1.0,
            r_d: 1.0,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            d: 1.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            strict_validation: true,
        }
    }

    /// Pure diffusion `∂t u = d_u Δu`, `∂t v = d_v Δv`, no coupling at all.
    pub fn pure_diffusion(d_u: f64, d_v: f64) -> Self {
        Self {
            d_u,
            d_v,
            d_alpha: 0.0,
            d_beta: 0.0,
            d_gamma: 0.0,
            r_u: 0.0,
            r_v: 0.0,
            r_a: 0.0,
            r_b: 0.0,
            r_c: 0.0,
            r_d: 0.0,
            alpha: 0.0,
            gamma: 0.0,
            strict_validation: false,
            ..Self::canonical()
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        Some(match key {
            "d_u" => self.d_u,
            "d_v" => self.d_v,
            "d_alpha" => self.d_alpha,
            "d_beta" => self.d_beta,
            "d_gamma" => self.d_gamma,
            "r_u" => self.r_u,
            "r_v" => self.r_v,
            "r_a" => self.r_a,
            "r_b" => self.r_b,
            "r_c" => self.r_c,
            "r_d" => self.r_d,
            "a" => self.a,
            "b" => self.b,
            "c" => self.c,
            "d" => self.d,
            "alpha" => self.alpha,
            "beta" => self.beta,
            "gamma" => self.gamma,
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<(), ModelError> {
        let slot = match key {
            "d_u" => &mut self.d_u,
            "d_v" => &mut self.d_v,
            "d_alpha" => &mut self.d_alpha,
            "d_beta" => &mut self.d_beta,
            "d_gamma" => &mut self.d_gamma,
            "r_u" => &mut self.r_u,
            "r_v" => &mut self.r_v,
            "r_a" => &mut self.r_a,
            "r_b" => &mut self.r_b,
            "r_c" => &mut self.r_c,
            "r_d" => &mut self.r_d,
            "a" => &mut self.a,
            "b" => &mut self.b,
            "c" => &mut self.c,
            "d" => &mut self.d,
            "alpha" => &mut self.alpha,
            "beta" => &mut self.beta,
            "gamma" => &mut self.gamma,
            other => return Err(ModelError::Parse(format!("unknown parameter key `{other}`"))),
        };
        *slot = value;
        Ok(())
    }

    /// Builds a parameter set from a key/value map. All eighteen keys are required.
    pub fn from_map(map: &BTreeMap<String, f64>, strict_validation: bool) -> Result<Self, ModelError> {
        let mut p = Self::canonical();
        p.strict_validation = strict_validation;
        for key in PARAM_KEYS {
            let value = map
                .get(key)
                .ok_or_else(|| ModelError::Parse(format!("missing parameter `{key}`")))?;
            p.set(key, *value)?;
        }
        Ok(p)
    }

    /// Parses the flat `key = value` parameter file format.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Parse(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            if !PARAM_KEYS.contains(&key) {
                return Err(ModelError::Parse(format!("line {}: unknown key `{key}`", lineno + 1)));
            }
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| ModelError::Parse(format!("line {}: `{}` is not a number", lineno + 1, value.trim())))?;
            map.insert(key.to_string(), value);
        }
        Self::from_map(&map, true)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in PARAM_KEYS {
            out.push_str(&format!("{key} = {:?}\n", self.get(key).unwrap()));
        }
        out
    }

    /// Checks admissibility and classifies the exponent regime.
    pub fn validate(&self) -> Result<RegimeTag, ModelError> {
        validate_params(self)
    }

    /// `a₁(u, v) = d_u + d_α u^α + d_β v^β`.
    pub fn diffusion_u(&self, u: f64, v: f64) -> Result<f64, ModelError> {
        check_nonnegative(u)?;
        check_nonnegative(v)?;
        Ok(self.a1(u, v))
    }

    /// `a₂(v) = d_v + d_γ v^γ`.
    pub fn diffusion_v(&self, v: f64) -> Result<f64, ModelError> {
        check_nonnegative(v)?;
        Ok(self.a2(v))
    }

    /// `u (r_u − r_a u^a − r_b v^b)`.
    pub fn reaction_u(&self, u: f64, v: f64) -> Result<f64, ModelError> {
        check_nonnegative(u)?;
        check_nonnegative(v)?;
        Ok(u * self.r1(u, v))
    }

    /// `v (r_v − r_c v^c − r_d u^d)`.
    pub fn reaction_v(&self, u: f64, v: f64) -> Result<f64, ModelError> {
        check_nonnegative(u)?;
        check_nonnegative(v)?;
        Ok(v * self.r2(u, v))
    }

    #[inline]
    pub(crate) fn a1(&self, u: f64, v: f64) -> f64 {
        self.d_u + self.d_alpha * power(u, self.alpha) + self.d_beta * power(v, self.beta)
    }

    #[inline]
    pub(crate) fn a2(&self, v: f64) -> f64 {
        self.d_v + self.d_gamma * power(v, self.gamma)
    }

    #[inline]
    pub(crate) fn r1(&self, u: f64, v: f64) -> f64 {
        self.r_u - self.r_a * power(u, self.a) - self.r_b * power(v, self.b)
    }

    #[inline]
    pub(crate) fn r2(&self, u: f64, v: f64) -> f64 {
        self.r_v - self.r_c * power(v, self.c) - self.r_d * power(u, self.d)
    }

    /// Largest intrinsic growth rate, the upper bound of both `r₁` and `r₂`.
    pub fn max_growth_rate(&self) -> f64 {
        self.r_u.max(self.r_v)
    }

    /// `(r_v / r_c)^{1/c}`, the equilibrium level capping `v`. `None` when `r_c = 0`.
    pub fn v_cap(&self) -> Option<f64> {
        (self.r_c > 0.0).then(|| power(self.r_v / self.r_c, 1.0 / self.c))
    }
}

fn check_nonnegative(x: f64) -> Result<(), ModelError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(ModelError::NegativeInput(x))
    }
}

/// Regime flags. Several may be set at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegimeTag {
    /// `α ≥ 0`, `d < 2 + α`, `a < 1 + α`.
    pub strict: bool,
    /// `α = 0`, `a ≤ 1`, `d ≤ 2`.
    pub alpha_zero_boundary: bool,
    /// `γ = 0`: the `v` equation is linear in its diffusion.
    pub gamma_zero: bool,
}

impl fmt::Display for RegimeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = Vec::new();
        if self.strict {
            names.push("Strict");
        }
        if self.alpha_zero_boundary {
            names.push("AlphaZeroBoundary");
        }
        if self.gamma_zero {
            names.push("GammaZero");
        }
        write!(f, "{}", names.join(","))
    }
}

/// Validates positivity and the exponent gate, naming the first violated inequality.
pub fn validate_params(p: &ParamSet) -> Result<RegimeTag, ModelError> {
    for key in PARAM_KEYS {
        let value = p.get(key).unwrap();
        if !value.is_finite() {
            return Err(ModelError::Inadmissible(format!("{key} is not finite")));
        }
    }

    // d_u, d_v, and the four exponents a..d must be positive in every mode;
    // the relaxed mode only lets rates and extra diffusion coefficients vanish.
    let always_positive = ["d_u", "d_v", "a", "b", "c", "d"];
    let strictly_positive = [
        "d_u", "d_v", "d_alpha", "d_beta", "d_gamma", "r_u", "r_v", "r_a", "r_b", "r_c", "r_d", "a",
        "b", "c", "d",
    ];
    for key in strictly_positive {
        let value = p.get(key).unwrap();
        let required = p.strict_validation || always_positive.contains(&key);
        if required && value <= 0.0 {
            return Err(ModelError::Inadmissible(format!("{key} <= 0")));
        }
        if value < 0.0 {
            return Err(ModelError::Inadmissible(format!("{key} < 0")));
        }
    }
    if p.alpha < 0.0 {
        return Err(ModelError::Inadmissible("alpha < 0".into()));
    }
    if p.beta <= 0.0 {
        return Err(ModelError::Inadmissible("beta <= 0".into()));
    }
    if p.gamma < 0.0 {
        return Err(ModelError::Inadmissible("gamma < 0".into()));
    }

    if p.alpha > 0.0 {
        if p.d >= 2.0 + p.alpha {
            return Err(ModelError::Inadmissible("d >= 2 + alpha".into()));
        }
        if p.a >= 1.0 + p.alpha {
            return Err(ModelError::Inadmissible("a >= 1 + alpha".into()));
        }
    } else {
        if p.d > 2.0 {
            return Err(ModelError::Inadmissible("d > 2 (alpha = 0 requires d <= 2)".into()));
        }
        if p.a > 1.0 {
            return Err(ModelError::Inadmissible("a > 1 (alpha = 0 requires a <= 1)".into()));
        }
    }

    Ok(RegimeTag {
        strict: p.d < 2.0 + p.alpha && p.a < 1.0 + p.alpha,
        alpha_zero_boundary: p.alpha == 0.0 && p.a <= 1.0 && p.d <= 2.0,
        gamma_zero: p.gamma == 0.0,
    })
}

/// `A(u, v) = (a₁(u,v) u, a₂(v) v)`.
pub fn map_a(p: &ParamSet, u: f64, v: f64) -> Result<(f64, f64), ModelError> {
    check_nonnegative(u)?;
    check_nonnegative(v)?;
    Ok((p.a1(u, v) * u, p.a2(v) * v))
}

const BISECTION_MAX_ITER: usize = 4000;
const BISECTION_REL_WIDTH: f64 = 1e-14;
const NEWTON_POLISH_STEPS: usize = 3;

/// Solves `g(x) = target` for a strictly increasing `g` on `[0, upper]` with
/// `g(0) ≤ target ≤ g(upper)`. Bisection, then a few guarded Newton steps.
fn monotone_root(
    g: impl Fn(f64) -> f64,
    dg: impl Fn(f64) -> f64,
    target: f64,
    upper: f64,
) -> Result<f64, ModelError> {
    if target == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0_f64, upper);
    if !(g(hi) - target >= 0.0) {
        return Err(ModelError::NoConvergence(0));
    }
    let mut iterations = 0;
    while hi - lo > BISECTION_REL_WIDTH * hi.max(1.0) {
        iterations += 1;
        if iterations > BISECTION_MAX_ITER {
            return Err(ModelError::NoConvergence(iterations));
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) - target < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    let mut residual = (g(x) - target).abs();
    for _ in 0..NEWTON_POLISH_STEPS {
        let slope = dg(x);
        if !(slope > 0.0) {
            break;
        }
        let candidate = x - (g(x) - target) / slope;
        if !(candidate >= 0.0) {
            break;
        }
        let r = (g(candidate) - target).abs();
        if r < residual {
            x = candidate;
            residual = r;
        } else {
            break;
        }
    }
    Ok(x)
}

/// Inverse of [`map_a`]: first `v` from `w₂ = a₂(v) v`, then `u` from
/// `w₁ = a₁(u, v) u`. Both scalar maps are strictly increasing, and since
/// `a₁ ≥ d_u`, `a₂ ≥ d_v` the roots lie in `[0, w₁/d_u]`, `[0, w₂/d_v]`.
pub fn invert_a(p: &ParamSet, w1: f64, w2: f64) -> Result<(f64, f64), ModelError> {
    check_nonnegative(w1)?;
    check_nonnegative(w2)?;
    let v = monotone_root(
        |v| p.a2(v) * v,
        |v| p.d_v + p.d_gamma * (1.0 + p.gamma) * power(v, p.gamma),
        w2,
        w2 / p.d_v,
    )?;
    let cross = p.d_beta * power(v, p.beta);
    let u = monotone_root(
        |u| (p.d_u + p.d_alpha * power(u, p.alpha) + cross) * u,
        |u| p.d_u + p.d_alpha * (1.0 + p.alpha) * power(u, p.alpha) + cross,
        w1,
        w1 / p.d_u,
    )?;
    Ok((u, v))
}
