//! Uniform cell-centred grids on boxes with homogeneous Neumann boundaries.
//!
//! Boundary handling uses mirror ghost cells: the ghost value equals the
//! adjacent interior value, so boundary faces carry no flux and the discrete
//! Laplacian is symmetric negative semidefinite with the constants as kernel.

use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::linalg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("field has {got} values, grid has {expected} cells")]
    SizeMismatch { expected: usize, got: usize },
    #[error("field value at cell {0} is not finite")]
    NonFinite(usize),
    #[error("linear solver failed: {0}")]
    SolverFailure(String),
    #[error("field csv: {0}")]
    Csv(String),
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Compensated sum of an iterator.
pub fn ksum(iter: impl IntoIterator<Item = f64>) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Uniform Cartesian grid in one or two dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n: [usize; 2],
    length: [f64; 2],
}

/// An interior face between cells `left` and `right` along `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub left: usize,
    pub right: usize,
    pub axis: usize,
}

impl Grid {
    pub fn line(n: usize, length: f64) -> Result<Self, GridError> {
        Self::new(1, [n, 1], [length, 1.0])
    }

    pub fn rect(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self, GridError> {
        Self::new(2, [nx, ny], [lx, ly])
    }

    /// Same cell count and extent on every axis.
    pub fn uniform(dim: usize, n: usize, length: f64) -> Result<Self, GridError> {
        match dim {
            1 => Self::line(n, length),
            2 => Self::rect(n, n, length, length),
            _ => Err(GridError::Invalid(format!("dimension {dim} not supported (1 or 2)"))),
        }
    }

    fn new(dim: usize, n: [usize; 2], length: [f64; 2]) -> Result<Self, GridError> {
        for axis in 0..dim {
            if n[axis] < 3 {
                return Err(GridError::Invalid(format!("n = {} < 3 on axis {axis}", n[axis])));
            }
            if !(length[axis] > 0.0 && length[axis].is_finite()) {
                return Err(GridError::Invalid(format!("length {} on axis {axis}", length[axis])));
            }
        }
        Ok(Self { dim, n, length })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.n[axis]
        } else {
            1
        }
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.length[axis]
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.length[axis] / self.n[axis] as f64
    }

    /// Largest spacing over all axes.
    pub fn h_max(&self) -> f64 {
        (0..self.dim).map(|a| self.h(a)).fold(0.0, f64::max)
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.n(0) * self.n(1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.h(a)).product()
    }

    /// `|Ω|`.
    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.length[a]).product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n[0] * j
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n[0], idx / self.n[0])
    }

    /// Cell centre; the second coordinate is 0 in one dimension.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.coords(idx);
        let x = (i as f64 + 0.5) * self.h(0);
        let y = if self.dim == 2 {
            (j as f64 + 0.5) * self.h(1)
        } else {
            0.0
        };
        [x, y]
    }

    /// Midpoint of a face.
    pub fn face_center(&self, face: &Face) -> [f64; 2] {
        let mut x = self.center(face.left);
        x[face.axis] += 0.5 * self.h(face.axis);
        x
    }

    /// All interior faces, x-faces first.
    pub fn faces(&self) -> impl Iterator<Item = Face> + '_ {
        let (nx, ny) = (self.n(0), self.n(1));
        let x_faces = (0..ny).flat_map(move |j| {
            (0..nx - 1).map(move |i| Face {
                left: i + nx * j,
                right: i + 1 + nx * j,
                axis: 0,
            })
        });
        let y_faces = (0..if self.dim == 2 { ny - 1 } else { 0 }).flat_map(move |j| {
            (0..nx).map(move |i| Face {
                left: i + nx * j,
                right: i + nx * (j + 1),
                axis: 1,
            })
        });
        x_faces.chain(y_faces)
    }

    /// Neighbour indices of a cell along each axis, mirrored at the boundary.
    #[inline]
    pub(crate) fn neighbours(&self, idx: usize, axis: usize) -> (usize, usize) {
        let (i, j) = self.coords(idx);
        if axis == 0 {
            let lo = if i == 0 { idx } else { idx - 1 };
            let hi = if i + 1 == self.n[0] { idx } else { idx + 1 };
            (lo, hi)
        } else {
            let nx = self.n[0];
            let lo = if j == 0 { idx } else { idx - nx };
            let hi = if j + 1 == self.n[1] { idx } else { idx + nx };
            (lo, hi)
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.dim == 1 {
            write!(f, "{} cells on [0, {}]", self.n[0], self.length[0])
        } else {
            write!(
                f,
                "{}x{} cells on [0, {}]x[0, {}]",
                self.n[0], self.n[1], self.length[0], self.length[1]
            )
        }
    }
}

/// Cell-centred scalar grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::SizeMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at cell centres.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.center(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.values.len(), other.values.len());
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Mean value `⟨f⟩`.
    pub fn mean(&self) -> f64 {
        ksum(self.values.iter().copied()) / self.values.len() as f64
    }

    /// Writes the snapshot CSV: `index,x,value` or `index,j,x,y,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let g = &self.grid;
        if g.dim() == 1 {
            writeln!(out, "index,x,value")?;
            for (idx, v) in self.values.iter().enumerate() {
                writeln!(out, "{},{},{}", idx, g.center(idx)[0], v)?;
            }
        } else {
            writeln!(out, "index,j,x,y,value")?;
            for (idx, v) in self.values.iter().enumerate() {
                let (i, j) = g.coords(idx);
                let c = g.center(idx);
                writeln!(out, "{},{},{},{},{}", i, j, c[0], c[1], v)?;
            }
        }
        Ok(())
    }

    /// Reads a snapshot CSV written for `grid`. Coordinates are checked against the grid.
    pub fn read_csv<R: BufRead>(grid: Grid, input: R) -> Result<Self, GridError> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| GridError::Csv("empty file".into()))?
            .map_err(|e| GridError::Csv(e.to_string()))?;
        let expected = if grid.dim() == 1 {
            "index,x,value"
        } else {
            "index,j,x,y,value"
        };
        if header.trim() != expected {
            return Err(GridError::Csv(format!("header `{}`, expected `{expected}`", header.trim())));
        }
        let mut values = vec![f64::NAN; grid.len()];
        let mut seen = vec![false; grid.len()];
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| GridError::Csv(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.trim().split(',').collect();
            let bad = |what: &str| GridError::Csv(format!("row {}: {what}", lineno + 2));
            let parse_usize = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("bad index"));
            let parse_f64 = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
            let (idx, centre, value) = if grid.dim() == 1 {
                if cols.len() != 3 {
                    return Err(bad("expected 3 columns"));
                }
                let i = parse_usize(cols[0])?;
                if i >= grid.n(0) {
                    return Err(bad("index out of range"));
                }
                (i, [parse_f64(cols[1])?, 0.0], parse_f64(cols[2])?)
            } else {
                if cols.len() != 5 {
                    return Err(bad("expected 5 columns"));
                }
                let (i, j) = (parse_usize(cols[0])?, parse_usize(cols[1])?);
                if i >= grid.n(0) || j >= grid.n(1) {
                    return Err(bad("index out of range"));
                }
                (
                    grid.index(i, j),
                    [parse_f64(cols[2])?, parse_f64(cols[3])?],
                    parse_f64(cols[4])?,
                )
            };
            let c = grid.center(idx);
            let tol = 1e-9 * grid.h_max();
            if (c[0] - centre[0]).abs() > tol || (c[1] - centre[1]).abs() > tol {
                return Err(bad("coordinates do not match the grid"));
            }
            values[idx] = value;
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(GridError::Csv(format!("no row for cell {missing}")));
        }
        Field::new(grid, values)
    }
}

/// Applies the Neumann Laplacian to raw cell values.
pub(crate) fn apply_laplacian(grid: &Grid, f: &[f64], out: &mut [f64]) {
    for (idx, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for axis in 0..grid.dim() {
            let (lo, hi) = grid.neighbours(idx, axis);
            let h = grid.h(axis);
            acc += (f[lo] - 2.0 * f[idx] + f[hi]) / (h * h);
        }
        *o = acc;
    }
}

/// 3-point (1D) / 5-point (2D) Laplacian with mirror ghost cells.
pub fn laplacian_neumann(f: &Field) -> Field {
    let mut out = vec![0.0; f.values.len()];
    apply_laplacian(&f.grid, &f.values, &mut out);
    Field {
        grid: f.grid,
        values: out,
    }
}

/// Midpoint rule `∫_Ω f`.
pub fn integrate(f: &Field) -> f64 {
    ksum(f.values.iter().copied()) * f.grid.cell_volume()
}

/// Midpoint rule `∫_Ω f g`.
pub fn integrate_product(f: &Field, g: &Field) -> f64 {
    ksum(f.values.iter().zip(&g.values).map(|(a, b)| a * b)) * f.grid.cell_volume()
}

/// Face-difference bilinear form `Σ_faces (Δf)(Δg)/h² · |cell|`, the discrete `∫ ∇f·∇g`.
pub fn grad_bilinear(f: &Field, g: &Field) -> f64 {
    grad_bilinear_raw(&f.grid, &f.values, &g.values)
}

pub(crate) fn grad_bilinear_raw(grid: &Grid, f: &[f64], g: &[f64]) -> f64 {
    let mut s = CompensatedSum::new();
    for face in grid.faces() {
        let h = grid.h(face.axis);
        s.add((f[face.right] - f[face.left]) * (g[face.right] - g[face.left]) / (h * h));
    }
    s.value() * grid.cell_volume()
}

/// Discrete `∫ |∇f|²`; Neumann boundary faces contribute nothing.
pub fn grad_sq_integral(f: &Field) -> f64 {
    grad_bilinear(f, f)
}

/// Solves `−Δ_h φ = f − ⟨f⟩` with `⟨φ⟩ = 0`.
pub fn poisson_neumann_solve(f: &Field) -> Result<Field, GridError> {
    let grid = f.grid;
    let mean = f.mean();
    let rhs: Vec<f64> = f.values.iter().map(|v| v - mean).collect();
    let mut phi = if grid.dim() == 1 {
        poisson_1d(&grid, &rhs)
    } else {
        let op = |x: &[f64], y: &mut [f64]| {
            apply_laplacian(&grid, x, y);
            y.iter_mut().for_each(|v| *v = -*v);
        };
        let diag: Vec<f64> = (0..grid.len())
            .map(|idx| {
                let mut d = 0.0;
                for axis in 0..grid.dim() {
                    let (lo, hi) = grid.neighbours(idx, axis);
                    let h2 = grid.h(axis).powi(2);
                    d += ((lo != idx) as u8 + (hi != idx) as u8) as f64 / h2;
                }
                d
            })
            .collect();
        let tol = 1e-13 * f.max_abs().max(f64::MIN_POSITIVE);
        linalg::pcg_zero_mean(op, &diag, &rhs, tol, 20 * grid.len() + 100)
            .map_err(GridError::SolverFailure)?
    };
    let phi_mean = ksum(phi.iter().copied()) / phi.len() as f64;
    phi.iter_mut().for_each(|v| *v -= phi_mean);
    Field::new(grid, phi)
}

/// Direct solve of the 1D Neumann problem: the tridiagonal system reduces to
/// a flux recursion since the first face flux is zero.
fn poisson_1d(grid: &Grid, rhs: &[f64]) -> Vec<f64> {
    let h = grid.h(0);
    let mut phi = vec![0.0; rhs.len()];
    let mut partial = CompensatedSum::new();
    for i in 0..rhs.len() - 1 {
        partial.add(rhs[i]);
        // flux (φ_{i+1} − φ_i)/h = −h Σ_{j≤i} rhs_j
        phi[i + 1] = phi[i] - h * h * partial.value();
    }
    phi
}

/// `‖f − ⟨f⟩‖_{H⁻¹}` together with the mean that was removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualNorm {
    pub value: f64,
    pub removed_mean: f64,
}

/// Zero-mean dual norm `sqrt(∫|∇φ|²)` with `−Δ_h φ = f − ⟨f⟩`.
pub fn h_minus1_norm(f: &Field) -> Result<DualNorm, GridError> {
    let phi = poisson_neumann_solve(f)?;
    Ok(DualNorm {
        value: grad_sq_integral(&phi).max(0.0).sqrt(),
        removed_mean: f.mean(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn line(n: usize, l: f64) -> Grid {
        Grid::line(n, l).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(Grid::line(2, 1.0).is_err());
        assert!(Grid::line(3, 0.0).is_err());
        assert!(Grid::uniform(3, 8, 1.0).is_err());
        let g = Grid::rect(4, 5, 2.0, 1.0).unwrap();
        assert_eq!(g.len(), 20);
        assert_eq!(g.faces().count(), 3 * 5 + 4 * 4);
        assert!((g.volume() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_field_has_zero_laplacian() {
        for g in [line(7, 2.0), Grid::rect(5, 6, 1.0, 3.0).unwrap()] {
            let lap = laplacian_neumann(&Field::constant(g, 3.25));
            assert!(lap.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn cosine_is_discrete_eigenvector() {
        let (n, l) = (40, 2.0);
        let g = line(n, l);
        let h = g.h(0);
        let f = Field::from_fn(g, |x| (PI * x[0] / l).cos());
        let lap = laplacian_neumann(&f);
        let lambda = -(2.0 / (h * h)) * (1.0 - (PI * h / l).cos());
        for (a, b) in lap.values().iter().zip(f.values()) {
            assert!((a - lambda * b).abs() < 1e-12 * lambda.abs().max(1.0), "{a} vs {}", lambda * b);
        }
    }

    #[test]
    fn quadratic_has_constant_second_difference() {
        let g = line(16, 1.0);
        let f = Field::from_fn(g, |x| x[0] * x[0]);
        let lap = laplacian_neumann(&f);
        for i in 1..15 {
            assert!((lap.values()[i] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn midpoint_quadrature() {
        for n in [3, 10, 33] {
            assert!((integrate(&Field::constant(line(n, 2.0), 1.0)) - 2.0).abs() < 1e-14);
        }
        assert_eq!(integrate(&Field::zeros(line(5, 1.0))), 0.0);
        for n in [8, 16, 64] {
            let g = line(n, 1.0);
            let f = Field::from_fn(g, |x| (PI * x[0]).cos());
            let h = g.h(0);
            assert!(integrate(&f).abs() <= h * h);
        }
    }

    #[test]
    fn gradient_integrals() {
        assert_eq!(grad_sq_integral(&Field::constant(line(9, 1.0), 2.0)), 0.0);
        let (n, l, s) = (50, 3.0, 0.7);
        let g = line(n, l);
        let ramp = Field::from_fn(g, |x| s * x[0]);
        let expected = s * s * l * (1.0 - 1.0 / n as f64);
        assert!((grad_sq_integral(&ramp) - expected).abs() < 1e-12);

        let h = g.h(0);
        let cosine = Field::from_fn(g, |x| (PI * x[0] / l).cos());
        let lambda = (2.0 / (h * h)) * (1.0 - (PI * h / l).cos());
        let sum_sq: f64 = cosine.values().iter().map(|v| v * v).sum::<f64>() * h;
        assert!((grad_sq_integral(&cosine) - lambda * sum_sq).abs() < 1e-10);
    }

    #[test]
    fn poisson_residual_and_mean() {
        for g in [line(37, 1.5), Grid::rect(12, 9, 1.0, 2.0).unwrap()] {
            let f = Field::from_fn(g, |x| (3.0 * x[0]).sin() + x[1] * x[1] + 0.3);
            let phi = poisson_neumann_solve(&f).unwrap();
            let lap = laplacian_neumann(&phi);
            let mean = f.mean();
            let res = lap
                .values()
                .iter()
                .zip(f.values())
                .map(|(l, v)| (-l - (v - mean)).abs())
                .fold(0.0, f64::max);
            assert!(res <= 1e-12 * f.max_abs(), "residual {res}");
            assert!(phi.mean().abs() < 1e-14);
        }
    }

    #[test]
    fn dual_norm_of_zero() {
        let n = h_minus1_norm(&Field::zeros(line(8, 1.0))).unwrap();
        assert_eq!(n.value, 0.0);
    }

    #[test]
    fn dual_norm_of_cosine_converges_to_continuous_value() {
        // ‖cos(πx/L)‖²_{H⁻¹} = ∫f² / λ = (L/2) / (π/L)².
        let l = 2.0;
        let exact = ((l / 2.0) / (PI / l).powi(2)).sqrt();
        let mut errors = Vec::new();
        for n in [16, 32, 64] {
            let f = Field::from_fn(line(n, l), |x| (PI * x[0] / l).cos());
            let norm = h_minus1_norm(&f).unwrap().value;
            errors.push((norm - exact).abs() / exact);
        }
        assert!(errors[2] < 1e-3);
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    /// Dense pseudo-inverse of `−Δ_h`, assembled independently from the stencil definition.
    fn dense_dual_norm(grid: &Grid, f: &[f64]) -> f64 {
        let n = grid.len();
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for face in grid.faces() {
            let w = 1.0 / grid.h(face.axis).powi(2);
            m[(face.left, face.left)] += w;
            m[(face.right, face.right)] += w;
            m[(face.left, face.right)] -= w;
            m[(face.right, face.left)] -= w;
        }
        let pinv = m.pseudo_inverse(1e-10).unwrap();
        let fv = nalgebra::DVector::from_column_slice(f);
        (fv.dot(&(&pinv * &fv)) * grid.cell_volume()).sqrt()
    }

    #[test]
    fn dual_norm_matches_dense_pseudo_inverse() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for g in [line(32, 1.3), Grid::rect(8, 6, 1.0, 0.7).unwrap()] {
            let mut vals: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter_mut().for_each(|v| *v -= mean);
            let f = Field::new(g, vals.clone()).unwrap();
            let ours = h_minus1_norm(&f).unwrap().value;
            let oracle = dense_dual_norm(&g, &vals);
            assert!((ours - oracle).abs() < 1e-9 * oracle, "{ours} vs {oracle}");
        }
    }

    #[test]
    fn csv_round_trip() {
        for g in [line(5, 1.0), Grid::rect(3, 4, 1.0, 2.0).unwrap()] {
            let f = Field::from_fn(g, |x| x[0].exp() * (1.0 + x[1]) / 3.0);
            let mut buf = Vec::new();
            f.write_csv(&mut buf).unwrap();
            let back = Field::read_csv(g, buf.as_slice()).unwrap();
            assert_eq!(f, back);
        }
        let g = line(3, 1.0);
        assert!(Field::read_csv(g, "index,x,value\n0,0.1666666666666667,1\n".as_bytes()).is_err());
        assert!(Field::read_csv(g, "i,x,v\n".as_bytes()).is_err());
    }

    fn random_grid_and_fields() -> impl Strategy<Value = (Grid, Vec<f64>, Vec<f64>)> {
        (1usize..=2, 3usize..12, 3usize..12, 0.5f64..3.0).prop_flat_map(|(dim, nx, ny, l)| {
            let g = if dim == 1 {
                Grid::line(nx, l).unwrap()
            } else {
                Grid::rect(nx, ny, l, 1.0).unwrap()
            };
            let n = g.len();
            (
                Just(g),
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn summation_by_parts((g, a, b) in random_grid_and_fields()) {
            let f = Field::new(g, a).unwrap();
            let k = Field::new(g, b).unwrap();
            let fk = integrate_product(&f, &laplacian_neumann(&k));
            let kf = integrate_product(&k, &laplacian_neumann(&f));
            let form = grad_bilinear(&f, &k);
            let scale = 1.0 + form.abs() + fk.abs();
            prop_assert!((fk - kf).abs() <= 1e-12 * scale);
            prop_assert!((fk + form).abs() <= 1e-12 * scale);
        }

        #[test]
        fn laplacian_conserves_and_dissipates((g, a, _b) in random_grid_and_fields()) {
            let f = Field::new(g, a).unwrap();
            let lap = laplacian_neumann(&f);
            let scale = 1.0 + lap.max_abs() * g.volume();
            prop_assert!(integrate(&lap).abs() <= 1e-12 * scale);
            prop_assert!(integrate_product(&f, &lap) <= 1e-12 * scale);
        }

        #[test]
        fn mirror_symmetry_commutes((g, a, _b) in random_grid_and_fields()) {
            let f = Field::new(g, a).unwrap();
            let nx = g.n(0);
            let flip = |x: &Field| {
                let mut out = x.clone();
                for idx in 0..g.len() {
                    let (i, j) = g.coords(idx);
                    out.values_mut()[idx] = x.values()[g.index(nx - 1 - i, j)];
                }
                out
            };
            let lhs = laplacian_neumann(&flip(&f));
            let rhs = flip(&laplacian_neumann(&f));
            for (p, q) in lhs.values().iter().zip(rhs.values()) {
                prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
            }
        }
    }
}
