//! Sparse linear algebra for the Newton and dual solves.

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

/// Row-by-row CSR assembly; duplicate entries within a row are summed.
#[derive(Debug, Clone)]
pub struct CsrBuilder {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl CsrBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.rows[i].push((j, v));
    }

    pub fn build(self) -> Csr {
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in self.rows {
            row.sort_by_key(|e| e.0);
            for (j, v) in row {
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == j {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Csr {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

impl Csr {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match r.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    /// Largest `|i − j|` below and above the diagonal.
    pub fn bandwidth(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n {
            for &j in &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]] {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }
}

/// LU factorisation with partial pivoting of a banded matrix.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    width: usize,
    // Row i holds columns i − kl .. i − kl + width.
    band: Vec<f64>,
    pivots: Vec<usize>,
    multipliers: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &Csr) -> Result<Self, String> {
        let n = a.n;
        let (kl, ku) = a.bandwidth();
        // Pivoting can widen the upper band by kl.
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.cols[k];
                band[i * width + (j + kl - i)] = a.vals[k];
            }
        }
        let at = |i: usize, j: usize| i * width + (j + kl - i);
        let mut pivots = vec![0; n];
        let mut multipliers = vec![0.0; n * kl.max(1)];
        let scale = a.vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = band[at(k, k)].abs();
            for i in k + 1..=last_row {
                let v = band[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-300 || best < f64::EPSILON * 1e-6 * scale {
                return Err(format!("singular pivot at row {k}"));
            }
            pivots[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    band.swap(at(k, j), at(p, j));
                }
            }
            let piv = band[at(k, k)];
            for i in k + 1..=last_row {
                let m = band[at(i, k)] / piv;
                multipliers[k * kl.max(1) + (i - k - 1)] = m;
                band[at(i, k)] = 0.0;
                if m != 0.0 {
                    for j in k + 1..=last_col {
                        band[at(i, j)] -= m * band[at(k, j)];
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            width,
            band,
            pivots,
            multipliers,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, w) = (self.n, self.kl, self.width);
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let last_row = (k + kl).min(n - 1);
            for i in k + 1..=last_row {
                x[i] -= self.multipliers[k * kl.max(1) + (i - k - 1)] * x[k];
            }
        }
        let ku_eff = w - kl - 1;
        for k in (0..n).rev() {
            let mut s = x[k];
            let last_col = (k + ku_eff).min(n - 1);
            for j in k + 1..=last_col {
                s -= self.band[k * w + (j + kl - k)] * x[j];
            }
            x[k] = s / self.band[k * w + kl];
        }
        x
    }
}

/// Incomplete LU with zero fill on the sparsity pattern of `a`.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: Csr,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Result<Self, String> {
        let mut lu = a.clone();
        let n = lu.n;
        let mut diag = vec![usize::MAX; n];
        for (i, d) in diag.iter_mut().enumerate() {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.cols[k] == i {
                    *d = k;
                }
            }
            if *d == usize::MAX {
                return Err(format!("missing diagonal in row {i}"));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                pos[lu.cols[k]] = k;
            }
            for k in start..end {
                let j = lu.cols[k];
                if j >= i {
                    break;
                }
                let pivot = lu.vals[diag[j]];
                if pivot == 0.0 {
                    return Err(format!("zero pivot in row {j}"));
                }
                let m = lu.vals[k] / pivot;
                lu.vals[k] = m;
                for kk in diag[j] + 1..lu.row_ptr[j + 1] {
                    let c = lu.cols[kk];
                    if pos[c] != usize::MAX && pos[c] >= start && pos[c] < end {
                        lu.vals[pos[c]] -= m * lu.vals[kk];
                    }
                }
            }
            for k in start..end {
                pos[lu.cols[k]] = usize::MAX;
            }
            if lu.vals[diag[i]] == 0.0 {
                return Err(format!("zero pivot in row {i}"));
            }
        }
        Ok(Self { lu, diag })
    }

    pub fn apply(&self, b: &[f64], x: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = b[i];
            for k in lu.row_ptr[i]..self.diag[i] {
                s -= lu.vals[k] * x[lu.cols[k]];
            }
            x[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = x[i];
            for k in self.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.vals[k] * x[lu.cols[k]];
            }
            x[i] = s / lu.vals[self.diag[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Restarted GMRES with right ILU(0) preconditioning.
pub fn gmres(a: &Csr, b: &[f64], rel_tol: f64, restart: usize, max_iter: usize) -> Result<Vec<f64>, String> {
    let n = a.n;
    let pre = Ilu0::new(a)?;
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let target = rel_tol * bnorm;
    let mut r = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut total = 0;
    loop {
        a.matvec(&x, &mut tmp);
        for i in 0..n {
            r[i] = b[i] - tmp[i];
        }
        let beta = norm(&r);
        if beta <= target {
            return Ok(x);
        }
        if total >= max_iter {
            return Err(format!("GMRES stalled at relative residual {:.3e}", beta / bnorm));
        }
        let m = restart.min(n);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut z = vec![0.0; n];
        let mut k_used = 0;
        for k in 0..m {
            pre.apply(&basis[k], &mut z);
            let mut w = vec![0.0; n];
            a.matvec(&z, &mut w);
            for (i, v) in basis.iter().enumerate() {
                let hik = dot(&w, v);
                h[i][k] = hik;
                for (wj, vj) in w.iter_mut().zip(v) {
                    *wj -= hik * vj;
                }
            }
            let wn = norm(&w);
            h[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = h[k][k].hypot(h[k + 1][k]);
            if d == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            total += 1;
            if g[k + 1].abs() <= 0.5 * target || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (yi, v) in y.iter().zip(&basis) {
            for (u, vj) in update.iter_mut().zip(v) {
                *u += yi * vj;
            }
        }
        pre.apply(&update, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        if k_used == 0 {
            return Err("GMRES breakdown".into());
        }
    }
}

/// Tridiagonal solve (Thomas); `lower[0]` and `upper[n−1]` are ignored.
pub fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Jacobi-preconditioned CG for a symmetric semidefinite operator whose
/// kernel is the constants; iterates are kept mean-free.
pub(crate) fn pcg_zero_mean(
    op: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    rhs: &[f64],
    abs_tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, String> {
    let n = rhs.len();
    let project = |v: &mut [f64]| {
        let m = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|x| *x -= m);
    };
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    project(&mut r);
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(a, d)| a / d).collect();
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= abs_tol {
            return Ok(x);
        }
        op(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        project(&mut r);
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // Recompute the true residual before giving up.
    op(&x, &mut ap);
    let res = ap
        .iter()
        .zip(rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if res <= 10.0 * abs_tol {
        Ok(x)
    } else {
        Err(format!("PCG did not converge, residual {res:.3e}"))
    }
}
