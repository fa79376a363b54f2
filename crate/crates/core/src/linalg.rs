//! Small dense kernels and a banded Cholesky factorization.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y = A x` for a row-major `n x n` block.
#[inline]
pub fn block_matvec(block: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    for (m, ym) in y.iter_mut().enumerate().take(n) {
        let row = &block[m * n..(m + 1) * n];
        *ym = dot(row, x);
    }
}

/// `y += A x` for a row-major `n x n` block.
#[inline]
pub fn block_matvec_add(block: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    for (m, ym) in y.iter_mut().enumerate().take(n) {
        let row = &block[m * n..(m + 1) * n];
        *ym += dot(row, x);
    }
}

/// `y -= A x` for a row-major `n x n` block.
#[inline]
pub fn block_matvec_sub(block: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    for (m, ym) in y.iter_mut().enumerate().take(n) {
        let row = &block[m * n..(m + 1) * n];
        *ym -= dot(row, x);
    }
}

/// Inverse of a small row-major matrix by LU with partial pivoting.
pub fn small_inverse(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut lu = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::NumericalFailure("singular local block".into()));
    }
    for k in 0..n {
        let (p, pv) = (k..n)
            .map(|i| (i, lu[i * n + k].abs()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if pv <= scale * 1e-14 {
            return Err(Error::NumericalFailure("singular local block".into()));
        }
        if p != k {
            for c in 0..n {
                lu.swap(k * n + c, p * n + c);
            }
            perm.swap(k, p);
        }
        let piv = lu[k * n + k];
        for i in k + 1..n {
            let f = lu[i * n + k] / piv;
            lu[i * n + k] = f;
            for c in k + 1..n {
                lu[i * n + c] -= f * lu[k * n + c];
            }
        }
    }
    let mut inv = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for e in 0..n {
        for (i, ci) in col.iter_mut().enumerate() {
            *ci = if perm[i] == e { 1.0 } else { 0.0 };
        }
        for i in 0..n {
            let mut s = col[i];
            for c in 0..i {
                s -= lu[i * n + c] * col[c];
            }
            col[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for c in i + 1..n {
                s -= lu[i * n + c] * col[c];
            }
            col[i] = s / lu[i * n + i];
        }
        for i in 0..n {
            inv[i * n + e] = col[i];
        }
    }
    Ok(inv)
}

/// Cholesky factor of a symmetric positive definite banded matrix.
///
/// Storage is the lower band: row `i` holds entries `(i, i - bw ..= i)`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factorizes the matrix given as `(row, col, value)` triplets (duplicates summed).
    /// Only the lower triangle (`col <= row`) is read.
    pub fn factor(n: usize, bw: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for &(i, j, v) in triplets {
            if j <= i {
                if i - j > bw {
                    return Err(Error::NumericalFailure(format!(
                        "entry ({i},{j}) outside bandwidth {bw}"
                    )));
                }
                band[i * w + (bw - (i - j))] += v;
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = band[i * w + (bw - (i - j))];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= band[i * w + (bw - (i - k))] * band[j * w + (bw - (j - k))];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NumericalFailure(format!(
                            "diffusion matrix not positive definite at row {i}"
                        )));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (bw - (i - j))] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut x = rhs.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.band[i * w + (bw - (i - k))] * x[k];
            }
            x[i] = s / self.band[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= self.band[k * w + (bw - (k - i))] * x[k];
            }
            x[i] = s / self.band[i * w + bw];
        }
        x
    }
}

/// LU factorization with partial pivoting of a general band matrix.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    /// upper bandwidth of `U` after pivoting (`ku + kl`)
    ku: usize,
    /// row `i` stores columns `i - kl ..= i + ku`
    rows: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Factorizes the matrix given as triplets (duplicates summed) with lower/upper bandwidths `kl`, `ku`.
    pub fn factor(
        n: usize,
        kl: usize,
        ku: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let kuf = ku + kl;
        let w = kl + kuf + 1;
        let mut rows = vec![0.0; n * w];
        for &(i, j, v) in triplets {
            if j + kl < i || j > i + ku {
                return Err(Error::NumericalFailure(format!(
                    "entry ({i},{j}) outside band"
                )));
            }
            rows[i * w + (j + kl - i)] += v;
        }
        let at = |i: usize, j: usize| i * w + (j + kl - i);
        let scale = rows.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut piv = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let (mut p, mut pv) = (k, 0.0);
            for i in k..=last {
                let v = rows[at(i, k)].abs();
                if v > pv {
                    p = i;
                    pv = v;
                }
            }
            if pv <= scale * 1e-15 || !pv.is_finite() {
                return Err(Error::NumericalFailure(format!(
                    "singular band matrix at column {k}"
                )));
            }
            piv[k] = p;
            let cend = (k + kuf).min(n - 1);
            if p != k {
                for j in k..=cend {
                    let (a, b) = (at(k, j), at(p, j));
                    rows.swap(a, b);
                }
            }
            let d = rows[at(k, k)];
            for i in k + 1..=last {
                let f = rows[at(i, k)] / d;
                rows[at(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..=cend {
                        rows[at(i, j)] -= f * rows[at(k, j)];
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku: kuf,
            rows,
            piv,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let w = kl + ku + 1;
        let at = |i: usize, j: usize| i * w + (j + kl - i);
        let mut x = rhs.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                x[i] -= self.rows[at(i, k)] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + ku).min(n - 1) {
                s -= self.rows[at(k, j)] * x[j];
            }
            x[k] = s / self.rows[at(k, k)];
        }
        x
    }
}
