//! Symmetric positive-definite banded matrices and their Cholesky factors.
//!
//! Storage is the lower band only: row `i` keeps columns `i - bw ..= i`.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SymBanded {
    n: usize,
    bw: usize,
    // (n, bw + 1) row-major; entry (i, j) with j <= i lives at i * (bw + 1) + (bw - (i - j)).
    data: Vec<f64>,
}

impl SymBanded {
    /// Build from a function of `(i, j)` evaluated for `i - bw <= j <= i`.
    pub fn from_fn(n: usize, bw: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        let w = bw + 1;
        let mut data = vec![0.0; n * w];
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                data[i * w + bw - (i - j)] = f(i, j);
            }
        }
        Self { n, bw, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[i * (self.bw + 1) + self.bw - (i - j)]
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let hi = (i + self.bw).min(self.n - 1);
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                acc += self.get(i, j) * xj;
            }
            y[i] = acc;
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Banded Cholesky `A = G Gᵀ`. Fails on a non-positive pivot.
    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut g = self.data.clone();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = g[i * w + bw - (i - j)];
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= g[i * w + bw - (i - k)] * g[j * w + bw - (j - k)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::Numerical {
                            detail: format!("matrix is not positive definite (pivot {s:e} at row {i})"),
                            residual: f64::NAN,
                        });
                    }
                    g[i * w + bw] = s.sqrt();
                } else {
                    g[i * w + bw - (i - j)] = s / g[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, g })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    g: Vec<f64>,
}

impl BandedCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "right-hand side has wrong length");
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.g[i * w + bw - (i - k)] * x[k];
            }
            x[i] = s / self.g[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.g[k * w + bw - (k - i)] * x[k];
            }
            x[i] = s / self.g[i * w + bw];
        }
        x
    }
}

/// Solve `A x = b`, checking the residual against `1e-8 * max(1, |x|_inf)`.
pub fn solve_checked(a: &SymBanded, fac: &BandedCholesky, b: &[f64]) -> Result<Vec<f64>> {
    let x = fac.solve(b);
    let r = residual_inf(a, &x, b);
    let scale = x.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    if !(r <= 1e-8 * scale) {
        return Err(Error::Numerical {
            detail: "banded solve residual too large".into(),
            residual: r,
        });
    }
    Ok(x)
}

pub fn residual_inf(a: &SymBanded, x: &[f64], b: &[f64]) -> f64 {
    a.mul_vec(x)
        .iter()
        .zip(b)
        .fold(0.0_f64, |m, (ax, bi)| m.max((ax - bi).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            b.swap(c, piv);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn matches_dense_elimination() {
        for (n, bw) in [(1, 0), (5, 1), (9, 2), (12, 4), (7, 10)] {
            let a = SymBanded::from_fn(n, bw, |i, j| {
                if i == j {
                    4.0 + i as f64 * 0.1
                } else {
                    -1.0 / (1.0 + (i - j) as f64) + 0.01 * j as f64
                }
            });
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
            let x = a.cholesky().unwrap().solve(&b);
            let y = dense_solve(a.to_dense(), b.clone());
            for (u, v) in x.iter().zip(&y) {
                assert!((u - v).abs() < 1e-12, "n={n} bw={bw}: {u} vs {v}");
            }
            assert!(residual_inf(&a, &x, &b) < 1e-13);
        }
    }

    #[test]
    fn symmetric_access() {
        let a = SymBanded::from_fn(4, 1, |i, j| (10 * i + j) as f64);
        assert_eq!(a.get(2, 1), 21.0);
        assert_eq!(a.get(1, 2), 21.0);
        assert_eq!(a.get(3, 0), 0.0);
    }

    #[test]
    fn indefinite_rejected() {
        let a = SymBanded::from_fn(2, 1, |i, j| if i == j { 1.0 } else { 2.0 });
        assert!(matches!(a.cholesky(), Err(Error::Numerical { .. })));
    }
}
