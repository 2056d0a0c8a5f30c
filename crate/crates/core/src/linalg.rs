//! Linear solvers for the moment systems.
//!
//! One factorization of `I - P_CC` is reused for all K right-hand sides.
//! Dense LU with partial pivoting below [`DENSE_LIMIT`] transient states,
//! BiCGSTAB above.

use thiserror::Error;

/// Transient-state count above which the iterative path is used.
pub const DENSE_LIMIT: usize = 2_000;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("singular system at pivot {pivot} (|{value:.3e}|)")]
    Singular { pivot: usize, value: f64 },
    #[error(
        "bicgstab stalled at residual {residual:.3e} after {iterations} iterations (tol {tolerance:.1e})"
    )]
    NoConvergence {
        residual: f64,
        iterations: usize,
        tolerance: f64,
    },
}

/// Row-major dense LU factorization with partial pivoting.
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    pivots: Vec<usize>,
}

impl DenseLu {
    pub fn factor(mut a: Vec<f64>, n: usize) -> Result<Self, LinalgError> {
        assert_eq!(a.len(), n * n, "matrix shape mismatch");
        let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        let tiny = 1e-14 * scale;
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tiny {
                return Err(LinalgError::Singular {
                    pivot: k,
                    value: best,
                });
            }
            pivots[k] = p;
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
            }
            let diag = a[k * n + k];
            for i in k + 1..n {
                let l = a[i * n + k] / diag;
                a[i * n + k] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        a[i * n + j] -= l * a[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu: a, pivots })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.pivots[k]);
        }
        // Ly = Pb (unit lower triangular)
        for i in 1..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        // Ux = y
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }
}

/// Compressed sparse row matrix.
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    /// Rows given as already-sorted `(col, value)` adjacency lists.
    pub fn from_rows(rows: &[Vec<(usize, f64)>]) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for &(c, v) in row {
                col.push(c);
                val.push(v);
            }
            row_ptr.push(col.len());
        }
        Self {
            n,
            row_ptr,
            col,
            val,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[idx] * x[self.col[idx]];
            }
            y[i] = s;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Stabilized bi-conjugate gradient on a matrix given as a matvec closure.
pub fn bicgstab(
    matvec: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, LinalgError> {
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let threshold = tol * b_norm;
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut residual = b_norm;
    for it in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            return Err(LinalgError::NoConvergence {
                residual,
                iterations: it,
                tolerance: tol,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        matvec(&p, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= threshold {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            return Ok(x);
        }
        matvec(&s, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        residual = norm(&r);
        if residual <= threshold {
            return Ok(x);
        }
        if omega.abs() < 1e-300 {
            return Err(LinalgError::NoConvergence {
                residual,
                iterations: it,
                tolerance: tol,
            });
        }
    }
    Err(LinalgError::NoConvergence {
        residual,
        iterations: max_iter,
        tolerance: tol,
    })
}
