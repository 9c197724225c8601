//! Small dense helpers and a preconditioned conjugate-gradient solver.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Row-major matrix with a fixed number of columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Factors {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn sq_norm(&self) -> f64 {
        dot(&self.data, &self.data)
    }
}

/// Accumulates `λI + Σ w·vvᵀ` and `Σ r·v` for a ridge normal-equation solve.
#[derive(Debug, Clone)]
pub struct RidgeSystem {
    pub gram: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl RidgeSystem {
    pub fn new(d: usize, lambda: f64) -> Self {
        Self {
            gram: DMatrix::identity(d, d) * lambda,
            rhs: DVector::zeros(d),
        }
    }

    pub fn add(&mut self, v: &[f64], r: f64) {
        let d = v.len();
        for a in 0..d {
            self.rhs[a] += r * v[a];
            for b in 0..d {
                self.gram[(a, b)] += v[a] * v[b];
            }
        }
    }

    pub fn factor(&self) -> Option<Cholesky<f64, Dyn>> {
        Cholesky::new(self.gram.clone())
    }

    pub fn solve(&self) -> Option<DVector<f64>> {
        self.factor().map(|c| c.solve(&self.rhs))
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final ‖b − Ax‖ / ‖b‖.
    pub rel_residual: f64,
    pub converged: bool,
    /// A search direction with pᵀAp ≤ 0 was met.
    pub negative_curvature: bool,
}

/// Preconditioned conjugate gradient for `A x = b`, `A` symmetric.
///
/// `apply` writes `A v` into its output, `precond` writes `M⁻¹ r`. Stops when
/// the relative residual drops below `tol` or after `max_iter` iterations.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return CgOutcome {
            x,
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
            negative_curvature: false,
        };
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = 1.0;
    for it in 0..max_iter {
        apply(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if curvature <= 0.0 {
            return CgOutcome {
                x,
                iterations: it,
                rel_residual: rel,
                converged: false,
                negative_curvature: true,
            };
        }
        let alpha = rz / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        rel = norm(&r) / b_norm;
        if rel <= tol {
            return CgOutcome {
                x,
                iterations: it + 1,
                rel_residual: rel,
                converged: true,
                negative_curvature: false,
            };
        }
        precond(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    CgOutcome {
        x,
        iterations: max_iter,
        rel_residual: rel,
        converged: false,
        negative_curvature: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_matches_dense_solve() {
        let n = 12;
        let m = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        let a = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
        let b: Vec<f64> = (0..n).map(|k| (k as f64).sin()).collect();
        let out = pcg(
            |v, out| {
                let r = &a * DVector::from_column_slice(v);
                out.copy_from_slice(r.as_slice());
            },
            |r, z| z.copy_from_slice(r),
            &b,
            1e-12,
            200,
        );
        assert!(out.converged);
        let exact = a.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for (x, e) in out.x.iter().zip(exact.iter()) {
            assert!((x - e).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_flags_indefinite_operator() {
        let out = pcg(
            |v, out| {
                out[0] = v[0];
                out[1] = -v[1];
            },
            |r, z| z.copy_from_slice(r),
            &[0.0, 1.0],
            1e-12,
            10,
        );
        assert!(out.negative_curvature);
    }

    #[test]
    fn ridge_without_data_gives_zero() {
        let sys = RidgeSystem::new(3, 0.1);
        let x = sys.solve().unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
    }
}
