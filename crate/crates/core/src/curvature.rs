//! Gradient and Hessian-vector products of the factorization objective with
//! respect to the stacked parameter vector `θ = [x_0 … x_{U-1}, y_0 … y_{I-1}]`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::linalg::{dot, pcg, CgOutcome, Factors, RidgeSystem};
use crate::mf::Observations;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianKind {
    /// `2Σ g_e g_eᵀ + 2λI`, positive definite for λ > 0.
    GaussNewton,
    /// Adds the residual cross terms `−2ρ_e` between `x_u` and `y_i`.
    Exact,
}

/// Curvature of `F(θ) = Σ (r − x_uᵀy_i)² + λ‖θ‖²` at a fixed point, plus
/// `damping·I`.
pub struct Curvature<'a> {
    obs: &'a Observations,
    x: &'a Factors,
    y: &'a Factors,
    lambda: f64,
    damping: f64,
    kind: HessianKind,
    blocks: Vec<Cholesky<f64, Dyn>>,
}

impl<'a> Curvature<'a> {
    pub fn new(
        obs: &'a Observations,
        x: &'a Factors,
        y: &'a Factors,
        lambda: f64,
        damping: f64,
        kind: HessianKind,
    ) -> Self {
        let d = x.cols();
        let block = |rows: &[(usize, f64)], other: &Factors| {
            let mut sys = RidgeSystem::new(d, lambda);
            for &(b, _) in rows {
                sys.add(other.row(b), 0.0);
            }
            let m = sys.gram * 2.0 + DMatrix::identity(d, d) * damping;
            Cholesky::new(m.clone())
                .unwrap_or_else(|| Cholesky::new(m + DMatrix::identity(d, d) * 1e-12).unwrap())
        };
        let mut blocks: Vec<_> = obs.by_user.par_iter().map(|r| block(r, y)).collect();
        blocks.extend(obs.by_item.par_iter().map(|r| block(r, x)).collect::<Vec<_>>());
        Self {
            obs,
            x,
            y,
            lambda,
            damping,
            kind,
            blocks,
        }
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn dim(&self) -> usize {
        (self.x.rows() + self.y.rows()) * self.d()
    }

    /// Offset of user `u`'s block in θ.
    pub fn user_offset(&self, u: usize) -> usize {
        u * self.d()
    }

    /// Offset of item `i`'s block in θ.
    pub fn item_offset(&self, i: usize) -> usize {
        (self.x.rows() + i) * self.d()
    }

    /// `∇F(θ)`.
    pub fn gradient(&self) -> Vec<f64> {
        let d = self.d();
        let mut g = vec![0.0; self.dim()];
        let (gx, gy) = g.split_at_mut(self.x.rows() * d);
        side_gradient(&self.obs.by_user, self.x, self.y, self.lambda, gx);
        side_gradient(&self.obs.by_item, self.y, self.x, self.lambda, gy);
        g
    }

    /// `out = (H + damping·I) v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let d = self.d();
        let split = self.x.rows() * d;
        let (vx, vy) = v.split_at(split);
        let (ox, oy) = out.split_at_mut(split);
        let exact = self.kind == HessianKind::Exact;
        let scale = 2.0 * self.lambda + self.damping;
        side_apply(&self.obs.by_user, self.x, self.y, vx, vy, scale, exact, ox);
        side_apply(&self.obs.by_item, self.y, self.x, vy, vx, scale, exact, oy);
    }

    /// Block-Jacobi preconditioner built from the Gauss-Newton diagonal blocks.
    pub fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let d = self.d();
        z.par_chunks_mut(d)
            .zip(r.par_chunks(d))
            .zip(self.blocks.par_iter())
            .for_each(|((zb, rb), chol)| {
                let s = chol.solve(&DVector::from_column_slice(rb));
                zb.copy_from_slice(s.as_slice());
            });
    }

    pub fn solve(&self, b: &[f64], tol: f64, max_iter: usize) -> CgOutcome {
        pcg(
            |v, out| self.apply(v, out),
            |r, z| self.precondition(r, z),
            b,
            tol,
            max_iter,
        )
    }

    /// Dense `H + damping·I`, assembled column by column.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        // Symmetrize away summation-order noise.
        (&m + m.transpose()) * 0.5
    }
}

/// Direct factorization of `H + damping·I`. The side with more blocks is
/// eliminated through its block-diagonal part; the dense Schur complement
/// over the other side is Cholesky-factored.
pub struct Eliminated {
    keep_items: bool,
    schur: Cholesky<f64, Dyn>,
}

impl Curvature<'_> {
    /// Size of the dense system left after elimination.
    pub fn reduced_dim(&self) -> usize {
        self.x.rows().min(self.y.rows()) * self.d()
    }

    fn sides(&self, keep_items: bool) -> Side<'_> {
        let nu = self.x.rows();
        if keep_items {
            Side { rows: &self.obs.by_user, own: self.x, other: self.y, blocks: &self.blocks[..nu], own_off: 0, other_off: nu * self.d() }
        } else {
            Side { rows: &self.obs.by_item, own: self.y, other: self.x, blocks: &self.blocks[nu..], own_off: nu * self.d(), other_off: 0 }
        }
    }

    /// Cross block between eliminated block `a` and kept block `b`, rows
    /// indexed by `a`'s coordinates.
    fn cross(&self, side: &Side, a: usize, b: usize, r: f64) -> DMatrix<f64> {
        let d = self.d();
        let (fa, fb) = (side.own.row(a), side.other.row(b));
        let mut m = DMatrix::from_fn(d, d, |k, l| 2.0 * fb[k] * fa[l]);
        if self.kind == HessianKind::Exact {
            let rho = r - dot(fa, fb);
            for k in 0..d {
                m[(k, k)] -= 2.0 * rho;
            }
        }
        m
    }

    /// `None` when the reduced system is not positive definite, which for
    /// the exact Hessian means `H + damping·I` is indefinite.
    pub fn eliminate(&self) -> Option<Eliminated> {
        let d = self.d();
        let keep_items = self.x.rows() >= self.y.rows();
        let side = self.sides(keep_items);
        let nk = side.other.rows();
        let mut s = DMatrix::<f64>::zeros(nk * d, nk * d);
        let diag = 2.0 * self.lambda + self.damping;
        for (a, row) in side.rows.iter().enumerate() {
            let fa = side.own.row(a);
            let cross: Vec<DMatrix<f64>> = row.iter().map(|&(b, r)| self.cross(&side, a, b, r)).collect();
            let solved: Vec<DMatrix<f64>> = cross.iter().map(|c| side.blocks[a].solve(c)).collect();
            for (p, &(b, _)) in row.iter().enumerate() {
                // kept block's own curvature from this edge
                for k in 0..d {
                    for l in 0..d {
                        s[(b * d + k, b * d + l)] += 2.0 * fa[k] * fa[l];
                    }
                }
                for (q, &(b2, _)) in row.iter().enumerate() {
                    let update = cross[p].transpose() * &solved[q];
                    let mut view = s.view_mut((b * d, b2 * d), (d, d));
                    view -= update;
                }
            }
        }
        for k in 0..nk * d {
            s[(k, k)] += diag;
        }
        let s = (&s + s.transpose()) * 0.5;
        Cholesky::new(s).map(|schur| Eliminated { keep_items, schur })
    }

    /// Solves `(H + damping·I) s = b` with a factorization from [`eliminate`].
    pub fn solve_eliminated(&self, e: &Eliminated, b: &[f64]) -> Vec<f64> {
        let d = self.d();
        let side = self.sides(e.keep_items);
        let nk = side.other.rows();
        let own_b = |a: usize| DVector::from_column_slice(&b[side.own_off + a * d..side.own_off + (a + 1) * d]);
        let mut rhs = DVector::from_column_slice(&b[side.other_off..side.other_off + nk * d]);
        for (a, row) in side.rows.iter().enumerate() {
            let t = side.blocks[a].solve(&own_b(a));
            for &(k, r) in row {
                let upd = self.cross(&side, a, k, r).transpose() * &t;
                let mut seg = rhs.rows_mut(k * d, d);
                seg -= upd;
            }
        }
        let kept = e.schur.solve(&rhs);
        let mut out = vec![0.0; b.len()];
        out[side.other_off..side.other_off + nk * d].copy_from_slice(kept.as_slice());
        for (a, row) in side.rows.iter().enumerate() {
            let mut v = own_b(a);
            for &(k, r) in row {
                v -= self.cross(&side, a, k, r) * kept.rows(k * d, d);
            }
            let sa = side.blocks[a].solve(&v);
            out[side.own_off + a * d..side.own_off + (a + 1) * d].copy_from_slice(sa.as_slice());
        }
        out
    }
}

struct Side<'s> {
    rows: &'s [Vec<(usize, f64)>],
    own: &'s Factors,
    other: &'s Factors,
    blocks: &'s [Cholesky<f64, Dyn>],
    own_off: usize,
    other_off: usize,
}

fn side_gradient(rows: &[Vec<(usize, f64)>], own: &Factors, other: &Factors, lambda: f64, out: &mut [f64]) {
    let d = own.cols();
    out.par_chunks_mut(d).enumerate().for_each(|(a, g)| {
        let xa = own.row(a);
        for k in 0..d {
            g[k] = 2.0 * lambda * xa[k];
        }
        for &(b, r) in &rows[a] {
            let yb = other.row(b);
            let rho = r - dot(xa, yb);
            for k in 0..d {
                g[k] -= 2.0 * rho * yb[k];
            }
        }
    });
}

#[allow(clippy::too_many_arguments)]
fn side_apply(
    rows: &[Vec<(usize, f64)>],
    own: &Factors,
    other: &Factors,
    v_own: &[f64],
    v_other: &[f64],
    diag: f64,
    exact: bool,
    out: &mut [f64],
) {
    let d = own.cols();
    out.par_chunks_mut(d).enumerate().for_each(|(a, o)| {
        let xa = own.row(a);
        let va = &v_own[a * d..(a + 1) * d];
        for k in 0..d {
            o[k] = diag * va[k];
        }
        for &(b, r) in &rows[a] {
            let yb = other.row(b);
            let vb = &v_other[b * d..(b + 1) * d];
            // g_eᵀv for the edge: y_bᵀ v_a + x_aᵀ v_b
            let gv = dot(yb, va) + dot(xa, vb);
            for k in 0..d {
                o[k] += 2.0 * gv * yb[k];
            }
            if exact {
                let rho = r - dot(xa, yb);
                for k in 0..d {
                    o[k] -= 2.0 * rho * vb[k];
                }
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth, SynthSpec};
    use crate::mf::{train, TrainConfig};

    fn setup() -> (Observations, Factors, Factors) {
        let ds = synth(SynthSpec {
            seed: 2,
            n_users: 8,
            n_items: 6,
            density: 0.6,
            latent_rank: 2,
        })
        .unwrap();
        let m = train(&ds, &TrainConfig { d: 2, lambda: 0.1, sweeps: 5, seed: 1, ..Default::default() }).unwrap();
        (Observations::from_dataset(&ds), m.x, m.y)
    }

    fn objective(obs: &Observations, theta: &[f64], nu: usize, d: usize, lambda: f64) -> f64 {
        let (xs, ys) = theta.split_at(nu * d);
        let x = Factors::from_vec(nu, d, xs.to_vec());
        let y = Factors::from_vec(ys.len() / d, d, ys.to_vec());
        obs.objective(&x, &y, lambda)
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let (obs, x, y) = setup();
        let lambda = 0.1;
        let c = Curvature::new(&obs, &x, &y, lambda, 0.0, HessianKind::Exact);
        let theta: Vec<f64> = x.as_slice().iter().chain(y.as_slice()).copied().collect();
        let g = c.gradient();
        let h = c.dense();
        let eps = 1e-5;
        for j in 0..theta.len() {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[j] += eps;
            m[j] -= eps;
            let fd = (objective(&obs, &p, x.rows(), 2, lambda) - objective(&obs, &m, x.rows(), 2, lambda)) / (2.0 * eps);
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()), "grad {j}: {fd} vs {}", g[j]);
        }
        // Hessian column j against a difference of gradients.
        for j in 0..theta.len() {
            let shift = |delta: f64| {
                let mut t = theta.clone();
                t[j] += delta;
                let (xs, ys) = t.split_at(x.rows() * 2);
                let xf = Factors::from_vec(x.rows(), 2, xs.to_vec());
                let yf = Factors::from_vec(y.rows(), 2, ys.to_vec());
                Curvature::new(&obs, &xf, &yf, lambda, 0.0, HessianKind::Exact).gradient()
            };
            let gp = shift(eps);
            let gm = shift(-eps);
            for i in 0..theta.len() {
                let fd = (gp[i] - gm[i]) / (2.0 * eps);
                assert!((fd - h[(i, j)]).abs() < 1e-5 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn gauss_newton_is_positive_definite() {
        let (obs, x, y) = setup();
        let c = Curvature::new(&obs, &x, &y, 0.1, 0.0, HessianKind::GaussNewton);
        let h = c.dense();
        assert!(Cholesky::new(h).is_some());
    }

    #[test]
    fn elimination_matches_dense_solve() {
        for (nu, ni) in [(8, 6), (5, 9)] {
            let ds = synth(SynthSpec { seed: 4, n_users: nu, n_items: ni, density: 0.6, latent_rank: 2 }).unwrap();
            let m = train(&ds, &TrainConfig { d: 2, lambda: 0.1, sweeps: 30, seed: 1, ..Default::default() }).unwrap();
            let obs = Observations::from_dataset(&ds);
            for kind in [HessianKind::GaussNewton, HessianKind::Exact] {
                let c = Curvature::new(&obs, &m.x, &m.y, 0.1, 1e-3, kind);
                let Some(e) = c.eliminate() else {
                    assert_eq!(kind, HessianKind::Exact);
                    continue;
                };
                let b: Vec<f64> = (0..c.dim()).map(|k| ((k * 7 % 5) as f64) - 2.0).collect();
                let s = c.solve_eliminated(&e, &b);
                let mut hs = vec![0.0; c.dim()];
                c.apply(&s, &mut hs);
                for k in 0..c.dim() {
                    assert!((hs[k] - b[k]).abs() < 1e-9, "{nu}x{ni} {kind:?}: {} vs {}", hs[k], b[k]);
                }
            }
        }
    }
}
