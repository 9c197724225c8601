//! Influence of removing a training edge on the factor model's predictions
//! for a target item.
//!
//! For edge `e = (k,j)` and observer `o`,
//! `Φ(e, o) = ∇r̂_otᵀ (H + μI)⁻¹ ∇ℓ_e`, with `H` the Hessian of the training
//! objective and `ℓ_e = (r_kj − x_kᵀy_j)²`; `φ(e) = Σ_o |Φ(e, o)|`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::InfluenceReport;
use crate::curvature::{Curvature, HessianKind};
use crate::dataset::{ItemId, RatingDataset, UserId};
use crate::error::{Error, Result};
use crate::linalg::{dot, Factors};
use crate::mf::{FactorModel, Observations};

/// Which side of the bilinear form gets the inverse Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStrategy {
    /// One solve per edge: `s_e = H⁻¹∇ℓ_e`, dotted with every `∇r̂_ot`.
    PerEdge,
    /// One solve per observer: `a_o = H⁻¹∇r̂_ot`, dotted with every `∇ℓ_e`.
    PerObserver,
    /// The side with fewer solves.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    /// Exact solve by eliminating one side's blocks; falls back to conjugate
    /// gradient when the reduced system is too large to hold densely.
    Elimination,
    ConjugateGradient,
    /// Dense factorization; for small instances and tests.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceConfig {
    pub damping: f64,
    pub hessian: HessianKind,
    pub tol: f64,
    pub max_iter: usize,
    pub strategy: SolveStrategy,
    pub mode: SolverMode,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            hessian: HessianKind::GaussNewton,
            tol: 1e-8,
            max_iter: 200,
            strategy: SolveStrategy::Auto,
            mode: SolverMode::Elimination,
        }
    }
}

const DENSE_LIMIT: usize = 4000;
const REDUCED_LIMIT: usize = 6000;

/// Sparse gradient: `(x-block owner, x-part, y-block owner, y-part)`.
struct BlockPair<'a> {
    user: UserId,
    xpart: &'a [f64],
    item: ItemId,
    ypart: &'a [f64],
}

struct Setup<'a> {
    obs: Observations,
    model: &'a FactorModel,
    cfg: InfluenceConfig,
}

impl Setup<'_> {
    fn dim(&self) -> usize {
        (self.model.n_users() + self.model.n_items()) * self.model.d()
    }

    fn dense_vector(&self, g: &BlockPair, scale: f64) -> Vec<f64> {
        let d = self.model.d();
        let nu = self.model.n_users();
        let mut v = vec![0.0; self.dim()];
        for k in 0..d {
            v[g.user * d + k] += scale * g.xpart[k];
            v[(nu + g.item) * d + k] += scale * g.ypart[k];
        }
        v
    }

    /// `gᵀ s` for a sparse block pair.
    fn dot_sparse(&self, g: &BlockPair, s: &[f64]) -> f64 {
        let d = self.model.d();
        let nu = self.model.n_users();
        dot(g.xpart, &s[g.user * d..(g.user + 1) * d])
            + dot(g.ypart, &s[(nu + g.item) * d..(nu + g.item + 1) * d])
    }

    /// Solves `(H + μI) s = b` for each right-hand side, falling back to
    /// Gauss-Newton curvature if the exact Hessian proves indefinite.
    fn solve_all(&self, rhs: &[Vec<f64>], flags: &mut Vec<String>) -> Result<Vec<Vec<f64>>> {
        let m = self.model;
        let mut mode = self.cfg.mode;
        if mode == SolverMode::Elimination {
            let kinds = match self.cfg.hessian {
                HessianKind::Exact => vec![HessianKind::Exact, HessianKind::GaussNewton],
                HessianKind::GaussNewton => vec![HessianKind::GaussNewton],
            };
            for kind in kinds {
                let c = Curvature::new(&self.obs, &m.x, &m.y, m.lambda, self.cfg.damping, kind);
                if c.reduced_dim() > REDUCED_LIMIT {
                    flags.push(format!("reduced system {} too large; used conjugate gradient", c.reduced_dim()));
                    mode = SolverMode::ConjugateGradient;
                    break;
                }
                if let Some(e) = c.eliminate() {
                    if kind != self.cfg.hessian {
                        flags.push("exact Hessian indefinite; used Gauss-Newton".into());
                    }
                    return Ok(rhs.par_iter().map(|b| c.solve_eliminated(&e, b)).collect());
                }
            }
            if mode == SolverMode::Elimination {
                return Err(Error::Singular("influence Hessian".into()));
            }
        }
        match mode {
            SolverMode::Elimination => unreachable!(),
            SolverMode::Dense => {
                if self.dim() > DENSE_LIMIT {
                    return Err(Error::InvalidArgument(format!(
                        "dense influence limited to {DENSE_LIMIT} parameters, model has {}",
                        self.dim()
                    )));
                }
                let c = Curvature::new(&self.obs, &m.x, &m.y, m.lambda, self.cfg.damping, self.cfg.hessian);
                let h: DMatrix<f64> = c.dense();
                let lu = h.lu();
                rhs.par_iter()
                    .map(|b| {
                        lu.solve(&DVector::from_column_slice(b))
                            .map(|s| s.as_slice().to_vec())
                            .ok_or_else(|| Error::Singular("influence Hessian".into()))
                    })
                    .collect()
            }
            SolverMode::ConjugateGradient => {
                let run = |kind: HessianKind| {
                    let c = Curvature::new(&self.obs, &m.x, &m.y, m.lambda, self.cfg.damping, kind);
                    rhs.par_iter()
                        .map(|b| c.solve(b, self.cfg.tol, self.cfg.max_iter))
                        .collect::<Vec<_>>()
                };
                let mut outs = run(self.cfg.hessian);
                if self.cfg.hessian == HessianKind::Exact && outs.iter().any(|o| o.negative_curvature) {
                    flags.push("exact Hessian indefinite; used Gauss-Newton".into());
                    outs = run(HessianKind::GaussNewton);
                }
                let mut worst_iter = 0;
                let mut solutions = Vec::with_capacity(outs.len());
                for o in outs {
                    if !o.converged {
                        return Err(Error::NotConverged {
                            iterations: o.iterations,
                            residual: o.rel_residual,
                        });
                    }
                    worst_iter = worst_iter.max(o.iterations);
                    solutions.push(o.x);
                }
                flags.push(format!("cg solves {} max iterations {worst_iter}", solutions.len()));
                Ok(solutions)
            }
        }
    }
}

fn check(model: &FactorModel, ds: &RatingDataset, target: ItemId) -> Result<()> {
    if model.n_users() != ds.n_users() || model.n_items() != ds.n_items() {
        return Err(Error::InvalidArgument(format!(
            "model is {}x{} but dataset is {}x{}",
            model.n_users(),
            model.n_items(),
            ds.n_users(),
            ds.n_items()
        )));
    }
    if target >= ds.n_items() {
        return Err(Error::InvalidArgument(format!("unknown target item {target}")));
    }
    Ok(())
}

fn residual(model: &FactorModel, u: UserId, i: ItemId, r: u8) -> f64 {
    r as f64 - model.predict(u, i)
}

fn observer_grad<'a>(x: &'a Factors, y: &'a Factors, o: UserId, t: ItemId) -> BlockPair<'a> {
    BlockPair {
        user: o,
        xpart: y.row(t),
        item: t,
        ypart: x.row(o),
    }
}

/// `φ` for a single edge `(k, j)`.
pub fn edge_influence(
    model: &FactorModel,
    ds: &RatingDataset,
    edge: (UserId, ItemId),
    target: ItemId,
    cfg: &InfluenceConfig,
) -> Result<f64> {
    check(model, ds, target)?;
    let (k, j) = edge;
    let r = ds
        .rating(k, j)
        .ok_or_else(|| Error::InvalidArgument(format!("({k},{j}) is not a training edge")))?;
    let setup = Setup {
        obs: Observations::from_dataset(ds),
        model,
        cfg: *cfg,
    };
    let rho = residual(model, k, j, r);
    let g = observer_grad(&model.x, &model.y, k, j);
    let b = setup.dense_vector(&g, -2.0 * rho);
    let s = setup.solve_all(&[b], &mut Vec::new())?.remove(0);
    Ok((0..ds.n_users())
        .map(|o| setup.dot_sparse(&observer_grad(&model.x, &model.y, o, target), &s).abs())
        .sum())
}

/// `φ` for every training edge and `π` for every user.
pub fn influence_report(
    model: &FactorModel,
    ds: &RatingDataset,
    target: ItemId,
    cfg: &InfluenceConfig,
) -> Result<InfluenceReport> {
    check(model, ds, target)?;
    let setup = Setup {
        obs: Observations::from_dataset(ds),
        model,
        cfg: *cfg,
    };
    let (x, y) = (&model.x, &model.y);
    let n_obs = ds.n_users();
    let edges = ds.edges();
    let strategy = match cfg.strategy {
        SolveStrategy::Auto if n_obs <= edges.len() => SolveStrategy::PerObserver,
        SolveStrategy::Auto => SolveStrategy::PerEdge,
        s => s,
    };
    let mut flags = Vec::new();
    let rho: Vec<f64> = edges.iter().map(|e| residual(model, e.user, e.item, e.value)).collect();
    let phi: Vec<f64> = match strategy {
        SolveStrategy::PerObserver => {
            let rhs: Vec<Vec<f64>> = (0..n_obs)
                .map(|o| setup.dense_vector(&observer_grad(x, y, o, target), 1.0))
                .collect();
            let adj = setup.solve_all(&rhs, &mut flags)?;
            edges
                .par_iter()
                .zip(rho.par_iter())
                .map(|(e, &rh)| {
                    let g = observer_grad(x, y, e.user, e.item);
                    adj.iter().map(|a| (-2.0 * rh * setup.dot_sparse(&g, a)).abs()).sum()
                })
                .collect()
        }
        _ => {
            let rhs: Vec<Vec<f64>> = edges
                .iter()
                .zip(&rho)
                .map(|(e, &rh)| setup.dense_vector(&observer_grad(x, y, e.user, e.item), -2.0 * rh))
                .collect();
            let sols = setup.solve_all(&rhs, &mut flags)?;
            sols.par_iter()
                .map(|s| {
                    (0..n_obs)
                        .map(|o| setup.dot_sparse(&observer_grad(x, y, o, target), s).abs())
                        .sum()
                })
                .collect()
        }
    };
    Ok(InfluenceReport::from_edges(ds, target, phi, flags))
}
