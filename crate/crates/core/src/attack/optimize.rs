//! Continuous rating vector of one fake user, optimized against a ranking
//! loss over a chosen set of users.
//!
//! The fake user `v` is modelled as rating every item `i` with the real value
//! `w_i`. With the other users' factors frozen, `v`'s factor `z` and the item
//! factors are refit by a few alternating ridge solves started from the
//! current model; predictions for the users in `S` then drive the loss
//!
//! ```text
//! L(w) = Σ_{u∈S} h_u Σ_{i∈Γ_u} g(r̂_ui − r̂_ut) + η‖w‖₁
//! ```
//!
//! Two subgradients are available. `Diagonal` uses only
//! `∂y_i/∂w_i = (λI + Σ_{u∈Ω^i} x_u x_uᵀ + zzᵀ)⁻¹ z`, so items outside every
//! `Γ_u` get no signal. `Coupled` differentiates the refit stationary point
//! implicitly and keeps the path `w → z → y_t`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::{ItemId, RatingDataset, UserId};
use crate::error::{Error, Result};
use crate::linalg::{dot, Factors, RidgeSystem};
use crate::mf::FactorModel;
use crate::topn::top_n_by_scores;

/// `g(x) = 1 / (1 + exp(−x/b))`.
pub fn wmw(x: f64, b: f64) -> f64 {
    let e = (-x / b).clamp(-700.0, 700.0);
    1.0 / (1.0 + e.exp())
}

/// `g′(x) = g(x)(1 − g(x)) / b`.
pub fn wmw_grad(x: f64, b: f64) -> f64 {
    let g = wmw(x, b);
    g * (1.0 - g) / b
}

/// One member of `S` with its weight and competitor list `Γ_u`.
#[derive(Debug, Clone)]
pub struct RankTerm {
    pub user: UserId,
    pub weight: f64,
    pub competitors: Vec<ItemId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    Diagonal,
    #[default]
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub eta: f64,
    pub b: f64,
    /// Cap on alternating `z`/`Y` rounds per evaluation; stops early once
    /// `z` settles.
    pub rounds: usize,
    pub jacobian: JacobianMode,
}

impl Default for LossParams {
    fn default() -> Self {
        Self { eta: 1.0, b: 2.0, rounds: 50, jacobian: JacobianMode::Coupled }
    }
}

const FOLD_TOL: f64 = 1e-12;

/// Refit state for one `w`.
#[derive(Debug, Clone)]
pub struct FoldIn {
    pub z: Vec<f64>,
    pub y: Factors,
}

pub struct FakeUserProblem<'a> {
    pub x: &'a Factors,
    base_y: &'a Factors,
    lambda: f64,
    pub target: ItemId,
    pub r_max: f64,
    /// `λI + Σ_{u∈Ω^i} x_u x_uᵀ` and `Σ r_ui x_u` per item.
    gram: Vec<DMatrix<f64>>,
    rhs: Vec<DVector<f64>>,
    pub terms: Vec<RankTerm>,
    pub params: LossParams,
}

/// `Γ_u`: the `n` highest-scored items `u` has not rated, never the target.
pub fn competitors(model: &FactorModel, ds: &RatingDataset, u: UserId, target: ItemId, n: usize) -> Vec<ItemId> {
    let scores: Vec<f64> = (0..model.n_items()).map(|i| model.predict(u, i)).collect();
    let row = ds.user_ratings(u);
    top_n_by_scores(u, &scores, n, |i| {
        i != target && row.binary_search_by_key(&i, |r| r.item).is_err()
    })
    .items
}

impl<'a> FakeUserProblem<'a> {
    /// `ds` must be the data `model` was trained on.
    pub fn new(
        model: &'a FactorModel,
        ds: &RatingDataset,
        target: ItemId,
        users: &[UserId],
        weights: Option<&[f64]>,
        top_n: usize,
        params: LossParams,
    ) -> Result<Self> {
        if model.lambda <= 0.0 {
            return Err(Error::Singular("fake-user fold-in".into()));
        }
        if !(params.b > 0.0) || params.eta < 0.0 {
            return Err(Error::InvalidArgument("need b > 0 and eta >= 0".into()));
        }
        let d = model.d();
        let (gram, rhs): (Vec<_>, Vec<_>) = (0..ds.n_items())
            .into_par_iter()
            .map(|i| {
                let mut sys = RidgeSystem::new(d, model.lambda);
                for r in ds.item_ratings(i) {
                    sys.add(model.x.row(r.user), r.value as f64);
                }
                (sys.gram, sys.rhs)
            })
            .unzip();
        let terms = users
            .par_iter()
            .map(|&u| RankTerm {
                user: u,
                weight: weights.map_or(1.0, |h| h[u]),
                competitors: competitors(model, ds, u, target, top_n),
            })
            .collect();
        Ok(Self {
            x: &model.x,
            base_y: &model.y,
            lambda: model.lambda,
            target,
            r_max: ds.r_max() as f64,
            gram,
            rhs,
            terms,
            params,
        })
    }

    pub fn n_items(&self) -> usize {
        self.base_y.rows()
    }

    /// Starting point: zeros except the target at `r_max`.
    pub fn initial(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_items()];
        w[self.target] = self.r_max;
        w
    }

    /// Box projection onto `[0, r_max]`, target pinned at `r_max`.
    pub fn project(&self, w: &mut [f64]) {
        for v in w.iter_mut() {
            *v = v.clamp(0.0, self.r_max);
        }
        w[self.target] = self.r_max;
    }

    fn solve_z(&self, y: &Factors, w: &[f64]) -> Vec<f64> {
        let mut sys = RidgeSystem::new(y.cols(), self.lambda);
        for (i, &wi) in w.iter().enumerate() {
            sys.add(y.row(i), wi);
        }
        sys.solve().expect("lambda > 0").as_slice().to_vec()
    }

    fn item_system(&self, i: ItemId, z: &[f64]) -> DMatrix<f64> {
        let zv = DVector::from_column_slice(z);
        &self.gram[i] + &zv * zv.transpose()
    }

    pub fn fold_in(&self, w: &[f64]) -> FoldIn {
        let d = self.x.cols();
        let mut y = self.base_y.clone();
        let mut z = vec![0.0; d];
        for _ in 0..self.params.rounds.max(1) {
            let prev = std::mem::replace(&mut z, self.solve_z(&y, w));
            let settled = z.iter().zip(&prev).all(|(a, b)| (a - b).abs() <= FOLD_TOL * (1.0 + a.abs()));
            let zv = DVector::from_column_slice(&z);
            y.as_mut_slice()
                .par_chunks_mut(d)
                .enumerate()
                .for_each(|(i, yi)| {
                    let a = self.item_system(i, &z);
                    let b = &self.rhs[i] + &zv * w[i];
                    let s = a.cholesky().expect("positive definite").solve(&b);
                    yi.copy_from_slice(s.as_slice());
                });
            if settled {
                break;
            }
        }
        FoldIn { z, y }
    }

    /// `∂y_i/∂w_i` at the fold-in state, per the configured mode.
    pub fn jacobian(&self, state: &FoldIn, w: &[f64], i: ItemId) -> Vec<f64> {
        match self.params.jacobian {
            JacobianMode::Diagonal => self.diagonal_jacobian(state, i),
            JacobianMode::Coupled => {
                let d = self.x.cols();
                let mut v = vec![vec![0.0; d]; self.n_items()];
                let mut out = vec![0.0; d];
                for k in 0..d {
                    // component k through the adjoint with v = e_k on y_i
                    v[i] = (0..d).map(|l| if l == k { 1.0 } else { 0.0 }).collect();
                    out[k] = self.adjoint_gradient(state, w, &v)[i];
                }
                out
            }
        }
    }

    /// `(λI + Σ_{u∈Ω^i} x_u x_uᵀ + zzᵀ)⁻¹ z`.
    pub fn diagonal_jacobian(&self, state: &FoldIn, i: ItemId) -> Vec<f64> {
        let a = self.item_system(i, &state.z);
        a.cholesky()
            .expect("positive definite")
            .solve(&DVector::from_column_slice(&state.z))
            .as_slice()
            .to_vec()
    }

    fn ranking_loss(&self, y: &Factors) -> f64 {
        let b = self.params.b;
        self.terms
            .iter()
            .map(|t| {
                let xu = self.x.row(t.user);
                let rt = dot(xu, y.row(self.target));
                t.weight
                    * t.competitors
                        .iter()
                        .map(|&i| wmw(dot(xu, y.row(i)) - rt, b))
                        .sum::<f64>()
            })
            .sum()
    }

    pub fn loss_with(&self, state: &FoldIn, w: &[f64]) -> f64 {
        self.ranking_loss(&state.y) + self.params.eta * w.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        self.loss_with(&self.fold_in(w), w)
    }

    /// `∂L_rank/∂y_i` for every item: competitor pulls and the target push.
    fn item_pulls(&self, y: &Factors) -> Vec<Vec<f64>> {
        let d = self.x.cols();
        let b = self.params.b;
        let mut pull = vec![vec![0.0; d]; self.n_items()];
        for t in &self.terms {
            let xu = self.x.row(t.user);
            let rt = dot(xu, y.row(self.target));
            for &i in &t.competitors {
                let gp = t.weight * wmw_grad(dot(xu, y.row(i)) - rt, b);
                for k in 0..d {
                    pull[i][k] += gp * xu[k];
                    pull[self.target][k] -= gp * xu[k];
                }
            }
        }
        pull
    }

    /// `Σ_i v_iᵀ ∂y_i/∂w` through the refit stationary point, with `X`
    /// frozen. The Hessian over `(z, Y)` is an arrow: item blocks
    /// `D_i = λI + Σ x xᵀ + zzᵀ` coupled only through `z`, so one `d×d`
    /// Schur complement solves it.
    fn adjoint_gradient(&self, state: &FoldIn, w: &[f64], v: &[Vec<f64>]) -> Vec<f64> {
        let d = self.x.cols();
        let n = self.n_items();
        let z = DVector::from_column_slice(&state.z);
        let parts: Vec<_> = (0..n)
            .into_par_iter()
            .map(|i| {
                let yi = DVector::from_column_slice(state.y.row(i));
                let rho = w[i] - z.dot(&yi);
                let c = &yi * z.transpose() - DMatrix::identity(d, d) * rho;
                let chol = self.item_system(i, &state.z).cholesky().expect("positive definite");
                let dinv_ct = chol.solve(&c.transpose());
                let dinv_v = chol.solve(&DVector::from_column_slice(&v[i]));
                (yi, c, chol, dinv_ct, dinv_v)
            })
            .collect();
        let mut s = DMatrix::identity(d, d) * self.lambda;
        let mut r = DVector::zeros(d);
        for (yi, c, _, dinv_ct, dinv_v) in &parts {
            s += yi * yi.transpose() - c * dinv_ct;
            r -= c * dinv_v;
        }
        let a_z = s.lu().solve(&r).unwrap_or_else(|| DVector::zeros(d));
        parts
            .par_iter()
            .enumerate()
            .map(|(i, (yi, c, chol, _, _))| {
                let a_i = chol.solve(&(DVector::from_column_slice(&v[i]) - c.transpose() * &a_z));
                z.dot(&a_i) + yi.dot(&a_z)
            })
            .collect()
    }

    /// Subgradient of the loss with respect to `w`. The target component is
    /// left at 0 because it is pinned.
    pub fn gradient_with(&self, state: &FoldIn, w: &[f64]) -> Vec<f64> {
        let mut pull = self.item_pulls(&state.y);
        let mut g: Vec<f64> = match self.params.jacobian {
            JacobianMode::Coupled => self.adjoint_gradient(state, w, &pull),
            JacobianMode::Diagonal => {
                // y_t depends on w_t alone, which is pinned
                pull[self.target].iter_mut().for_each(|p| *p = 0.0);
                pull.par_iter()
                    .enumerate()
                    .map(|(i, p)| {
                        if p.iter().all(|&v| v == 0.0) {
                            0.0
                        } else {
                            dot(p, &self.diagonal_jacobian(state, i))
                        }
                    })
                    .collect()
            }
        };
        for (gi, wi) in g.iter_mut().zip(w) {
            if *wi != 0.0 {
                *gi += self.params.eta * wi.signum();
            }
        }
        g[self.target] = 0.0;
        g
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        self.gradient_with(&self.fold_in(w), w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRule {
    pub initial_step: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            max_iter: 100,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimized {
    pub w: Vec<f64>,
    /// Loss at the start and after every accepted step.
    pub trace: Vec<f64>,
    /// A step failed to decrease the loss before the iteration cap.
    pub converged: bool,
}

/// Projected subgradient descent with backtracking: each iteration tries
/// steps `s, s/2, s/4, …` from `initial_step` and takes the first one that
/// lowers the loss. The trace is therefore non-increasing.
pub fn optimize(problem: &FakeUserProblem, rule: &StepRule) -> Optimized {
    let mut w = problem.initial();
    let mut state = problem.fold_in(&w);
    let mut loss = problem.loss_with(&state, &w);
    let mut trace = vec![loss];
    for _ in 0..rule.max_iter {
        let g = problem.gradient_with(&state, &w);
        if g.iter().all(|&v| v == 0.0) {
            return Optimized { w, trace, converged: true };
        }
        let mut step = rule.initial_step;
        let mut accepted = false;
        for _ in 0..=rule.max_halvings {
            let mut trial: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
            problem.project(&mut trial);
            if trial != w {
                let st = problem.fold_in(&trial);
                let l = problem.loss_with(&st, &trial);
                if l < loss {
                    w = trial;
                    state = st;
                    loss = l;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Optimized { w, trace, converged: true };
        }
        trace.push(loss);
    }
    Optimized { w, trace, converged: false }
}
