//! Random walk with restart over the user-item bipartite graph.
//!
//! Nodes are users `0..U` followed by items `U..U+I`. `Q` is stored
//! row-stochastic: `q[x][y]` is the probability of stepping from `x` to `y`,
//! so a user row spreads mass over the items it rated in proportion to the
//! rating, and an item row over the users who rated it. The walk started at
//! user `u` has stationary distribution
//!
//! ```text
//! p_u = (1 − α)·Qᵀ p_u + α·e_u
//! ```
//!
//! which keeps `Σ p_u = 1` at every iterate without renormalizing. Nodes
//! with no edges hold their mass (self-loop).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::{ItemId, RatingDataset, UserId};
use crate::error::{Error, Result};
use crate::linalg::inf_norm;
use crate::topn::{top_n_by_scores, Scorer, TopNList};

pub const DEFAULT_ALPHA: f64 = 0.3;

/// Power iterations stop once successive iterates differ by at most this.
const POWER_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n_users: usize,
    n_items: usize,
    pub alpha: f64,
    /// Outgoing transitions per node, sorted by destination.
    rows: Vec<Vec<(usize, f64)>>,
    /// Incoming transitions per node, i.e. the rows of `Qᵀ`.
    cols: Vec<Vec<(usize, f64)>>,
    /// Nodes whose ratings all equal 0; their rows are uniform over neighbours.
    pub zero_rows: Vec<usize>,
}

impl TransitionMatrix {
    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn item_node(&self, i: ItemId) -> usize {
        self.n_users + i
    }

    /// Outgoing transitions of node `x`; empty for isolated nodes.
    pub fn row(&self, x: usize) -> &[(usize, f64)] {
        &self.rows[x]
    }

    /// `Q[x][y]`, with the implicit self-loop for isolated nodes.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        if self.rows[x].is_empty() {
            return if x == y { 1.0 } else { 0.0 };
        }
        self.rows[x]
            .binary_search_by_key(&y, |e| e.0)
            .map(|k| self.rows[x][k].1)
            .unwrap_or(0.0)
    }

    /// Overwrites `Q[x][y]` for an existing edge. Rows no longer sum to one
    /// afterwards; meant for sensitivity probes.
    pub fn perturb(&mut self, x: usize, y: usize, delta: f64) -> Result<()> {
        let k = self.rows[x]
            .binary_search_by_key(&y, |e| e.0)
            .map_err(|_| Error::InvalidArgument(format!("no transition {x} -> {y}")))?;
        self.rows[x][k].1 += delta;
        let c = self.cols[y]
            .binary_search_by_key(&x, |e| e.0)
            .expect("transposed entry");
        self.cols[y][c].1 += delta;
        Ok(())
    }

    /// `out = Qᵀ p`.
    pub fn apply_transpose(&self, p: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(y, o)| {
            let mut s: f64 = self.cols[y].iter().map(|&(x, q)| q * p[x]).sum();
            if self.rows[y].is_empty() {
                s += p[y];
            }
            *o = s;
        });
    }

    /// `out = Q m`.
    pub fn apply(&self, m: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(x, o)| {
            *o = if self.rows[x].is_empty() {
                m[x]
            } else {
                self.rows[x].iter().map(|&(y, q)| q * m[y]).sum()
            };
        });
    }

    /// Dense `Q`.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        DMatrix::from_fn(n, n, |x, y| self.get(x, y))
    }
}

pub fn build_transition(ds: &RatingDataset, alpha: f64) -> Result<TransitionMatrix> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let nu = ds.n_users();
    let n = nu + ds.n_items();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut zero_rows = Vec::new();
    let mut fill = |x: usize, nbrs: Vec<(usize, f64)>, rows: &mut Vec<Vec<(usize, f64)>>| {
        if nbrs.is_empty() {
            return;
        }
        let total: f64 = nbrs.iter().map(|e| e.1).sum();
        let row = if total > 0.0 {
            nbrs.into_iter().map(|(y, r)| (y, r / total)).collect()
        } else {
            zero_rows.push(x);
            let w = 1.0 / nbrs.len() as f64;
            nbrs.into_iter().map(|(y, _)| (y, w)).collect()
        };
        rows[x] = row;
    };
    for u in 0..nu {
        let nbrs = ds.user_ratings(u).iter().map(|r| (nu + r.item, r.value as f64)).collect();
        fill(u, nbrs, &mut rows);
    }
    for i in 0..ds.n_items() {
        let nbrs = ds.item_ratings(i).map(|r| (r.user, r.value as f64)).collect();
        fill(nu + i, nbrs, &mut rows);
    }
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (x, row) in rows.iter().enumerate() {
        for &(y, q) in row {
            cols[y].push((x, q));
        }
    }
    Ok(TransitionMatrix {
        n_users: nu,
        n_items: ds.n_items(),
        alpha,
        rows,
        cols,
        zero_rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub source: UserId,
    /// Probability over all nodes, users first.
    pub p: Vec<f64>,
    pub iterations: usize,
}

impl StationaryDistribution {
    pub fn item_scores(&self, n_users: usize) -> &[f64] {
        &self.p[n_users..]
    }
}

/// Solves `p = (1 − α)·Qᵀp + α·restart` by fixed-point iteration. The
/// iteration contracts with ratio `1 − α` in the 1-norm.
pub fn solve_restart(q: &TransitionMatrix, restart: &[f64], cap: usize) -> Result<(Vec<f64>, usize)> {
    let a = q.alpha;
    let mut p: Vec<f64> = restart.to_vec();
    let mut next = vec![0.0; p.len()];
    let mut change = f64::INFINITY;
    for it in 0..cap {
        q.apply_transpose(&p, &mut next);
        change = 0.0;
        for ((nx, px), r) in next.iter_mut().zip(&p).zip(restart) {
            *nx = (1.0 - a) * *nx + a * r;
            change = change.max((*nx - px).abs());
        }
        std::mem::swap(&mut p, &mut next);
        if change <= POWER_TOL {
            return Ok((p, it + 1));
        }
    }
    Err(Error::NotConverged {
        iterations: cap,
        residual: change,
    })
}

fn power_cap(alpha: f64) -> usize {
    // (1−α)^k ≤ 1e-15 with margin
    ((1e-15f64).ln() / (1.0 - alpha).ln()).ceil() as usize + 100
}

pub fn stationary(q: &TransitionMatrix, u: UserId) -> Result<StationaryDistribution> {
    if u >= q.n_users {
        return Err(Error::InvalidArgument(format!("user {u} out of range")));
    }
    let mut e = vec![0.0; q.n_nodes()];
    e[u] = 1.0;
    let (p, iterations) = solve_restart(q, &e, power_cap(q.alpha))?;
    Ok(StationaryDistribution { source: u, p, iterations })
}

/// Direct solve of `(I − (1 − α)Qᵀ)p = α·e_u`.
pub fn stationary_dense(q: &TransitionMatrix, u: UserId) -> Result<StationaryDistribution> {
    let n = q.n_nodes();
    let a = DMatrix::identity(n, n) - q.dense().transpose() * (1.0 - q.alpha);
    let mut b = DVector::zeros(n);
    b[u] = q.alpha;
    let p = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("RWR system".into()))?;
    Ok(StationaryDistribution {
        source: u,
        p: p.as_slice().to_vec(),
        iterations: 0,
    })
}

/// `‖p − (1 − α)Qᵀp − α e_u‖∞`.
pub fn fixed_point_residual(q: &TransitionMatrix, s: &StationaryDistribution) -> f64 {
    let mut qp = vec![0.0; q.n_nodes()];
    q.apply_transpose(&s.p, &mut qp);
    let r: Vec<f64> = (0..q.n_nodes())
        .map(|x| {
            let e = if x == s.source { q.alpha } else { 0.0 };
            s.p[x] - (1.0 - q.alpha) * qp[x] - e
        })
        .collect();
    inf_norm(&r)
}

/// Top-`n` items by walk probability among those `u` has not rated.
pub fn top_n_graph(ds: &RatingDataset, p: &StationaryDistribution, n: usize) -> TopNList {
    let u = p.source;
    let scores = p.item_scores(ds.n_users());
    let row = ds.user_ratings(u);
    top_n_by_scores(u, scores, n, |i| row.binary_search_by_key(&i, |r| r.item).is_err())
}

/// Serves recommendations from walk probabilities.
pub struct GraphRecommender {
    pub q: TransitionMatrix,
}

impl GraphRecommender {
    pub fn new(ds: &RatingDataset, alpha: f64) -> Result<Self> {
        Ok(Self {
            q: build_transition(ds, alpha)?,
        })
    }
}

impl Scorer for GraphRecommender {
    fn score_items(&self, user: UserId) -> Vec<f64> {
        // the cap is generous enough that a contraction always finishes
        let s = stationary(&self.q, user).expect("RWR iteration converges");
        s.p[self.q.n_users..].to_vec()
    }
}

/// How to evaluate rows of `M = (I − (1 − α)Qᵀ)⁻¹`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Resolvent {
    #[default]
    Exact,
    /// Truncated Neumann series `Σ_{i≤T} (1 − α)^i (Qᵀ)^i`.
    Taylor(usize),
}

/// Row `t` of `M` (node index), i.e. the solution of `(I − (1 − α)Q)m = e_t`.
pub fn resolvent_row(q: &TransitionMatrix, t: usize, mode: Resolvent) -> Result<Vec<f64>> {
    let n = q.n_nodes();
    if t >= n {
        return Err(Error::InvalidArgument(format!("node {t} out of range")));
    }
    let c = 1.0 - q.alpha;
    let mut m = vec![0.0; n];
    m[t] = 1.0;
    let mut next = vec![0.0; n];
    match mode {
        Resolvent::Taylor(order) => {
            // term_i = c^i Q^i e_t, accumulated
            let mut term = m.clone();
            for _ in 0..order {
                q.apply(&term, &mut next);
                for (tv, nv) in term.iter_mut().zip(&next) {
                    *tv = c * nv;
                }
                for (mv, tv) in m.iter_mut().zip(&term) {
                    *mv += tv;
                }
            }
            Ok(m)
        }
        Resolvent::Exact => {
            let cap = power_cap(q.alpha);
            let mut change = f64::INFINITY;
            for _ in 0..cap {
                q.apply(&m, &mut next);
                change = 0.0;
                for (x, nv) in next.iter_mut().enumerate() {
                    *nv = c * *nv + if x == t { 1.0 } else { 0.0 };
                    change = change.max((*nv - m[x]).abs());
                }
                std::mem::swap(&mut m, &mut next);
                if change <= POWER_TOL {
                    return Ok(m);
                }
            }
            Err(Error::NotConverged {
                iterations: cap,
                residual: change,
            })
        }
    }
}

/// Dense `M` by LU; the oracle for small graphs.
pub fn resolvent_dense(q: &TransitionMatrix) -> Result<DMatrix<f64>> {
    let n = q.n_nodes();
    let a = DMatrix::identity(n, n) - q.dense().transpose() * (1.0 - q.alpha);
    a.try_inverse().ok_or_else(|| Error::Singular("resolvent".into()))
}

/// Dense truncated series `Σ_{i≤T} (1 − α)^i (Qᵀ)^i`.
pub fn resolvent_taylor_dense(q: &TransitionMatrix, order: usize) -> DMatrix<f64> {
    let n = q.n_nodes();
    let step = q.dense().transpose() * (1.0 - q.alpha);
    let mut term = DMatrix::identity(n, n);
    let mut acc = term.clone();
    for _ in 0..order {
        term = &step * term;
        acc += &term;
    }
    acc
}
