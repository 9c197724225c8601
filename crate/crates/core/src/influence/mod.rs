//! Edge and user influence on a target item, and influential-user selection.

mod graph;
mod mf;

use std::fmt::Write as _;

pub use graph::{graph_edge_influence, graph_influence_report, GraphInfluenceConfig};
pub use mf::{edge_influence, influence_report, InfluenceConfig, SolveStrategy, SolverMode};

use crate::dataset::{ItemId, RatingDataset, UserId};
use crate::error::{Error, Result};
use crate::topn::rank_order;

/// Influence of every training edge on one target item.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceReport {
    pub target: ItemId,
    /// `φ` per edge, aligned with `ds.edges()`.
    pub edge_influence: Vec<f64>,
    /// `π` per user: the sum of `φ` over the user's edges.
    pub user_influence: Vec<f64>,
    /// Selected users in pick order; empty until [`InfluenceReport::select`].
    pub selected: Vec<UserId>,
    pub weights: Option<Vec<f64>>,
    /// Solver notes such as a curvature fallback.
    pub flags: Vec<String>,
}

impl InfluenceReport {
    pub(crate) fn from_edges(ds: &RatingDataset, target: ItemId, edge_influence: Vec<f64>, flags: Vec<String>) -> Self {
        let user_influence = (0..ds.n_users())
            .map(|u| ds.user_edge_range(u).map(|e| edge_influence[e]).sum())
            .collect();
        Self {
            target,
            edge_influence,
            user_influence,
            selected: Vec::new(),
            weights: None,
            flags,
        }
    }

    /// `Ϝ(S, t)`.
    pub fn set_influence(&self, set: &[UserId]) -> f64 {
        set_influence(&self.user_influence, set)
    }

    /// Picks the `delta` most influential users and stores them.
    pub fn select(&mut self, delta: usize) -> Result<&[UserId]> {
        self.selected = select_top(&self.user_influence, delta)?;
        Ok(&self.selected)
    }

    pub fn attach_weights(&mut self) -> Result<()> {
        self.weights = Some(user_weights(&self.user_influence)?);
        Ok(())
    }

    /// Plain-text report: header, users by descending `π`, selection, weights.
    pub fn to_text(&self, ds: &RatingDataset) -> String {
        let mut s = String::new();
        writeln!(s, "# influence report").unwrap();
        writeln!(s, "target {}", ds.item_name(self.target)).unwrap();
        writeln!(s, "delta {}", self.selected.len()).unwrap();
        for f in &self.flags {
            writeln!(s, "flag {f}").unwrap();
        }
        let mut order: Vec<UserId> = (0..self.user_influence.len()).collect();
        order.sort_by(|&a, &b| rank_order(&self.user_influence, a, b));
        writeln!(s, "[user_influence]").unwrap();
        for u in order {
            writeln!(s, "{} {:.12e}", ds.user_name(u), self.user_influence[u]).unwrap();
        }
        writeln!(s, "[selected]").unwrap();
        for &u in &self.selected {
            writeln!(s, "{}", ds.user_name(u)).unwrap();
        }
        if let Some(w) = &self.weights {
            writeln!(s, "[weights]").unwrap();
            for (u, h) in w.iter().enumerate() {
                writeln!(s, "{} {:.12e}", ds.user_name(u), h).unwrap();
            }
        }
        s
    }
}

pub fn set_influence(user_influence: &[f64], set: &[UserId]) -> f64 {
    set.iter().map(|&u| user_influence[u]).sum()
}

/// Top-`delta` users by influence, ties by ascending id.
///
/// Set influence is additive over users, so the greedy rule of repeatedly
/// adding the user with the largest marginal gain picks exactly these users
/// in this order; [`greedy_select`] is the literal loop.
pub fn select_top(user_influence: &[f64], delta: usize) -> Result<Vec<UserId>> {
    let n = user_influence.len();
    if delta == 0 || delta > n {
        return Err(Error::InvalidArgument(format!(
            "delta must be in 1..={n}, got {delta}"
        )));
    }
    let mut order: Vec<UserId> = (0..n).collect();
    order.sort_by(|&a, &b| rank_order(user_influence, a, b));
    order.truncate(delta);
    Ok(order)
}

/// Greedy maximization of an arbitrary set function over `universe`: each
/// round adds the candidate with the largest marginal gain (lowest id on
/// ties).
pub fn greedy_select(
    universe: &[UserId],
    delta: usize,
    value: impl Fn(&[UserId]) -> f64,
) -> Result<Vec<UserId>> {
    if delta == 0 || delta > universe.len() {
        return Err(Error::InvalidArgument(format!(
            "delta must be in 1..={}, got {delta}",
            universe.len()
        )));
    }
    let mut chosen: Vec<UserId> = Vec::with_capacity(delta);
    let mut current = value(&chosen);
    let mut pool: Vec<UserId> = universe.to_vec();
    pool.sort_unstable();
    for _ in 0..delta {
        let mut best: Option<(usize, f64)> = None;
        for (k, &u) in pool.iter().enumerate() {
            chosen.push(u);
            let gain = value(&chosen) - current;
            chosen.pop();
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((k, gain));
            }
        }
        let (k, gain) = best.expect("pool not empty");
        chosen.push(pool.remove(k));
        current += gain;
    }
    Ok(chosen)
}

/// `H_u = π_u / Σ π`.
pub fn user_weights(user_influence: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = user_influence.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Degenerate(format!(
            "total user influence is {total}; weights undefined"
        )));
    }
    Ok(user_influence.iter().map(|p| p / total).collect())
}
