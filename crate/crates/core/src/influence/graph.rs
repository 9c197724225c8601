//! Influence of an edge on the walk probability of a target item, summed
//! over all source users. Signed: no absolute value is taken.

use super::InfluenceReport;
use crate::dataset::{ItemId, RatingDataset, UserId};
use crate::error::{Error, Result};
use crate::graph::{build_transition, resolvent_row, solve_restart, Resolvent, TransitionMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphInfluenceConfig {
    pub alpha: f64,
    pub resolvent: Resolvent,
}

impl Default for GraphInfluenceConfig {
    fn default() -> Self {
        Self {
            alpha: crate::graph::DEFAULT_ALPHA,
            resolvent: Resolvent::Exact,
        }
    }
}

/// `Σ_u p_u` over all user sources, by one solve with a restart vector that
/// is 1 on every user node.
fn summed_walks(q: &TransitionMatrix) -> Result<Vec<f64>> {
    let mut restart = vec![0.0; q.n_nodes()];
    restart[..q.n_users()].fill(1.0);
    let cap = ((1e-15f64).ln() / (1.0 - q.alpha).ln()).ceil() as usize + 100;
    Ok(solve_restart(q, &restart, cap)?.0)
}

struct Pieces {
    /// Row of the resolvent at the target's node.
    m_t: Vec<f64>,
    p_sum: Vec<f64>,
    c: f64,
}

impl Pieces {
    fn new(q: &TransitionMatrix, target: ItemId, mode: Resolvent) -> Result<Self> {
        if target >= q.n_items() {
            return Err(Error::InvalidArgument(format!("unknown target item {target}")));
        }
        Ok(Self {
            m_t: resolvent_row(q, q.item_node(target), mode)?,
            p_sum: summed_walks(q)?,
            c: 1.0 - q.alpha,
        })
    }

    /// `Σ_u (1 − α)·p_u[j]·M(t, k)`.
    fn phi(&self, q: &TransitionMatrix, k: UserId, j: ItemId) -> f64 {
        self.c * self.p_sum[q.item_node(j)] * self.m_t[k]
    }
}

/// `φ((k, j), t)` for one edge of the walk graph.
pub fn graph_edge_influence(
    q: &TransitionMatrix,
    ds: &RatingDataset,
    edge: (UserId, ItemId),
    target: ItemId,
    mode: Resolvent,
) -> Result<f64> {
    let (k, j) = edge;
    if !ds.has_rated(k, j) {
        return Err(Error::InvalidArgument(format!("({k},{j}) is not a training edge")));
    }
    Ok(Pieces::new(q, target, mode)?.phi(q, k, j))
}

pub fn graph_influence_report(
    ds: &RatingDataset,
    target: ItemId,
    cfg: &GraphInfluenceConfig,
) -> Result<InfluenceReport> {
    let q = build_transition(ds, cfg.alpha)?;
    let pieces = Pieces::new(&q, target, cfg.resolvent)?;
    let phi = ds.edges().iter().map(|e| pieces.phi(&q, e.user, e.item)).collect();
    let mut flags = Vec::new();
    if let Resolvent::Taylor(t) = cfg.resolvent {
        flags.push(format!("taylor resolvent order {t}"));
    }
    if !q.zero_rows.is_empty() {
        flags.push(format!("{} zero-sum rows made uniform", q.zero_rows.len()));
    }
    Ok(InfluenceReport::from_edges(ds, target, phi, flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Rating;
    use crate::graph::stationary;

    /// Total walk mass on the target item node across all sources.
    fn total_target_mass(q: &TransitionMatrix, t: ItemId) -> f64 {
        (0..q.n_users()).map(|u| stationary(q, u).unwrap().p[q.item_node(t)]).sum()
    }

    #[test]
    fn matches_finite_difference_on_path() {
        // user0 - item0 - user1 (3 nodes), alpha 0.5
        let ds = RatingDataset::from_ratings(
            2,
            1,
            5,
            [Rating { user: 0, item: 0, value: 4 }, Rating { user: 1, item: 0, value: 2 }],
        )
        .unwrap();
        let q = build_transition(&ds, 0.5).unwrap();
        let eps = 1e-6;
        for &(k, j) in &[(0usize, 0usize), (1, 0)] {
            let analytic = graph_edge_influence(&q, &ds, (k, j), 0, Resolvent::Exact).unwrap();
            let mut qp = q.clone();
            qp.perturb(q.item_node(j), k, eps).unwrap();
            let mut qm = q.clone();
            qm.perturb(q.item_node(j), k, -eps).unwrap();
            let fd = (total_target_mass(&qp, 0) - total_target_mass(&qm, 0)) / (2.0 * eps);
            assert!((fd - analytic).abs() < 1e-4, "{fd} vs {analytic}");
        }
    }

    #[test]
    fn disconnected_edge_has_zero_influence() {
        let ds = RatingDataset::from_ratings(
            2,
            2,
            5,
            [Rating { user: 0, item: 0, value: 4 }, Rating { user: 1, item: 1, value: 2 }],
        )
        .unwrap();
        let r = graph_influence_report(&ds, 0, &GraphInfluenceConfig::default()).unwrap();
        assert_eq!(r.edge_influence[1], 0.0);
        assert!(r.edge_influence[0] > 0.0);
    }
}
