use crate::dataset::{ItemId, RatingDataset, UserId};

/// Ranked recommendation list for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct TopNList {
    pub user: UserId,
    pub items: Vec<ItemId>,
    pub scores: Vec<f64>,
    /// Fewer than N candidate items were available.
    pub short: bool,
}

impl TopNList {
    pub fn contains(&self, item: ItemId) -> bool {
        self.items.contains(&item)
    }
}

/// Descending by score, ascending item id on ties.
pub(crate) fn rank_order(scores: &[f64], a: ItemId, b: ItemId) -> std::cmp::Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Exact top-`n` over items for which `eligible` holds.
pub fn top_n_by_scores(
    user: UserId,
    scores: &[f64],
    n: usize,
    eligible: impl Fn(ItemId) -> bool,
) -> TopNList {
    let mut cands: Vec<ItemId> = (0..scores.len()).filter(|&i| eligible(i)).collect();
    let short = cands.len() < n;
    if cands.len() > n && n > 0 {
        cands.select_nth_unstable_by(n - 1, |&a, &b| rank_order(scores, a, b));
        cands.truncate(n);
    } else if n == 0 {
        cands.clear();
    }
    cands.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    TopNList {
        user,
        scores: cands.iter().map(|&i| scores[i]).collect(),
        items: cands,
        short,
    }
}

/// Anything that scores every item for a user.
pub trait Scorer: Sync {
    fn score_items(&self, user: UserId) -> Vec<f64>;

    /// Top-`n` among the items `user` has not rated in `ds`.
    fn top_n(&self, ds: &RatingDataset, user: UserId, n: usize) -> TopNList {
        let scores = self.score_items(user);
        let row = ds.user_ratings(user);
        top_n_by_scores(user, &scores, n, |i| {
            row.binary_search_by_key(&i, |r| r.item).is_err()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_by_score_then_id() {
        let l = top_n_by_scores(0, &[0.9, 0.5, 0.7], 2, |_| true);
        assert_eq!(l.items, vec![0, 2]);
        assert_eq!(l.scores, vec![0.9, 0.7]);
        assert!(!l.short);

        let tie = top_n_by_scores(0, &[0.5, 0.5, 0.5, 0.1], 2, |_| true);
        assert_eq!(tie.items, vec![0, 1]);
    }

    #[test]
    fn short_list_is_flagged() {
        let l = top_n_by_scores(0, &[0.1, 0.2], 5, |i| i == 1);
        assert_eq!(l.items, vec![1]);
        assert!(l.short);
    }
}
