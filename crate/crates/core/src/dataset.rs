//! Sparse integer rating data, text ingestion, synthetic generation and
//! partial-knowledge views.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type UserId = usize;
pub type ItemId = usize;

pub const DEFAULT_R_MAX: u8 = 5;

/// One observed rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rating {
    pub user: UserId,
    pub item: ItemId,
    pub value: u8,
}

/// Immutable user-item rating matrix with both adjacency directions.
///
/// Edges are kept sorted by `(user, item)`, so a user's ratings form one
/// contiguous slice. Item adjacency is a CSR index into the edge list, sorted
/// by user.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    n_users: usize,
    n_items: usize,
    r_max: u8,
    edges: Vec<Rating>,
    user_ptr: Vec<usize>,
    item_ptr: Vec<usize>,
    item_edges: Vec<usize>,
    user_names: Vec<String>,
    item_names: Vec<String>,
}

impl RatingDataset {
    /// Builds a dataset from internal-id triples. Names default to `u<id>` /
    /// `i<id>`.
    pub fn from_ratings(
        n_users: usize,
        n_items: usize,
        r_max: u8,
        ratings: impl IntoIterator<Item = Rating>,
    ) -> Result<Self> {
        let user_names = (0..n_users).map(|u| format!("u{u}")).collect();
        let item_names = (0..n_items).map(|i| format!("i{i}")).collect();
        Self::with_names(user_names, item_names, r_max, ratings)
    }

    pub fn with_names(
        user_names: Vec<String>,
        item_names: Vec<String>,
        r_max: u8,
        ratings: impl IntoIterator<Item = Rating>,
    ) -> Result<Self> {
        if r_max == 0 {
            return Err(Error::InvalidArgument("r_max must be positive".into()));
        }
        let n_users = user_names.len();
        let n_items = item_names.len();
        let mut edges: Vec<Rating> = ratings.into_iter().collect();
        for e in &edges {
            if e.user >= n_users || e.item >= n_items {
                return Err(Error::Validation(format!(
                    "rating ({}, {}) references an unknown id",
                    e.user, e.item
                )));
            }
            if e.value > r_max {
                return Err(Error::Validation(format!(
                    "rating {} for ({}, {}) outside 0..={r_max}",
                    e.value, e.user, e.item
                )));
            }
        }
        edges.sort_unstable_by_key(|e| (e.user, e.item));
        if let Some(w) = edges
            .windows(2)
            .find(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item))
        {
            return Err(Error::Validation(format!(
                "duplicate rating for ({}, {})",
                w[0].user, w[0].item
            )));
        }

        let mut user_ptr = vec![0usize; n_users + 1];
        let mut item_deg = vec![0usize; n_items];
        for e in &edges {
            user_ptr[e.user + 1] += 1;
            item_deg[e.item] += 1;
        }
        for u in 0..n_users {
            user_ptr[u + 1] += user_ptr[u];
        }
        let mut item_ptr = vec![0usize; n_items + 1];
        for i in 0..n_items {
            item_ptr[i + 1] = item_ptr[i] + item_deg[i];
        }
        // Walking edges in (user, item) order fills each item bucket sorted by user.
        let mut fill = item_ptr.clone();
        let mut item_edges = vec![0usize; edges.len()];
        for (idx, e) in edges.iter().enumerate() {
            item_edges[fill[e.item]] = idx;
            fill[e.item] += 1;
        }

        Ok(Self {
            n_users,
            n_items,
            r_max,
            edges,
            user_ptr,
            item_ptr,
            item_edges,
            user_names,
            item_names,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn r_max(&self) -> u8 {
        self.r_max
    }

    pub fn edges(&self) -> &[Rating] {
        &self.edges
    }

    /// Ratings of user `u`, sorted by item.
    pub fn user_ratings(&self, u: UserId) -> &[Rating] {
        &self.edges[self.user_ptr[u]..self.user_ptr[u + 1]]
    }

    /// Edge-index range of user `u` in [`edges`](Self::edges).
    pub fn user_edge_range(&self, u: UserId) -> std::ops::Range<usize> {
        self.user_ptr[u]..self.user_ptr[u + 1]
    }

    /// Edge indices of item `i`, sorted by user.
    pub fn item_edge_indices(&self, i: ItemId) -> &[usize] {
        &self.item_edges[self.item_ptr[i]..self.item_ptr[i + 1]]
    }

    pub fn item_ratings(&self, i: ItemId) -> impl Iterator<Item = &Rating> + '_ {
        self.item_edge_indices(i).iter().map(|&e| &self.edges[e])
    }

    pub fn user_degree(&self, u: UserId) -> usize {
        self.user_ptr[u + 1] - self.user_ptr[u]
    }

    pub fn item_degree(&self, i: ItemId) -> usize {
        self.item_ptr[i + 1] - self.item_ptr[i]
    }

    pub fn rating(&self, u: UserId, i: ItemId) -> Option<u8> {
        let row = self.user_ratings(u);
        row.binary_search_by_key(&i, |r| r.item)
            .ok()
            .map(|k| row[k].value)
    }

    pub fn has_rated(&self, u: UserId, i: ItemId) -> bool {
        self.rating(u, i).is_some()
    }

    pub fn edge_index(&self, u: UserId, i: ItemId) -> Option<usize> {
        let row = self.user_ratings(u);
        row.binary_search_by_key(&i, |r| r.item)
            .ok()
            .map(|k| self.user_ptr[u] + k)
    }

    pub fn user_name(&self, u: UserId) -> &str {
        &self.user_names[u]
    }

    pub fn item_name(&self, i: ItemId) -> &str {
        &self.item_names[i]
    }

    pub fn user_names(&self) -> &[String] {
        &self.user_names
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    pub fn find_item(&self, name: &str) -> Option<ItemId> {
        self.item_names.iter().position(|n| n == name)
    }

    pub fn find_user(&self, name: &str) -> Option<UserId> {
        self.user_names.iter().position(|n| n == name)
    }

    /// Mean and population variance of the ratings item `i` received from users
    /// `0..normal_users`. `None` when no such user rated it.
    pub fn item_stats(&self, i: ItemId, normal_users: usize) -> Option<(f64, f64)> {
        let vals: Vec<f64> = self
            .item_ratings(i)
            .filter(|r| r.user < normal_users)
            .map(|r| r.value as f64)
            .collect();
        mean_var(&vals)
    }

    /// Mean and population variance over all ratings given by `0..normal_users`.
    pub fn global_stats(&self, normal_users: usize) -> Option<(f64, f64)> {
        let vals: Vec<f64> = self
            .edges
            .iter()
            .filter(|r| r.user < normal_users)
            .map(|r| r.value as f64)
            .collect();
        mean_var(&vals)
    }

    /// Appends new users, each given as a list of `(item, rating)` pairs.
    /// Returns the extended dataset; new users get ids `n_users..`.
    pub fn with_appended_users<S: AsRef<str>>(
        &self,
        users: &[(S, Vec<(ItemId, u8)>)],
    ) -> Result<Self> {
        let mut names = self.user_names.clone();
        let mut ratings = self.edges.clone();
        for (name, row) in users {
            let u = names.len();
            names.push(name.as_ref().to_string());
            ratings.extend(row.iter().map(|&(item, value)| Rating {
                user: u,
                item,
                value,
            }));
        }
        Self::with_names(names, self.item_names.clone(), self.r_max, ratings)
    }

    /// Keeps only the users for which `keep` is true. Ids are re-densified in
    /// order; the returned vector maps new id → old id.
    pub fn retain_users(&self, keep: impl Fn(UserId) -> bool) -> Result<(Self, Vec<UserId>)> {
        let old_ids: Vec<UserId> = (0..self.n_users).filter(|&u| keep(u)).collect();
        let mut remap = vec![usize::MAX; self.n_users];
        for (new, &old) in old_ids.iter().enumerate() {
            remap[old] = new;
        }
        let names = old_ids.iter().map(|&u| self.user_names[u].clone()).collect();
        let ratings: Vec<Rating> = self
            .edges
            .iter()
            .filter(|r| remap[r.user] != usize::MAX)
            .map(|r| Rating {
                user: remap[r.user],
                ..*r
            })
            .collect();
        let ds = Self::with_names(names, self.item_names.clone(), self.r_max, ratings)?;
        Ok((ds, old_ids))
    }

    /// Dataset with the same id space restricted to the given edge indices.
    pub fn subset_edges(&self, edge_indices: &[usize]) -> Self {
        let ratings: Vec<Rating> = edge_indices.iter().map(|&e| self.edges[e]).collect();
        Self::with_names(
            self.user_names.clone(),
            self.item_names.clone(),
            self.r_max,
            ratings,
        )
        .expect("subset of a valid dataset is valid")
    }

    /// Same structure with individual rating values replaced.
    pub fn map_values(&self, f: impl Fn(usize, &Rating) -> u8) -> Result<Self> {
        let ratings: Vec<Rating> = self
            .edges
            .iter()
            .enumerate()
            .map(|(k, r)| Rating { value: f(k, r), ..*r })
            .collect();
        Self::with_names(
            self.user_names.clone(),
            self.item_names.clone(),
            self.r_max,
            ratings,
        )
    }

    /// Text serialization: `user item rating` per line, sorted by (user, item).
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.edges.len() * 16);
        for r in &self.edges {
            let _ = writeln!(
                out,
                "{} {} {}",
                self.user_names[r.user], self.item_names[r.item], r.value
            );
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn mean_var(vals: &[f64]) -> Option<(f64, f64)> {
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var))
}

/// Orders names like `u2` before `u10`: a trailing run of digits compares
/// numerically, everything else lexicographically.
fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (&str, &str) {
        let cut = s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        s.split_at(cut)
    }
    let (pa, na) = split(a);
    let (pb, nb) = split(b);
    pa.cmp(pb)
        .then_with(|| {
            let na = na.trim_start_matches('0');
            let nb = nb.trim_start_matches('0');
            na.len().cmp(&nb.len()).then_with(|| na.cmp(nb))
        })
        .then_with(|| a.cmp(b))
}

fn dense_ids(names: HashSet<&str>) -> (Vec<String>, HashMap<String, usize>) {
    let mut sorted: Vec<&str> = names.into_iter().collect();
    sorted.sort_by(|a, b| natural_cmp(a, b));
    let map = sorted
        .iter()
        .enumerate()
        .map(|(k, s)| (s.to_string(), k))
        .collect();
    (sorted.into_iter().map(String::from).collect(), map)
}

/// Parses the whitespace-separated `user item rating` format. Dense ids are
/// assigned in natural order of the external names, which makes
/// `parse(to_text(parse(f)))` identical to `parse(f)`.
pub fn parse(text: &str, r_max: u8, path: &Path) -> Result<RatingDataset> {
    let mut rows: Vec<(&str, &str, u8, usize)> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected `user item rating`, found {} fields",
                fields.len()
            )));
        }
        let value: i64 = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("rating `{}` is not an integer", fields[2])))?;
        if !(0..=r_max as i64).contains(&value) {
            return Err(Error::Validation(format!(
                "{}:{lineno}: rating {value} outside 0..={r_max}",
                path.display()
            )));
        }
        rows.push((fields[0], fields[1], value as u8, lineno));
    }

    let (user_names, user_map) = dense_ids(rows.iter().map(|r| r.0).collect());
    let (item_names, item_map) = dense_ids(rows.iter().map(|r| r.1).collect());
    let mut seen = HashSet::with_capacity(rows.len());
    let mut ratings = Vec::with_capacity(rows.len());
    for (u, i, value, lineno) in rows {
        let user = user_map[u];
        let item = item_map[i];
        if !seen.insert((user, item)) {
            return Err(Error::Validation(format!(
                "{}:{lineno}: duplicate rating for ({u}, {i})",
                path.display()
            )));
        }
        ratings.push(Rating { user, item, value });
    }
    RatingDataset::with_names(user_names, item_names, r_max, ratings)
}

/// Reads a dataset file.
pub fn ingest(path: impl AsRef<Path>, r_max: u8) -> Result<RatingDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse(&text, r_max, path)
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub density: f64,
    pub latent_rank: usize,
}

/// Uniform draw in (0, 1] from 53 random bits.
fn unit_open0(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Item keep weights are `U^-γ` with `U ~ Uniform(0,1]`, a Pareto tail of
/// index `1/γ` that leaves a long tail of rarely rated items.
const POPULARITY_EXPONENT: f64 = 0.8;

/// Generates a rating matrix from a rank-`latent_rank` preference model.
///
/// The keep probability `min(1, c·density·w_i)` is calibrated so its mean
/// over items is exactly `density`. The mask is drawn with integer threshold
/// comparisons.
pub fn synth(spec: SynthSpec) -> Result<RatingDataset> {
    let SynthSpec {
        seed,
        n_users,
        n_items,
        density,
        latent_rank,
    } = spec;
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density {density} outside (0, 1]"
        )));
    }
    if latent_rank == 0 {
        return Err(Error::InvalidArgument("latent_rank must be positive".into()));
    }
    if density * ((n_users * n_items) as f64) < 1.0 {
        return Err(Error::InvalidArgument(
            "density * n_users * n_items must be at least 1".into(),
        ));
    }
    let r_max = DEFAULT_R_MAX;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut normal = |n: usize| -> Vec<f64> {
        (0..n * latent_rank)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let user_f = normal(n_users);
    let item_f = normal(n_items);

    let weights: Vec<f64> = (0..n_items)
        .map(|_| unit_open0(&mut rng).powf(-POPULARITY_EXPONENT))
        .collect();
    let mean_keep = |c: f64| {
        weights
            .iter()
            .map(|w| (c * density * w).min(1.0))
            .sum::<f64>()
            / n_items as f64
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while mean_keep(hi) < density && hi < 1e12 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_keep(mid) < density {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Saturated items (p = 1) are always kept, so density 1 keeps everything.
    let thresholds: Vec<Option<u64>> = weights
        .iter()
        .map(|w| {
            let p = hi * density * w;
            if p >= 1.0 {
                None
            } else {
                Some((p * 18_446_744_073_709_551_616.0) as u64)
            }
        })
        .collect();

    let scale = 1.0 / (latent_rank as f64).sqrt();
    let center = 0.6 * r_max as f64;
    let spread = 0.3 * r_max as f64;
    let mut ratings = Vec::new();
    for u in 0..n_users {
        let a = &user_f[u * latent_rank..(u + 1) * latent_rank];
        for (i, th) in thresholds.iter().enumerate() {
            let draw = rng.next_u64();
            let keep = match th {
                None => true,
                Some(t) => draw < *t,
            };
            if !keep {
                continue;
            }
            let b = &item_f[i * latent_rank..(i + 1) * latent_rank];
            let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * scale;
            let v = (center + spread * s).round().clamp(0.0, r_max as f64) as u8;
            ratings.push(Rating {
                user: u,
                item: i,
                value: v,
            });
        }
    }
    RatingDataset::from_ratings(n_users, n_items, r_max, ratings)
}

/// The subset of ratings visible to a partial-knowledge attacker.
#[derive(Debug, Clone)]
pub struct KnowledgeView<'a> {
    pub base: &'a RatingDataset,
    /// Visible edge indices into `base`, ascending.
    pub visible_edges: Vec<usize>,
    pub fraction: f64,
    /// The target's component ran out before the quota and the expansion
    /// continued from other users.
    pub disconnected: bool,
}

impl KnowledgeView<'_> {
    /// The attacker's dataset: same id space, only visible ratings.
    pub fn to_dataset(&self) -> RatingDataset {
        self.base.subset_edges(&self.visible_edges)
    }
}

/// Grows a view outward from `target` over the bipartite graph.
///
/// Users are admitted in breadth-first order (by hop distance from the target,
/// then by id within a hop). Admitting a user reveals all of its ratings; the
/// expansion stops as soon as the revealed count reaches `fraction·|E|`.
pub fn partial_view(ds: &RatingDataset, target: ItemId, fraction: f64) -> Result<KnowledgeView<'_>> {
    if target >= ds.n_items() {
        return Err(Error::InvalidArgument(format!("unknown target item {target}")));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    let quota = fraction * ds.n_edges() as f64;
    let mut user_seen = vec![false; ds.n_users()];
    let mut item_seen = vec![false; ds.n_items()];
    item_seen[target] = true;
    let mut item_frontier = vec![target];
    let mut visible = Vec::new();
    let mut disconnected = false;
    'expand: loop {
        if quota <= 0.0 {
            break;
        }
        let mut users: Vec<UserId> = item_frontier
            .iter()
            .flat_map(|&i| ds.item_ratings(i).map(|r| r.user))
            .filter(|&u| !user_seen[u])
            .collect();
        if users.is_empty() {
            // component exhausted; reseed from the lowest unseen user with ratings
            match (0..ds.n_users()).find(|&u| !user_seen[u] && ds.user_degree(u) > 0) {
                Some(u) => {
                    disconnected = true;
                    users.push(u);
                }
                None => break,
            }
        }
        users.sort_unstable();
        users.dedup();
        let mut next_items = Vec::new();
        for u in users {
            user_seen[u] = true;
            visible.extend(ds.user_edge_range(u));
            for r in ds.user_ratings(u) {
                if !item_seen[r.item] {
                    item_seen[r.item] = true;
                    next_items.push(r.item);
                }
            }
            if visible.len() as f64 >= quota {
                break 'expand;
            }
        }
        next_items.sort_unstable();
        item_frontier = next_items;
    }
    visible.sort_unstable();
    Ok(KnowledgeView {
        base: ds,
        disconnected,
        visible_edges: visible,
        fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(s: &str) -> Result<RatingDataset> {
        parse(s, DEFAULT_R_MAX, Path::new("<mem>"))
    }

    #[test]
    fn two_lines_two_users() {
        let ds = parse_str("u1 i1 5\nu2 i1 3\n").unwrap();
        assert_eq!((ds.n_users(), ds.n_items(), ds.n_edges()), (2, 1, 2));
    }

    #[test]
    fn empty_and_comment_only_files() {
        assert_eq!(parse_str("").unwrap().n_edges(), 0);
        assert_eq!(parse_str("# nothing\n\n").unwrap().n_edges(), 0);
    }

    #[test]
    fn rating_above_max_is_rejected() {
        assert!(matches!(parse_str("u1 i1 9"), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse_str("u1 i1 5\nu2 i1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_str("u1 i1 x"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        assert!(matches!(
            parse_str("u1 i1 5\nu1 i1 3"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn natural_order_of_names() {
        let ds = parse_str("u10 i1 1\nu2 i1 1\nu1 i1 1").unwrap();
        assert_eq!(ds.user_names(), ["u1", "u2", "u10"]);
    }

    #[test]
    fn adjacency_is_consistent() {
        let ds = synth(SynthSpec {
            seed: 3,
            n_users: 40,
            n_items: 30,
            density: 0.2,
            latent_rank: 3,
        })
        .unwrap();
        let by_items: usize = (0..ds.n_items()).map(|i| ds.item_degree(i)).sum();
        let by_users: usize = (0..ds.n_users()).map(|u| ds.user_degree(u)).sum();
        assert_eq!(by_items, ds.n_edges());
        assert_eq!(by_users, ds.n_edges());
        for i in 0..ds.n_items() {
            let users: Vec<_> = ds.item_ratings(i).map(|r| r.user).collect();
            assert!(users.windows(2).all(|w| w[0] < w[1]));
            assert!(ds.item_ratings(i).all(|r| r.item == i));
        }
        for u in 0..ds.n_users() {
            let row = ds.user_ratings(u);
            assert!(row.windows(2).all(|w| w[0].item < w[1].item));
            assert!(row.iter().all(|r| r.user == u && r.value <= ds.r_max()));
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec {
            seed: 7,
            n_users: 10,
            n_items: 8,
            density: 0.5,
            latent_rank: 3,
        };
        assert_eq!(synth(spec).unwrap(), synth(spec).unwrap());
    }

    #[test]
    fn synth_full_density_keeps_everything() {
        let ds = synth(SynthSpec {
            seed: 1,
            n_users: 12,
            n_items: 9,
            density: 1.0,
            latent_rank: 2,
        })
        .unwrap();
        assert_eq!(ds.n_edges(), 12 * 9);
    }

    #[test]
    fn synth_edge_count_concentrates() {
        let ds = synth(SynthSpec {
            seed: 7,
            n_users: 500,
            n_items: 200,
            density: 0.05,
            latent_rank: 8,
        })
        .unwrap();
        let e = ds.n_edges() as f64;
        assert!((e - 5000.0).abs() <= 250.0, "edges = {e}");
    }

    fn star() -> RatingDataset {
        // Three users rate only the target item 0; item 1 is rated by user 3.
        RatingDataset::from_ratings(
            4,
            2,
            5,
            [
                Rating { user: 2, item: 0, value: 4 },
                Rating { user: 0, item: 0, value: 3 },
                Rating { user: 1, item: 0, value: 5 },
                Rating { user: 3, item: 1, value: 5 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn star_view_takes_first_users_by_id() {
        let ds = RatingDataset::from_ratings(
            3,
            1,
            5,
            (0..3).map(|u| Rating { user: u, item: 0, value: 4 }),
        )
        .unwrap();
        let view = partial_view(&ds, 0, 0.5).unwrap();
        let users: Vec<_> = view.visible_edges.iter().map(|&e| ds.edges()[e].user).collect();
        assert_eq!(users, vec![0, 1]);
        assert!(!view.disconnected);
    }

    #[test]
    fn full_fraction_on_connected_graph() {
        let ds = synth(SynthSpec {
            seed: 5,
            n_users: 20,
            n_items: 10,
            density: 0.6,
            latent_rank: 2,
        })
        .unwrap();
        let view = partial_view(&ds, 0, 1.0).unwrap();
        assert_eq!(view.visible_edges.len(), ds.n_edges());
        assert_eq!(view.to_dataset(), ds);
    }

    #[test]
    fn exhausted_component_continues_elsewhere() {
        let ds = star();
        let view = partial_view(&ds, 0, 1.0).unwrap();
        assert_eq!(view.visible_edges.len(), 4);
        assert!(view.disconnected);
        let part = partial_view(&ds, 0, 0.75).unwrap();
        assert_eq!(part.visible_edges.len(), 3);
        assert!(!part.disconnected);
    }

    #[test]
    fn unrated_target_reseeds_from_other_users() {
        let ds = RatingDataset::from_ratings(
            1,
            2,
            5,
            [Rating { user: 0, item: 1, value: 2 }],
        )
        .unwrap();
        let view = partial_view(&ds, 0, 0.5).unwrap();
        assert_eq!(view.visible_edges, vec![0]);
        assert!(view.disconnected);
    }
}
