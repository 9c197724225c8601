//! Fake-user injection attacks that promote a target item.

mod optimize;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use optimize::{
    competitors, optimize, wmw, wmw_grad, FakeUserProblem, FoldIn, JacobianMode, LossParams, Optimized, RankTerm, StepRule,
};

use crate::dataset::{ItemId, RatingDataset, UserId};
use crate::error::{Error, Result};
use crate::graph::{build_transition, solve_restart, Resolvent};
use crate::influence::{graph_influence_report, influence_report, select_top, user_weights, GraphInfluenceConfig, InfluenceConfig};
use crate::mf::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Loss over all users.
    UTna,
    /// Loss over a random subset of users.
    STnaRand,
    /// Loss over the most influential users.
    STnaInf,
    /// Loss over all users, weighted by normalized influence.
    Weighted,
    Random,
    Average,
    PgaLite,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::UTna,
        Variant::STnaRand,
        Variant::STnaInf,
        Variant::Weighted,
        Variant::Random,
        Variant::Average,
        Variant::PgaLite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::UTna => "u-tna",
            Variant::STnaRand => "s-tna-rand",
            Variant::STnaInf => "s-tna-inf",
            Variant::Weighted => "weighted",
            Variant::Random => "random",
            Variant::Average => "average",
            Variant::PgaLite => "pga-lite",
        }
    }

    /// Baselines pick fillers at random and skip optimization.
    pub fn is_baseline(self) -> bool {
        matches!(self, Variant::Random | Variant::Average | Variant::PgaLite)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attack variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recommender {
    Mf,
    Graph,
}

impl FromStr for Recommender {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(Recommender::Mf),
            "graph" => Ok(Recommender::Graph),
            _ => Err(Error::InvalidArgument(format!("unknown recommender '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlan {
    pub variant: Variant,
    /// Number of fake users.
    pub m: usize,
    /// Filler budget per fake user.
    pub n: usize,
    pub eta: f64,
    pub b: f64,
    /// Size of the user set for the subset variants.
    pub delta: usize,
    /// Length of the competitor lists.
    pub top_n: usize,
    pub rounds: usize,
    pub jacobian: JacobianMode,
    pub step: StepRule,
    pub seed: u64,
    /// Use rounded optimized values as filler ratings instead of sampling.
    pub round_w: bool,
    pub recommender: Recommender,
    pub alpha: f64,
    pub resolvent: Resolvent,
    /// The attacker's own factorization settings.
    pub train: TrainConfig,
    pub influence: InfluenceConfig,
}

impl Default for AttackPlan {
    fn default() -> Self {
        Self {
            variant: Variant::STnaInf,
            m: 10,
            n: 20,
            eta: 1.0,
            b: 2.0,
            delta: 50,
            top_n: 10,
            rounds: 50,
            jacobian: JacobianMode::Coupled,
            step: StepRule::default(),
            seed: 0,
            round_w: false,
            recommender: Recommender::Mf,
            alpha: crate::graph::DEFAULT_ALPHA,
            resolvent: Resolvent::Exact,
            train: TrainConfig::default(),
            influence: InfluenceConfig::default(),
        }
    }
}

impl AttackPlan {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        if !(self.eta >= 0.0) || !(self.b > 0.0) {
            return Err(Error::InvalidArgument("need eta >= 0 and b > 0".into()));
        }
        if self.delta == 0 && matches!(self.variant, Variant::STnaRand | Variant::STnaInf) {
            return Err(Error::InvalidArgument("delta must be at least 1".into()));
        }
        if self.top_n == 0 {
            return Err(Error::InvalidArgument("top_n must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FakeUserProfile {
    /// Id the profile takes when appended to the dataset it was built on.
    pub id: UserId,
    pub name: String,
    pub target: ItemId,
    pub fillers: Vec<ItemId>,
    /// All ratings including the target, sorted by item.
    pub ratings: Vec<(ItemId, u8)>,
    /// Some filler had no normal ratings and used global statistics.
    pub global_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub plan: AttackPlan,
    pub target: ItemId,
    pub profiles: Vec<FakeUserProfile>,
    /// The user set the loss was taken over.
    pub users: Vec<UserId>,
    pub loss_traces: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
    pub flags: Vec<String>,
}

/// Per-fake-user RNG stream; identical across variants for the same seed.
fn stream(seed: u64, k: usize) -> ChaCha8Rng {
    let mut z = seed ^ (k as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn fake_names(ds: &RatingDataset, m: usize) -> Vec<String> {
    let taken: HashSet<&str> = ds.user_names().iter().map(String::as_str).collect();
    let mut prefix = String::from("fake");
    while (0..m).any(|k| taken.contains(format!("{prefix}{k}").as_str())) {
        prefix.push('_');
    }
    (0..m).map(|k| format!("{prefix}{k}")).collect()
}

/// Rounds and clamps a sampled rating into `0..=r_max`.
fn to_rating(v: f64, r_max: u8) -> u8 {
    v.round().clamp(0.0, r_max as f64) as u8
}

fn disguise(ds: &RatingDataset, i: ItemId, normal: usize, rng: &mut ChaCha8Rng, fallback: &mut bool) -> u8 {
    let (mu, var) = ds.item_stats(i, normal).unwrap_or_else(|| {
        *fallback = true;
        ds.global_stats(normal).unwrap_or((ds.r_max() as f64 / 2.0, 1.0))
    });
    let v = if var > 0.0 {
        Normal::new(mu, var.sqrt()).expect("finite").sample(rng)
    } else {
        mu
    };
    to_rating(v, ds.r_max())
}

/// Turns an optimized rating vector into an integer profile: the `n` items
/// with the largest `w` (ties by id, target excluded) become fillers and get
/// ratings drawn from their normal-user rating distribution.
#[allow(clippy::too_many_arguments)]
pub fn materialize_fake_user(
    w: &[f64],
    ds: &RatingDataset,
    target: ItemId,
    n: usize,
    normal_users: usize,
    seed: u64,
    index: usize,
    round_w: bool,
) -> FakeUserProfile {
    let mut order: Vec<ItemId> = (0..w.len()).filter(|&i| i != target).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    order.truncate(n);
    build_profile(ds, target, order, seed, index, |i, rng, fb| {
        if round_w {
            to_rating(w[i], ds.r_max())
        } else {
            disguise(ds, i, normal_users, rng, fb)
        }
    })
}

fn build_profile(
    ds: &RatingDataset,
    target: ItemId,
    mut fillers: Vec<ItemId>,
    seed: u64,
    index: usize,
    mut rate: impl FnMut(ItemId, &mut ChaCha8Rng, &mut bool) -> u8,
) -> FakeUserProfile {
    let mut rng = stream(seed, index);
    let mut fallback = false;
    fillers.sort_unstable();
    let mut ratings: Vec<(ItemId, u8)> = fillers.iter().map(|&i| (i, rate(i, &mut rng, &mut fallback))).collect();
    ratings.push((target, ds.r_max()));
    ratings.sort_unstable();
    FakeUserProfile {
        id: ds.n_users(),
        name: String::new(),
        target,
        fillers,
        ratings,
        global_fallback: fallback,
    }
}

fn random_fillers(ds: &RatingDataset, target: ItemId, n: usize, rng: &mut ChaCha8Rng) -> Vec<ItemId> {
    let pool: Vec<ItemId> = (0..ds.n_items()).filter(|&i| i != target).collect();
    let k = n.min(pool.len());
    sample(rng, pool.len(), k).into_iter().map(|j| pool[j]).collect()
}

/// One of the classic baseline profiles.
pub fn baseline_profile(
    variant: Variant,
    ds: &RatingDataset,
    target: ItemId,
    n: usize,
    normal_users: usize,
    seed: u64,
    index: usize,
) -> FakeUserProfile {
    let mut rng = stream(seed ^ 0xF111_E125, index);
    let fillers = random_fillers(ds, target, n, &mut rng);
    let r_max = ds.r_max();
    let global = ds.global_stats(normal_users).unwrap_or((r_max as f64 / 2.0, 1.0));
    build_profile(ds, target, fillers, seed, index, |i, rng, fb| match variant {
        Variant::Random => {
            let v = if global.1 > 0.0 {
                Normal::new(global.0, global.1.sqrt()).expect("finite").sample(rng)
            } else {
                global.0
            };
            to_rating(v, r_max)
        }
        Variant::Average => match ds.item_stats(i, normal_users) {
            Some((mu, _)) => to_rating(mu, r_max),
            None => {
                *fb = true;
                to_rating(global.0, r_max)
            }
        },
        _ => {
            if rng.random_bool(0.5) {
                r_max
            } else {
                r_max.saturating_sub(1)
            }
        }
    })
}

/// Users with at least one rating among the first `normal_users`.
fn universe(ds: &RatingDataset, normal_users: usize) -> Vec<UserId> {
    (0..normal_users).filter(|&u| ds.user_degree(u) > 0).collect()
}

/// The user set and optional weights a plan optimizes over.
fn choose_users(ds: &RatingDataset, target: ItemId, plan: &AttackPlan, flags: &mut Vec<String>) -> Result<(Vec<UserId>, Option<Vec<f64>>)> {
    let normal = ds.n_users();
    let all = universe(ds, normal);
    let influence = |flags: &mut Vec<String>| -> Result<Vec<f64>> {
        let report = match plan.recommender {
            Recommender::Mf => {
                let model = train(ds, &plan.train)?;
                influence_report(&model, ds, target, &plan.influence)?
            }
            Recommender::Graph => graph_influence_report(
                ds,
                target,
                &GraphInfluenceConfig { alpha: plan.alpha, resolvent: plan.resolvent },
            )?,
        };
        flags.extend(report.flags.iter().cloned());
        Ok(report.user_influence)
    };
    match plan.variant {
        Variant::UTna => Ok((all, None)),
        Variant::STnaRand => {
            let mut rng = stream(plan.seed ^ 0x005E_1EC7, 0);
            let k = plan.delta.min(all.len());
            let mut s: Vec<UserId> = sample(&mut rng, all.len(), k).into_iter().map(|j| all[j]).collect();
            s.sort_unstable();
            Ok((s, None))
        }
        Variant::STnaInf => {
            let pi = influence(flags)?;
            Ok((select_top(&pi, plan.delta.min(normal))?, None))
        }
        Variant::Weighted => {
            let pi = influence(flags)?;
            Ok((all, Some(user_weights(&pi)?)))
        }
        _ => Ok((Vec::new(), None)),
    }
}

/// Builds `plan.m` fake users one after another, each optimized against the
/// data including the fakes injected before it.
pub fn run_attack(ds: &RatingDataset, target: ItemId, plan: &AttackPlan) -> Result<AttackOutcome> {
    plan.validate()?;
    if target >= ds.n_items() {
        return Err(Error::InvalidArgument(format!("unknown target item {target}")));
    }
    let normal = ds.n_users();
    let names = fake_names(ds, plan.m);
    let mut flags = Vec::new();
    let (users, weights) = choose_users(ds, target, plan, &mut flags)?;
    if plan.variant.is_baseline() {
        flags.push("simplified baseline".into());
    }
    let mut current = ds.clone();
    let mut profiles = Vec::with_capacity(plan.m);
    let mut loss_traces = Vec::new();
    let mut converged = Vec::new();
    let graph_fillers = if plan.recommender == Recommender::Graph && !plan.variant.is_baseline() {
        Some(graph_fillers(ds, target, plan, &users, weights.as_deref())?)
    } else {
        None
    };
    for (k, name) in names.into_iter().enumerate() {
        let mut profile = if plan.variant.is_baseline() {
            baseline_profile(plan.variant, &current, target, plan.n, normal, plan.seed, k)
        } else if let Some(fillers) = &graph_fillers {
            build_profile(&current, target, fillers.clone(), plan.seed, k, |i, rng, fb| {
                disguise(&current, i, normal, rng, fb)
            })
        } else {
            let model = train(&current, &plan.train)?;
            let problem = FakeUserProblem::new(
                &model,
                &current,
                target,
                &users,
                weights.as_deref(),
                plan.top_n,
                LossParams { eta: plan.eta, b: plan.b, rounds: plan.rounds, jacobian: plan.jacobian },
            )?;
            let opt = optimize(&problem, &plan.step);
            loss_traces.push(opt.trace);
            converged.push(opt.converged);
            materialize_fake_user(&opt.w, &current, target, plan.n, normal, plan.seed, k, plan.round_w)
        };
        profile.name = name;
        current = current.with_appended_users(&[(&profile.name, profile.ratings.clone())])?;
        profiles.push(profile);
    }
    if profiles.iter().any(|p| p.global_fallback) {
        flags.push("filler without normal ratings used global statistics".into());
    }
    Ok(AttackOutcome {
        plan: plan.clone(),
        target,
        profiles,
        users,
        loss_traces,
        converged,
        flags,
    })
}

/// Items with the most walk mass from the chosen users, target excluded.
fn graph_fillers(
    ds: &RatingDataset,
    target: ItemId,
    plan: &AttackPlan,
    users: &[UserId],
    weights: Option<&[f64]>,
) -> Result<Vec<ItemId>> {
    let q = build_transition(ds, plan.alpha)?;
    let mut restart = vec![0.0; q.n_nodes()];
    for &u in users {
        restart[u] = weights.map_or(1.0, |h| h[u]);
    }
    let cap = ((1e-15f64).ln() / (1.0 - plan.alpha).ln()).ceil() as usize + 100;
    let (mass, _) = solve_restart(&q, &restart, cap)?;
    let scores = &mass[ds.n_users()..];
    let mut order: Vec<ItemId> = (0..ds.n_items()).filter(|&i| i != target).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(plan.n);
    Ok(order)
}

/// Appends the profiles as new users.
pub fn inject(ds: &RatingDataset, profiles: &[FakeUserProfile]) -> Result<RatingDataset> {
    let rows: Vec<(&str, Vec<(ItemId, u8)>)> = profiles.iter().map(|p| (p.name.as_str(), p.ratings.clone())).collect();
    ds.with_appended_users(&rows)
}

/// `fake_user item rating`, one rating per line, using external names.
pub fn profiles_to_text(ds: &RatingDataset, profiles: &[FakeUserProfile]) -> String {
    let mut s = String::new();
    for p in profiles {
        for &(i, r) in &p.ratings {
            writeln!(s, "{} {} {}", p.name, ds.item_name(i), r).unwrap();
        }
    }
    s
}

/// Reads a profile file against the dataset's item names. Users keep the
/// order of first appearance.
pub fn parse_profiles(text: &str, ds: &RatingDataset, target: Option<ItemId>) -> Result<Vec<FakeUserProfile>> {
    let mut out: Vec<FakeUserProfile> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::Parse { path: "<profiles>".into(), line: k + 1, msg };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", parts.len())));
        }
        let item = ds.find_item(parts[1]).ok_or_else(|| bad(format!("unknown item '{}'", parts[1])))?;
        let value: u8 = parts[2].parse().map_err(|_| bad(format!("bad rating '{}'", parts[2])))?;
        if value > ds.r_max() {
            return Err(bad(format!("rating {value} above {}", ds.r_max())));
        }
        let idx = match out.iter().position(|p| p.name == parts[0]) {
            Some(i) => i,
            None => {
                out.push(FakeUserProfile {
                    id: ds.n_users() + out.len(),
                    name: parts[0].to_string(),
                    target: target.unwrap_or(item),
                    fillers: Vec::new(),
                    ratings: Vec::new(),
                    global_fallback: false,
                });
                out.len() - 1
            }
        };
        out[idx].ratings.push((item, value));
    }
    for p in &mut out {
        p.ratings.sort_unstable();
        p.ratings.dedup_by_key(|r| r.0);
        let t = p.target;
        p.fillers = p.ratings.iter().map(|r| r.0).filter(|&i| i != t).collect();
    }
    Ok(out)
}

impl AttackOutcome {
    /// Run manifest: parameters, selection, loss traces.
    pub fn manifest(&self, ds: &RatingDataset) -> String {
        let p = &self.plan;
        let mut s = String::new();
        writeln!(s, "# attack manifest").unwrap();
        writeln!(s, "variant = {}", p.variant).unwrap();
        writeln!(s, "recommender = {}", if p.recommender == Recommender::Mf { "mf" } else { "graph" }).unwrap();
        writeln!(s, "target = {}", ds.item_name(self.target)).unwrap();
        writeln!(s, "m = {}", p.m).unwrap();
        writeln!(s, "n = {}", p.n).unwrap();
        writeln!(s, "eta = {}", p.eta).unwrap();
        writeln!(s, "b = {}", p.b).unwrap();
        writeln!(s, "delta = {}", p.delta).unwrap();
        writeln!(s, "top_n = {}", p.top_n).unwrap();
        writeln!(s, "rounds = {}", p.rounds).unwrap();
        writeln!(s, "jacobian = {}", if p.jacobian == JacobianMode::Coupled { "coupled" } else { "diagonal" }).unwrap();
        writeln!(s, "seed = {}", p.seed).unwrap();
        writeln!(s, "d = {}", p.train.d).unwrap();
        writeln!(s, "lambda = {}", p.train.lambda).unwrap();
        writeln!(s, "round_w = {}", p.round_w).unwrap();
        for f in &self.flags {
            writeln!(s, "flag = {f}").unwrap();
        }
        let users: Vec<&str> = self.users.iter().map(|&u| ds.user_name(u)).collect();
        writeln!(s, "users = {}", users.join(" ")).unwrap();
        for (k, t) in self.loss_traces.iter().enumerate() {
            let vals: Vec<String> = t.iter().map(|v| format!("{v:.10e}")).collect();
            writeln!(s, "loss.{k} = {}", vals.join(" ")).unwrap();
            writeln!(s, "converged.{k} = {}", self.converged[k]).unwrap();
        }
        s
    }
}
