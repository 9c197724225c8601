//! Hit ratio and end-to-end attack experiments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{inject, run_attack, AttackPlan, JacobianMode, Recommender, StepRule, Variant};
use crate::curvature::HessianKind;
use crate::dataset::{ingest, partial_view, synth, ItemId, RatingDataset, SynthSpec, UserId, DEFAULT_R_MAX};
use crate::detect::{evaluate_fnr, extract_features, train_on_fakes, DetectorConfig};
use crate::error::{Error, Result};
use crate::graph::{GraphRecommender, Resolvent, DEFAULT_ALPHA};
use crate::influence::InfluenceConfig;
use crate::mf::{train, TrainConfig};
use crate::stats::mean;
use crate::topn::Scorer;

/// Fraction of the first `normal_users` users whose top-`n` list contains
/// `target`. Later users (injected fakes) are ignored.
pub fn hit_ratio(scorer: &dyn Scorer, ds: &RatingDataset, target: ItemId, n: usize, normal_users: usize) -> f64 {
    let users: Vec<UserId> = (0..normal_users).collect();
    hit_ratio_over(scorer, ds, target, n, &users)
}

/// Hit ratio over an explicit user list.
pub fn hit_ratio_over(scorer: &dyn Scorer, ds: &RatingDataset, target: ItemId, n: usize, users: &[UserId]) -> f64 {
    if users.is_empty() {
        return 0.0;
    }
    let hits = users
        .par_iter()
        .filter(|&&u| scorer.top_n(ds, u, n).contains(target))
        .count();
    hits as f64 / users.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub n_users: usize,
    pub n_items: usize,
    pub density: f64,
    #[serde(default = "defaults::latent_rank")]
    pub latent_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthParams>,
    #[serde(default = "defaults::r_max")]
    pub r_max: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "defaults::d")]
    pub d: usize,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::sweeps")]
    pub sweeps: usize,
    /// Victim models trained per measurement from different starts; hit
    /// ratios are averaged over them.
    #[serde(default = "defaults::victim_restarts")]
    pub victim_restarts: usize,
    /// Latent dimension of the attacker's surrogate model, if different.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attacker_d: Option<usize>,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    /// `gauss-newton` or `exact`.
    #[serde(default = "defaults::hessian")]
    pub hessian: String,
    /// Truncation order for the walk resolvent; exact when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taylor: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: defaults::d(),
            lambda: defaults::lambda(),
            sweeps: defaults::sweeps(),
            victim_restarts: defaults::victim_restarts(),
            attacker_d: None,
            alpha: defaults::alpha(),
            hessian: defaults::hessian(),
            taylor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default = "defaults::variants")]
    pub variants: Vec<Variant>,
    /// Fake users as a fraction of the real users.
    #[serde(default = "defaults::fraction")]
    pub fraction: f64,
    #[serde(default = "defaults::n")]
    pub n: usize,
    #[serde(default = "defaults::delta")]
    pub delta: usize,
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::b")]
    pub b: f64,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub jacobian: JacobianMode,
    #[serde(default)]
    pub round_w: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            variants: defaults::variants(),
            fraction: defaults::fraction(),
            n: defaults::n(),
            delta: defaults::delta(),
            eta: defaults::eta(),
            b: defaults::b(),
            max_iter: defaults::max_iter(),
            rounds: defaults::rounds(),
            jacobian: JacobianMode::default(),
            round_w: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// Explicit target item names.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub items: Vec<String>,
    /// Otherwise sample this many items from the least popular quarter.
    #[serde(default = "defaults::cold")]
    pub cold: usize,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self { items: Vec::new(), cold: defaults::cold() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "defaults::name")]
    pub name: String,
    pub dataset: DatasetSource,
    #[serde(default = "defaults::recommender")]
    pub recommender: Recommender,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    /// Length of the served recommendation lists.
    #[serde(default = "defaults::top_n")]
    pub top_n: usize,
    /// Fractions of the ratings the attacker sees.
    #[serde(default = "defaults::knowledge")]
    pub knowledge: Vec<f64>,
    #[serde(default)]
    pub detection: bool,
    #[serde(default)]
    pub targets: TargetConfig,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
}

mod defaults {
    use super::*;
    pub fn latent_rank() -> usize { 5 }
    pub fn r_max() -> u8 { DEFAULT_R_MAX }
    pub fn d() -> usize { 8 }
    pub fn lambda() -> f64 { 0.1 }
    pub fn sweeps() -> usize { 30 }
    pub fn victim_restarts() -> usize { 1 }
    pub fn alpha() -> f64 { DEFAULT_ALPHA }
    pub fn hessian() -> String { "gauss-newton".into() }
    pub fn variants() -> Vec<Variant> { vec![Variant::STnaInf] }
    pub fn fraction() -> f64 { 0.03 }
    pub fn n() -> usize { 20 }
    pub fn delta() -> usize { 50 }
    pub fn eta() -> f64 { 1.0 }
    pub fn b() -> f64 { 2.0 }
    pub fn max_iter() -> usize { 100 }
    pub fn rounds() -> usize { 50 }
    pub fn cold() -> usize { 10 }
    pub fn name() -> String { "experiment".into() }
    pub fn recommender() -> Recommender { Recommender::Mf }
    pub fn top_n() -> usize { 10 }
    pub fn knowledge() -> Vec<f64> { vec![1.0] }
    pub fn seeds() -> Vec<u64> { vec![0] }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        // dataset paths are relative to the config file
        if let (Some(f), Some(dir)) = (&cfg.dataset.file, path.parent()) {
            if f.is_relative() {
                cfg.dataset.file = Some(dir.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (&self.dataset.file, &self.dataset.synth) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return bad("dataset needs exactly one of 'file' or 'synth'".into()),
        }
        if !(0.0..1.0).contains(&self.attack.fraction) {
            return bad(format!("attack.fraction {} outside [0, 1)", self.attack.fraction));
        }
        if self.model.victim_restarts == 0 {
            return bad("model.victim_restarts must be at least 1".into());
        }
        if self.top_n == 0 {
            return bad("top_n must be at least 1".into());
        }
        if self.knowledge.is_empty() || self.knowledge.iter().any(|k| !(*k > 0.0 && *k <= 1.0)) {
            return bad("knowledge fractions must lie in (0, 1]".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.attack.variants.is_empty() {
            return bad("attack.variants is empty".into());
        }
        if !matches!(self.model.hessian.as_str(), "gauss-newton" | "exact") {
            return bad(format!("model.hessian '{}' is not gauss-newton or exact", self.model.hessian));
        }
        if self.targets.items.is_empty() && self.targets.cold == 0 {
            return bad("no targets: give targets.items or targets.cold > 0".into());
        }
        Ok(())
    }

    fn dataset_for(&self, seed: u64) -> Result<RatingDataset> {
        match (&self.dataset.file, &self.dataset.synth) {
            (Some(f), _) => ingest(f, self.dataset.r_max),
            (_, Some(s)) => synth(SynthSpec {
                seed,
                n_users: s.n_users,
                n_items: s.n_items,
                density: s.density,
                latent_rank: s.latent_rank,
            }),
            _ => unreachable!("validated"),
        }
    }

    fn victim_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            d: self.model.d,
            lambda: self.model.lambda,
            sweeps: self.model.sweeps,
            seed,
            ..Default::default()
        }
    }

    fn plan(&self, variant: Variant, m: usize, seed: u64) -> AttackPlan {
        AttackPlan {
            variant,
            m,
            n: self.attack.n,
            eta: self.attack.eta,
            b: self.attack.b,
            delta: self.attack.delta,
            top_n: self.top_n,
            rounds: self.attack.rounds,
            jacobian: self.attack.jacobian,
            step: StepRule { max_iter: self.attack.max_iter, ..Default::default() },
            seed,
            round_w: self.attack.round_w,
            recommender: self.recommender,
            alpha: self.model.alpha,
            resolvent: self.model.taylor.map_or(Resolvent::Exact, Resolvent::Taylor),
            train: TrainConfig { d: self.model.attacker_d.unwrap_or(self.model.d), ..self.victim_config(seed) },
            influence: InfluenceConfig {
                hessian: if self.model.hessian == "exact" { HessianKind::Exact } else { HessianKind::GaussNewton },
                ..Default::default()
            },
        }
    }
}

/// `k` items sampled from the least popular quarter of the rated items
/// (degree at or below the lower quartile).
pub fn cold_targets(ds: &RatingDataset, k: usize, seed: u64) -> Vec<ItemId> {
    let mut degrees: Vec<usize> = (0..ds.n_items()).map(|i| ds.item_degree(i)).filter(|&d| d > 0).collect();
    degrees.sort_unstable();
    let Some(&cut) = degrees.get(degrees.len() / 4) else {
        return Vec::new();
    };
    let pool: Vec<ItemId> = (0..ds.n_items())
        .filter(|&i| (1..=cut).contains(&ds.item_degree(i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC01D_7A26);
    let mut picked: Vec<ItemId> = sample(&mut rng, pool.len(), k.min(pool.len()))
        .into_iter()
        .map(|j| pool[j])
        .collect();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub seed: u64,
    pub target: ItemId,
    pub target_name: String,
    pub knowledge: f64,
    pub variant: Variant,
    pub m: usize,
    pub hr_before: f64,
    pub hr_after: f64,
    pub hr_filtered: Option<f64>,
    pub fnr: Option<f64>,
    pub detector_accuracy: Option<f64>,
    /// Mean first and last loss over the optimized fake users.
    pub loss: Option<(f64, f64)>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub knowledge: f64,
    pub cells: usize,
    pub hr_before: f64,
    pub hr_after: f64,
    pub hr_filtered: Option<f64>,
    pub fnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
}

fn scorer_for(cfg: &ExperimentConfig, ds: &RatingDataset, seed: u64) -> Result<Box<dyn Scorer>> {
    Ok(match cfg.recommender {
        Recommender::Mf => Box::new(train(ds, &cfg.victim_config(seed))?),
        Recommender::Graph => Box::new(GraphRecommender::new(ds, cfg.model.alpha)?),
    })
}

/// Hit ratio of each target on freshly trained victims, averaged over the
/// configured restarts. The walk model is deterministic and built once.
fn victim_hit_ratios(cfg: &ExperimentConfig, ds: &RatingDataset, targets: &[ItemId], normal: usize, seed: u64) -> Result<Vec<f64>> {
    let restarts = match cfg.recommender {
        Recommender::Mf => cfg.model.victim_restarts,
        Recommender::Graph => 1,
    };
    let mut sum = vec![0.0; targets.len()];
    for r in 0..restarts as u64 {
        let victim = scorer_for(cfg, ds, seed.wrapping_add(r.wrapping_mul(0x9E37_79B9)))?;
        for (s, &t) in sum.iter_mut().zip(targets) {
            *s += hit_ratio(victim.as_ref(), ds, t, cfg.top_n, normal);
        }
    }
    Ok(sum.into_iter().map(|s| s / restarts as f64).collect())
}

struct CellSpec {
    seed: u64,
    target: ItemId,
    knowledge: f64,
    variant: Variant,
    hr_before: f64,
}

fn run_cell(cfg: &ExperimentConfig, ds: &RatingDataset, c: &CellSpec) -> Result<CellResult> {
    let normal = ds.n_users();
    let m = (cfg.attack.fraction * normal as f64).round() as usize;
    let mut out = CellResult {
        seed: c.seed,
        target: c.target,
        target_name: ds.item_name(c.target).to_string(),
        knowledge: c.knowledge,
        variant: c.variant,
        m,
        hr_before: c.hr_before,
        hr_after: c.hr_before,
        hr_filtered: None,
        fnr: None,
        detector_accuracy: None,
        loss: None,
        error: None,
    };
    if m == 0 {
        return Ok(out);
    }
    let attacker_ds = if c.knowledge < 1.0 {
        partial_view(ds, c.target, c.knowledge)?.to_dataset()
    } else {
        ds.clone()
    };
    // common seed across variants and knowledge levels for the same cell
    let attack_seed = c.seed.wrapping_mul(1_000_003).wrapping_add(c.target as u64);
    let outcome = run_attack(&attacker_ds, c.target, &cfg.plan(c.variant, m, attack_seed))?;
    if !outcome.loss_traces.is_empty() {
        let first: Vec<f64> = outcome.loss_traces.iter().map(|t| t[0]).collect();
        let last: Vec<f64> = outcome.loss_traces.iter().map(|t| *t.last().expect("nonempty")).collect();
        out.loss = Some((mean(&first), mean(&last)));
    }
    let poisoned = inject(ds, &outcome.profiles)?;
    out.hr_after = victim_hit_ratios(cfg, &poisoned, &[c.target], normal, c.seed)?[0];

    if cfg.detection {
        let feats = extract_features(&poisoned);
        let fakes: Vec<UserId> = (normal..poisoned.n_users()).collect();
        let (det, acc) = train_on_fakes(&feats, &fakes, &DetectorConfig { seed: attack_seed, ..Default::default() })?;
        out.detector_accuracy = Some(acc);
        let res = evaluate_fnr(&det, &poisoned, &feats, &fakes)?;
        out.fnr = Some(res.fnr);
        let kept_normal = res.kept.iter().filter(|&&u| u < normal).count();
        out.hr_filtered = Some(victim_hit_ratios(cfg, &res.filtered, &[c.target], kept_normal, c.seed)?[0]);
    }
    Ok(out)
}

fn failed(c: &CellSpec, name: &str, e: &Error) -> CellResult {
    CellResult {
        seed: c.seed,
        target: c.target,
        target_name: name.to_string(),
        knowledge: c.knowledge,
        variant: c.variant,
        m: 0,
        hr_before: c.hr_before,
        hr_after: f64::NAN,
        hr_filtered: None,
        fnr: None,
        detector_accuracy: None,
        loss: None,
        error: Some(e.to_string()),
    }
}

fn targets_for(cfg: &ExperimentConfig, ds: &RatingDataset, seed: u64) -> Result<Vec<ItemId>> {
    if cfg.targets.items.is_empty() {
        return Ok(cold_targets(ds, cfg.targets.cold, seed));
    }
    cfg.targets
        .items
        .iter()
        .map(|n| ds.find_item(n).ok_or_else(|| Error::Config(format!("target item '{n}' not in dataset"))))
        .collect()
}

/// Runs every (seed, target, knowledge, variant) cell. A failing cell is
/// recorded and the rest continue; cells run in parallel but results keep
/// the loop order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        let ds = cfg.dataset_for(seed)?;
        let targets = targets_for(cfg, &ds, seed)?;
        let before = victim_hit_ratios(cfg, &ds, &targets, ds.n_users(), seed)?;
        let mut specs = Vec::new();
        for (k, &t) in targets.iter().enumerate() {
            for &knowledge in &cfg.knowledge {
                for &variant in &cfg.attack.variants {
                    specs.push(CellSpec { seed, target: t, knowledge, variant, hr_before: before[k] });
                }
            }
        }
        let results: Vec<CellResult> = specs
            .par_iter()
            .map(|c| run_cell(cfg, &ds, c).unwrap_or_else(|e| failed(c, ds.item_name(c.target), &e)))
            .collect();
        cells.extend(results);
    }
    Ok(ExperimentReport { config: cfg.clone(), cells })
}

fn opt_mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    if vals.is_empty() {
        None
    } else {
        Some(mean(&vals))
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    /// Means over successful cells per (variant, knowledge), in config order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(usize, usize), Vec<&CellResult>> = BTreeMap::new();
        let vpos = |v: Variant| self.config.attack.variants.iter().position(|&x| x == v).unwrap_or(usize::MAX);
        let kpos = |k: f64| self.config.knowledge.iter().position(|&x| x == k).unwrap_or(usize::MAX);
        for c in self.cells.iter().filter(|c| c.error.is_none()) {
            groups.entry((vpos(c.variant), kpos(c.knowledge))).or_default().push(c);
        }
        groups
            .into_values()
            .map(|cs| SummaryRow {
                variant: cs[0].variant,
                knowledge: cs[0].knowledge,
                cells: cs.len(),
                hr_before: mean(&cs.iter().map(|c| c.hr_before).collect::<Vec<_>>()),
                hr_after: mean(&cs.iter().map(|c| c.hr_after).collect::<Vec<_>>()),
                hr_filtered: opt_mean(cs.iter().map(|c| c.hr_filtered)),
                fnr: opt_mean(cs.iter().map(|c| c.fnr)),
            })
            .collect()
    }

    /// Tab-separated, one line per cell.
    pub fn cells_tsv(&self) -> String {
        let mut s = String::from(
            "seed\ttarget\tknowledge\tvariant\tm\thr_before\thr_after\thr_filtered\tfnr\tdetector_accuracy\tloss_first\tloss_last\tstatus\n",
        );
        for c in &self.cells {
            let (lf, ll) = c.loss.map_or((None, None), |(a, b)| (Some(a), Some(b)));
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}",
                c.seed,
                c.target_name,
                c.knowledge,
                c.variant,
                c.m,
                c.hr_before,
                c.hr_after,
                fmt_opt(c.hr_filtered),
                fmt_opt(c.fnr),
                fmt_opt(c.detector_accuracy),
                fmt_opt(lf),
                fmt_opt(ll),
                c.error.as_deref().map_or("ok".to_string(), |e| format!("failed: {e}")),
            )
            .unwrap();
        }
        s
    }

    pub fn summary_tsv(&self) -> String {
        let mut s = String::from("variant\tknowledge\tcells\thr_before\thr_after\thr_filtered\tfnr\n");
        for r in self.summary() {
            writeln!(
                s,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}",
                r.variant,
                r.knowledge,
                r.cells,
                r.hr_before,
                r.hr_after,
                fmt_opt(r.hr_filtered),
                fmt_opt(r.fnr)
            )
            .unwrap();
        }
        s
    }

    /// Human-readable summary table with the config echoed on top.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# experiment: {}", self.config.name).unwrap();
        for line in self.config.to_toml().lines() {
            writeln!(s, "{}", format!("#   {line}").trim_end()).unwrap();
        }
        writeln!(s).unwrap();
        writeln!(
            s,
            "{:<12} {:>9} {:>6} {:>10} {:>10} {:>11} {:>8}",
            "variant", "knowledge", "cells", "HR none", "HR attack", "HR filtered", "FNR"
        )
        .unwrap();
        for r in self.summary() {
            writeln!(
                s,
                "{:<12} {:>9} {:>6} {:>10.4} {:>10.4} {:>11} {:>8}",
                r.variant.name(),
                r.knowledge,
                r.cells,
                r.hr_before,
                r.hr_after,
                r.hr_filtered.map_or("-".into(), |v| format!("{v:.4}")),
                r.fnr.map_or("-".into(), |v| format!("{v:.4}")),
            )
            .unwrap();
        }
        let failed = self.failures();
        if failed > 0 {
            writeln!(s, "\n{failed} of {} cells failed; see cells.tsv", self.cells.len()).unwrap();
        }
        s
    }

    /// Writes `report.txt`, `cells.tsv` and `summary.tsv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.txt"), self.to_table())?;
        fs::write(dir.join("cells.tsv"), self.cells_tsv())?;
        fs::write(dir.join("summary.tsv"), self.summary_tsv())?;
        Ok(())
    }
}
