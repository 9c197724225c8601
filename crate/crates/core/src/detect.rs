//! Per-user shilling features and a linear hinge-loss detector.
//!
//! With `r̄_i` the mean rating of item `i`, `NR_i` its rating count and
//! `Ω_u` the items user `u` rated:
//!
//! - RDMA = (1/|Ω_u|) Σ |r_ui − r̄_i| / NR_i
//! - WDMA = (1/|Ω_u|) Σ |r_ui − r̄_i| / NR_i²
//! - WDA = Σ |r_ui − r̄_i| / NR_i
//! - FMTD = |mean of u's r_max ratings − mean of u's other ratings|, 0 if
//!   either group is empty
//! - MeanVar = mean of (r_ui − r̄_i)² over Ω_u minus u's highest-rated item
//! - TMF = max over items u rated r_max of the share of that item's ratings
//!   that are r_max

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{RatingDataset, UserId};
use crate::error::{Error, Result};

pub const FEATURE_NAMES: [&str; 6] = ["rdma", "wdma", "wda", "tmf", "fmtd", "meanvar"];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UserFeatureVector {
    pub rdma: f64,
    pub wdma: f64,
    pub wda: f64,
    pub tmf: f64,
    pub fmtd: f64,
    pub meanvar: f64,
    /// The user has no ratings; all features are 0.
    pub empty: bool,
}

impl UserFeatureVector {
    pub fn to_array(&self) -> [f64; 6] {
        [self.rdma, self.wdma, self.wda, self.tmf, self.fmtd, self.meanvar]
    }
}

/// Item-level statistics the features are computed against.
#[derive(Debug, Clone)]
pub struct ItemProfile {
    pub mean: Vec<f64>,
    pub count: Vec<f64>,
    /// Fraction of each item's ratings that equal `r_max`.
    pub top_share: Vec<f64>,
    pub r_max: u8,
}

impl ItemProfile {
    pub fn from_dataset(ds: &RatingDataset) -> Self {
        let n = ds.n_items();
        let mut sum = vec![0.0; n];
        let mut count = vec![0.0; n];
        let mut top = vec![0.0; n];
        for r in ds.edges() {
            sum[r.item] += r.value as f64;
            count[r.item] += 1.0;
            if r.value == ds.r_max() {
                top[r.item] += 1.0;
            }
        }
        let div = |a: &[f64]| -> Vec<f64> {
            a.iter().zip(&count).map(|(x, &c)| if c > 0.0 { x / c } else { 0.0 }).collect()
        };
        Self {
            mean: div(&sum),
            top_share: div(&top),
            count,
            r_max: ds.r_max(),
        }
    }
}

/// Features of one rating row `(item, rating)`.
pub fn features_of(row: &[(usize, u8)], items: &ItemProfile) -> UserFeatureVector {
    if row.is_empty() {
        return UserFeatureVector { empty: true, ..Default::default() };
    }
    let n = row.len() as f64;
    let mut wda = 0.0;
    let mut wdma = 0.0;
    for &(i, r) in row {
        let dev = (r as f64 - items.mean[i]).abs();
        wda += dev / items.count[i];
        wdma += dev / (items.count[i] * items.count[i]);
    }
    let (top, rest): (Vec<f64>, Vec<f64>) = {
        let top: Vec<f64> = row.iter().filter(|r| r.1 == items.r_max).map(|r| r.1 as f64).collect();
        let rest: Vec<f64> = row.iter().filter(|r| r.1 < items.r_max).map(|r| r.1 as f64).collect();
        (top, rest)
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fmtd = if top.is_empty() || rest.is_empty() { 0.0 } else { (mean(&top) - mean(&rest)).abs() };
    // highest-rated item, lowest id on ties
    let best = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.cmp(&b.1 .1).then(b.1 .0.cmp(&a.1 .0)))
        .map(|(k, _)| k)
        .expect("nonempty");
    let meanvar = if row.len() > 1 {
        row.iter()
            .enumerate()
            .filter(|(k, _)| *k != best)
            .map(|(_, &(i, r))| (r as f64 - items.mean[i]).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let tmf = row
        .iter()
        .filter(|r| r.1 == items.r_max)
        .map(|&(i, _)| items.top_share[i])
        .fold(0.0, f64::max);
    UserFeatureVector {
        rdma: wda / n,
        wdma: wdma / n,
        wda,
        tmf,
        fmtd,
        meanvar,
        empty: false,
    }
}

pub fn extract_features(ds: &RatingDataset) -> Vec<UserFeatureVector> {
    let items = ItemProfile::from_dataset(ds);
    (0..ds.n_users())
        .into_par_iter()
        .map(|u| {
            let row: Vec<(usize, u8)> = ds.user_ratings(u).iter().map(|r| (r.item, r.value)).collect();
            features_of(&row, &items)
        })
        .collect()
}

/// One user per line: name, six features, label (1 fake, 0 normal).
pub fn features_to_text(ds: &RatingDataset, feats: &[UserFeatureVector], is_fake: impl Fn(UserId) -> bool) -> String {
    let mut s = String::new();
    writeln!(s, "# user {} label", FEATURE_NAMES.join(" ")).unwrap();
    for (u, f) in feats.iter().enumerate() {
        let cols: Vec<String> = f.to_array().iter().map(|v| format!("{v:.10e}")).collect();
        writeln!(s, "{} {} {}", ds.user_name(u), cols.join(" "), is_fake(u) as u8).unwrap();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub penalty: f64,
    pub epochs: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            penalty: 1.0,
            epochs: 500,
            step: 0.01,
            seed: 0,
        }
    }
}

/// Linear classifier in raw feature space: fake when `w·f + bias > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub weights: [f64; 6],
    pub bias: f64,
    pub config: DetectorConfig,
}

impl DetectorModel {
    pub fn score(&self, f: &[f64; 6]) -> f64 {
        self.weights.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    pub fn is_fake(&self, f: &[f64; 6]) -> bool {
        self.score(f) > 0.0
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        writeln!(s, "# recpoison detector v1").unwrap();
        writeln!(s, "penalty {:e} epochs {} step {:e} seed {}", c.penalty, c.epochs, c.step, c.seed).unwrap();
        for w in self.weights.iter().chain(std::iter::once(&self.bias)) {
            writeln!(s, "{w:.16e}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse { path: "<detector>".into(), line, msg: msg.into() };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == "# recpoison detector v1" => {}
            _ => return Err(bad(1, "missing detector header")),
        }
        let (ln, head) = lines.next().ok_or_else(|| bad(2, "missing config line"))?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 8 {
            return Err(bad(ln + 1, "expected 'penalty P epochs E step S seed N'"));
        }
        let num = |k: usize| parts[k].parse::<f64>().map_err(|_| bad(ln + 1, "bad number"));
        let config = DetectorConfig {
            penalty: num(1)?,
            epochs: parts[3].parse().map_err(|_| bad(ln + 1, "bad epochs"))?,
            step: num(5)?,
            seed: parts[7].parse().map_err(|_| bad(ln + 1, "bad seed"))?,
        };
        let mut vals = Vec::new();
        for (ln, l) in lines {
            vals.push(l.trim().parse::<f64>().map_err(|_| bad(ln + 1, "bad weight"))?);
        }
        if vals.len() != 7 {
            return Err(bad(0, "expected 7 numbers"));
        }
        let mut weights = [0.0; 6];
        weights.copy_from_slice(&vals[..6]);
        Ok(Self { weights, bias: vals[6], config })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Hinge loss with an ℓ2 penalty, fit by per-sample subgradient steps on
/// standardized features. Samples are put in a canonical order before the
/// seeded shuffle, so the input order does not matter.
pub fn train_detector(samples: &[([f64; 6], bool)], cfg: &DetectorConfig) -> Result<DetectorModel> {
    let n_fake = samples.iter().filter(|s| s.1).count();
    if n_fake == 0 || n_fake == samples.len() {
        return Err(Error::InvalidArgument("detector training needs both classes".into()));
    }
    let n = samples.len() as f64;
    let mut samples = samples.to_vec();
    samples.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    let mut mean = [0.0; 6];
    let mut sd = [0.0; 6];
    for (f, _) in &samples {
        for k in 0..6 {
            mean[k] += f[k] / n;
        }
    }
    for (f, _) in &samples {
        for k in 0..6 {
            sd[k] += (f[k] - mean[k]).powi(2) / n;
        }
    }
    for (s, m) in sd.iter_mut().zip(&mean) {
        // constant columns (up to rounding) are left unscaled
        *s = if *s > 1e-20 * (1.0 + m * m) { s.sqrt() } else { 1.0 };
    }
    let mut data: Vec<([f64; 6], f64)> = samples
        .iter()
        .map(|(f, fake)| {
            let mut z = [0.0; 6];
            for k in 0..6 {
                z[k] = (f[k] - mean[k]) / sd[k];
            }
            (z, if *fake { 1.0 } else { -1.0 })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = [0.0; 6];
    let mut bias = 0.0;
    let reg = 1.0 / (cfg.penalty * n);
    for epoch in 0..cfg.epochs {
        data.shuffle(&mut rng);
        let eta = cfg.step / (1.0 + epoch as f64);
        for (x, y) in &data {
            let margin = y * (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias);
            for k in 0..6 {
                let mut g = reg * w[k];
                if margin < 1.0 {
                    g -= y * x[k];
                }
                w[k] -= eta * g;
            }
            if margin < 1.0 {
                bias += eta * y;
            }
        }
    }
    // fold the standardization into raw-space weights
    let mut weights = [0.0; 6];
    let mut raw_bias = bias;
    for k in 0..6 {
        weights[k] = w[k] / sd[k];
        raw_bias -= w[k] * mean[k] / sd[k];
    }
    Ok(DetectorModel { weights, bias: raw_bias, config: *cfg })
}

/// Cap on each class when training on a labelled dataset.
pub const MAX_PER_CLASS: usize = 800;

/// Trains on up to [`MAX_PER_CLASS`] of `fakes` (ascending ids) against as
/// many normal users drawn with `cfg.seed`. Returns the detector and its
/// accuracy on the training sample.
pub fn train_on_fakes(feats: &[UserFeatureVector], fakes: &[UserId], cfg: &DetectorConfig) -> Result<(DetectorModel, f64)> {
    let normals: Vec<UserId> = (0..feats.len()).filter(|u| fakes.binary_search(u).is_err()).collect();
    let k = fakes.len().min(MAX_PER_CLASS).min(normals.len());
    if k == 0 {
        return Err(Error::InvalidArgument("need both fake and normal users".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00DE_7EC7);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, normals.len(), k).into_iter().collect();
    picked.sort_unstable();
    let samples: Vec<([f64; 6], bool)> = fakes[..k]
        .iter()
        .map(|&u| (feats[u].to_array(), true))
        .chain(picked.iter().map(|&j| (feats[normals[j]].to_array(), false)))
        .collect();
    let det = train_detector(&samples, cfg)?;
    let correct = samples.iter().filter(|(f, y)| det.is_fake(f) == *y).count();
    Ok((det, correct as f64 / samples.len() as f64))
}

#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub fnr: f64,
    /// Per user of the inspected dataset.
    pub flagged: Vec<bool>,
    /// The dataset without any flagged user.
    pub filtered: RatingDataset,
    /// Maps filtered ids to ids in the inspected dataset.
    pub kept: Vec<UserId>,
}

/// Fraction of `fakes` the detector calls normal, plus the dataset with every
/// flagged user removed.
pub fn evaluate_fnr(detector: &DetectorModel, ds: &RatingDataset, feats: &[UserFeatureVector], fakes: &[UserId]) -> Result<DetectionResult> {
    if fakes.is_empty() {
        return Err(Error::InvalidArgument("no fake users to evaluate".into()));
    }
    let flagged: Vec<bool> = feats.iter().map(|f| detector.is_fake(&f.to_array())).collect();
    let missed = fakes.iter().filter(|&&u| !flagged[u]).count();
    let (filtered, kept) = ds.retain_users(|u| !flagged[u])?;
    Ok(DetectionResult {
        fnr: missed as f64 / fakes.len() as f64,
        flagged,
        filtered,
        kept,
    })
}
