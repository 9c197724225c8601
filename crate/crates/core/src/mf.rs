//! Regularized matrix factorization trained by alternating ridge solves.
//!
//! Objective: `Σ_(u,i)∈E (r_ui − x_uᵀy_i)² + λ(Σ‖x_u‖² + Σ‖y_i‖²)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{ItemId, RatingDataset, UserId};
use crate::error::{Error, Result};
use crate::curvature::{Curvature, HessianKind};
use crate::linalg::{axpy, dot, inf_norm, Factors, RidgeSystem};
use crate::topn::Scorer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub d: usize,
    pub lambda: f64,
    pub sweeps: usize,
    pub seed: u64,
    /// Upper bound on Newton steps run after the sweeps; 0 disables.
    pub polish_steps: usize,
    /// Newton polishing stops once the stationarity residual is this small.
    pub polish_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 8,
            lambda: 0.1,
            sweeps: 30,
            seed: 0,
            polish_steps: 0,
            polish_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    /// User factors, one row per user.
    pub x: Factors,
    /// Item factors, one row per item.
    pub y: Factors,
    pub lambda: f64,
    pub sweeps: usize,
    pub seed: u64,
    /// Objective after every sweep.
    pub objective_trace: Vec<f64>,
}

impl FactorModel {
    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn n_users(&self) -> usize {
        self.x.rows()
    }

    pub fn n_items(&self) -> usize {
        self.y.rows()
    }

    pub fn predict(&self, u: UserId, i: ItemId) -> f64 {
        dot(self.x.row(u), self.y.row(i))
    }

    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            d: self.d(),
            lambda: self.lambda,
            sweeps: self.sweeps,
            seed: self.seed,
            ..Default::default()
        }
    }
}

impl Scorer for FactorModel {
    fn score_items(&self, user: UserId) -> Vec<f64> {
        (0..self.n_items()).map(|i| self.predict(user, i)).collect()
    }
}

/// Real-valued observations in both orientations. Lets a continuous fake
/// user sit next to integer ratings during attack optimization.
#[derive(Debug, Clone)]
pub struct Observations {
    pub by_user: Vec<Vec<(ItemId, f64)>>,
    pub by_item: Vec<Vec<(UserId, f64)>>,
}

impl Observations {
    pub fn from_dataset(ds: &RatingDataset) -> Self {
        let by_user = (0..ds.n_users())
            .map(|u| {
                ds.user_ratings(u)
                    .iter()
                    .map(|r| (r.item, r.value as f64))
                    .collect()
            })
            .collect();
        let by_item = (0..ds.n_items())
            .map(|i| ds.item_ratings(i).map(|r| (r.user, r.value as f64)).collect())
            .collect();
        Self { by_user, by_item }
    }

    pub fn n_users(&self) -> usize {
        self.by_user.len()
    }

    pub fn n_items(&self) -> usize {
        self.by_item.len()
    }

    /// Appends a user with the given real-valued ratings; returns its id.
    pub fn push_user(&mut self, row: Vec<(ItemId, f64)>) -> UserId {
        let u = self.by_user.len();
        for &(i, v) in &row {
            self.by_item[i].push((u, v));
        }
        self.by_user.push(row);
        u
    }

    pub fn objective(&self, x: &Factors, y: &Factors, lambda: f64) -> f64 {
        let fit: f64 = self
            .by_user
            .iter()
            .enumerate()
            .map(|(u, row)| {
                row.iter()
                    .map(|&(i, r)| {
                        let e = r - dot(x.row(u), y.row(i));
                        e * e
                    })
                    .sum::<f64>()
            })
            .sum();
        fit + lambda * (x.sq_norm() + y.sq_norm())
    }

    /// Largest stationarity residual `‖λx_u − Σ(r − x_uᵀy_i)y_i‖∞` over users,
    /// and the same quantity over items.
    pub fn stationarity(&self, x: &Factors, y: &Factors, lambda: f64) -> (f64, f64) {
        fn side(rows: &[Vec<(usize, f64)>], own: &Factors, other: &Factors, lambda: f64) -> f64 {
            let d = own.cols();
            rows.iter()
                .enumerate()
                .map(|(a, row)| {
                    let mut g: Vec<f64> = own.row(a).iter().map(|v| lambda * v).collect();
                    for &(b, r) in row {
                        let e = r - dot(own.row(a), other.row(b));
                        for k in 0..d {
                            g[k] -= e * other.row(b)[k];
                        }
                    }
                    g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
                })
                .fold(0.0, f64::max)
        }
        (side(&self.by_user, x, y, lambda), side(&self.by_item, y, x, lambda))
    }
}

/// Exact ridge solve for every row of `out`, given the fixed `other` side.
/// Rows without observations come out as zero.
pub fn solve_side(
    rows: &[Vec<(usize, f64)>],
    other: &Factors,
    lambda: f64,
    out: &mut Factors,
) -> Result<()> {
    let d = other.cols();
    out.as_mut_slice()
        .par_chunks_mut(d)
        .zip(rows.par_iter())
        .try_for_each(|(target, row)| {
            if row.is_empty() {
                target.fill(0.0);
                return Ok(());
            }
            let mut sys = RidgeSystem::new(d, lambda);
            for &(b, r) in row {
                sys.add(other.row(b), r);
            }
            let sol = sys
                .solve()
                .ok_or_else(|| Error::Singular("rank-deficient normal equations".into()))?;
            target.copy_from_slice(sol.as_slice());
            Ok(())
        })
}

fn init_factors(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Factors {
    let data = (0..rows * d).map(|_| rng.random_range(-0.01..=0.01)).collect();
    Factors::from_vec(rows, d, data)
}

/// Runs `sweeps` alternating sweeps (users, then items) in place and returns
/// the objective after each.
pub fn als_sweeps(
    obs: &Observations,
    x: &mut Factors,
    y: &mut Factors,
    lambda: f64,
    sweeps: usize,
) -> Result<Vec<f64>> {
    let mut trace = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        solve_side(&obs.by_user, y, lambda, x)?;
        solve_side(&obs.by_item, x, lambda, y)?;
        trace.push(obs.objective(x, y, lambda));
    }
    Ok(trace)
}

/// Damped Newton iterations on the exact Hessian, started from an ALS
/// iterate.
///
/// Alternating solves converge linearly and can crawl when a latent direction
/// is weakly determined. Each step solves `(H + μI)Δ = −∇F`; μ shrinks after a
/// step that lowers the objective and grows after one that does not, or when
/// the shifted Hessian is still indefinite. Returns the final stationarity
/// residual.
pub fn newton_polish(
    obs: &Observations,
    x: &mut Factors,
    y: &mut Factors,
    lambda: f64,
    max_steps: usize,
    tol: f64,
) -> Result<f64> {
    let split = x.rows() * x.cols();
    let mut grad = gradient(obs, x, y, lambda);
    let mut f = obs.objective(x, y, lambda);
    let mut mu = 1e-3;
    for _ in 0..max_steps {
        let residual = inf_norm(&grad) / 2.0;
        if residual <= tol {
            return Ok(residual);
        }
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let step = Curvature::new(obs, x, y, lambda, mu, HessianKind::Exact).solve(&rhs, 1e-12, 4 * rhs.len());
        if step.negative_curvature {
            mu *= 10.0;
            continue;
        }
        let mut tx = x.clone();
        let mut ty = y.clone();
        axpy(1.0, &step.x[..split], tx.as_mut_slice());
        axpy(1.0, &step.x[split..], ty.as_mut_slice());
        let tf = obs.objective(&tx, &ty, lambda);
        if tf <= f {
            *x = tx;
            *y = ty;
            f = tf;
            grad = gradient(obs, x, y, lambda);
            mu = (mu * 0.1).max(1e-14);
        } else {
            mu *= 10.0;
        }
    }
    Ok(inf_norm(&grad) / 2.0)
}

fn gradient(obs: &Observations, x: &Factors, y: &Factors, lambda: f64) -> Vec<f64> {
    Curvature::new(obs, x, y, lambda, 0.0, HessianKind::GaussNewton).gradient()
}

pub fn train_observations(obs: &Observations, cfg: &TrainConfig) -> Result<FactorModel> {
    if cfg.lambda < 0.0 || !cfg.lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be nonnegative, got {}",
            cfg.lambda
        )));
    }
    if cfg.sweeps == 0 || cfg.d == 0 {
        return Err(Error::InvalidArgument("sweeps and d must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // items first: their start then does not depend on how many users there are
    let mut y = init_factors(&mut rng, obs.n_items(), cfg.d);
    let mut x = init_factors(&mut rng, obs.n_users(), cfg.d);
    let trace = als_sweeps(obs, &mut x, &mut y, cfg.lambda, cfg.sweeps)?;
    if cfg.polish_steps > 0 {
        newton_polish(obs, &mut x, &mut y, cfg.lambda, cfg.polish_steps, cfg.polish_tol)?;
    }
    Ok(FactorModel {
        x,
        y,
        lambda: cfg.lambda,
        sweeps: cfg.sweeps,
        seed: cfg.seed,
        objective_trace: trace,
    })
}

/// Trains the factorization on `ds` from a seeded uniform(±0.01) start.
pub fn train(ds: &RatingDataset, cfg: &TrainConfig) -> Result<FactorModel> {
    train_observations(&Observations::from_dataset(ds), cfg)
}

/// Continues alternating sweeps from the model's current factors.
pub fn refine(model: &mut FactorModel, ds: &RatingDataset, sweeps: usize) -> Result<()> {
    let obs = Observations::from_dataset(ds);
    let trace = als_sweeps(&obs, &mut model.x, &mut model.y, model.lambda, sweeps)?;
    model.sweeps += sweeps;
    model.objective_trace.extend(trace);
    Ok(())
}

/// Warm-started refit on `obs`: `sweeps` alternating sweeps from the model's
/// factors, then optional Newton polishing. Rows for users or items added
/// since the model was trained start at zero.
pub fn refit(model: &FactorModel, obs: &Observations, sweeps: usize, polish_steps: usize, polish_tol: f64) -> Result<FactorModel> {
    let d = model.d();
    let mut x = model.x.clone();
    let mut y = model.y.clone();
    while x.rows() < obs.n_users() {
        x.push_row(&vec![0.0; d]);
    }
    while y.rows() < obs.n_items() {
        y.push_row(&vec![0.0; d]);
    }
    let trace = als_sweeps(obs, &mut x, &mut y, model.lambda, sweeps)?;
    if polish_steps > 0 {
        newton_polish(obs, &mut x, &mut y, model.lambda, polish_steps, polish_tol)?;
    }
    let mut objective_trace = model.objective_trace.clone();
    objective_trace.extend(trace);
    Ok(FactorModel {
        x,
        y,
        lambda: model.lambda,
        sweeps: model.sweeps + sweeps,
        seed: model.seed,
        objective_trace,
    })
}

pub fn predict(model: &FactorModel, u: UserId, i: ItemId) -> f64 {
    model.predict(u, i)
}

/// Root-mean-square training error.
pub fn rmse(model: &FactorModel, ds: &RatingDataset) -> f64 {
    if ds.n_edges() == 0 {
        return 0.0;
    }
    let sse: f64 = ds
        .edges()
        .iter()
        .map(|r| {
            let e = r.value as f64 - model.predict(r.user, r.item);
            e * e
        })
        .sum();
    (sse / ds.n_edges() as f64).sqrt()
}

/// Stationarity residuals `(users, items)` of the model on `ds`.
pub fn stationarity(model: &FactorModel, ds: &RatingDataset) -> (f64, f64) {
    Observations::from_dataset(ds).stationarity(&model.x, &model.y, model.lambda)
}

const CHECKPOINT_MAGIC: &str = "# recpoison factor model v1";

fn write_matrix(out: &mut String, label: &str, m: &Factors) {
    let _ = writeln!(out, "{label}");
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

/// Text checkpoint. Values are written with 17 significant digits, which
/// round-trips every `f64` exactly.
pub fn checkpoint_to_text(model: &FactorModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(
        out,
        "users {} items {} d {} lambda {:.16e} sweeps {} seed {}",
        model.n_users(),
        model.n_items(),
        model.d(),
        model.lambda,
        model.sweeps,
        model.seed
    );
    write_matrix(&mut out, "X", &model.x);
    write_matrix(&mut out, "Y", &model.y);
    let trace: Vec<String> = model
        .objective_trace
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect();
    let _ = writeln!(out, "trace {}", trace.join(" "));
    out
}

pub fn checkpoint_from_text(text: &str) -> Result<FactorModel> {
    let bad = |msg: &str| Error::Validation(format!("checkpoint: {msg}"));
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("missing header"));
    }
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("missing dimensions"))?
        .split_whitespace()
        .collect();
    let field = |name: &str| -> Result<&str> {
        header
            .iter()
            .position(|f| *f == name)
            .and_then(|p| header.get(p + 1).copied())
            .ok_or_else(|| bad(&format!("missing `{name}`")))
    };
    let num = |name: &str| -> Result<usize> {
        field(name)?.parse().map_err(|_| bad(&format!("bad `{name}`")))
    };
    let (nu, ni, d) = (num("users")?, num("items")?, num("d")?);
    let lambda: f64 = field("lambda")?.parse().map_err(|_| bad("bad lambda"))?;
    let sweeps = num("sweeps")?;
    let seed: u64 = field("seed")?.parse().map_err(|_| bad("bad seed"))?;

    let mut read_matrix = |label: &str, rows: usize| -> Result<Factors> {
        if lines.next() != Some(label) {
            return Err(bad(&format!("expected `{label}` block")));
        }
        let mut data = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            let line = lines.next().ok_or_else(|| bad("truncated matrix"))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| bad("bad number"))?);
            }
            if data.len() - before != d {
                return Err(bad("row has wrong width"));
            }
        }
        Ok(Factors::from_vec(rows, d, data))
    };
    let x = read_matrix("X", nu)?;
    let y = read_matrix("Y", ni)?;
    let trace_line = lines.next().ok_or_else(|| bad("missing trace"))?;
    let objective_trace = trace_line
        .strip_prefix("trace")
        .ok_or_else(|| bad("missing trace"))?
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| bad("bad trace value")))
        .collect::<Result<_>>()?;
    Ok(FactorModel {
        x,
        y,
        lambda,
        sweeps,
        seed,
        objective_trace,
    })
}

pub fn save_checkpoint(model: &FactorModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_to_text(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FactorModel> {
    checkpoint_from_text(&fs::read_to_string(path)?)
}
