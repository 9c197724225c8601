use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use recpoison::attack::{inject, parse_profiles, profiles_to_text, run_attack, AttackPlan, JacobianMode, Recommender, StepRule, Variant};
use recpoison::curvature::HessianKind;
use recpoison::dataset::DEFAULT_R_MAX;
use recpoison::detect::{evaluate_fnr, extract_features, features_to_text, train_on_fakes, DetectorConfig, DetectorModel};
use recpoison::eval::{hit_ratio_over, run_experiment, ExperimentConfig};
use recpoison::graph::{GraphRecommender, Resolvent, DEFAULT_ALPHA};
use recpoison::influence::{graph_influence_report, influence_report, GraphInfluenceConfig, InfluenceConfig, SolverMode};
use recpoison::mf::{load_checkpoint, rmse, save_checkpoint, stationarity};
use recpoison::{ingest, synth, Error, FactorModel, ItemId, RatingDataset, Result, Scorer, SynthSpec, TrainConfig};

#[derive(Parser)]
#[command(name = "recpoison", version, about = "Poisoning attacks on top-N recommenders and their evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a rating file and write it back in canonical order.
    Ingest {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_R_MAX)]
        r_max: u8,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic low-rank rating file.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 200)]
        items: usize,
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        #[arg(long, default_value_t = 5)]
        rank: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fit a factor model and save a checkpoint.
    Train {
        data: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Influence of every user on one target item.
    Influence {
        data: PathBuf,
        #[arg(long)]
        target: String,
        /// Checkpoint to use instead of training one.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        train: ModelArgs,
        #[arg(long, value_enum, default_value_t = RecArg::Mf)]
        recommender: RecArg,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Truncated series order for the walk resolvent (exact when absent).
        #[arg(long)]
        taylor: Option<usize>,
        #[arg(long, value_enum, default_value_t = HessianArg::GaussNewton)]
        hessian: HessianArg,
        #[arg(long, value_enum, default_value_t = SolverArg::Elimination)]
        solver: SolverArg,
        #[arg(long, default_value_t = 1e-3)]
        damping: f64,
        /// Size of the selected user set.
        #[arg(long, default_value_t = 50)]
        delta: usize,
        /// Also report normalized user weights.
        #[arg(long)]
        weights: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Craft fake-user profiles promoting a target item.
    Attack {
        data: PathBuf,
        #[arg(long)]
        target: String,
        #[command(flatten)]
        attack: AttackArgs,
        #[command(flatten)]
        train: ModelArgs,
        #[arg(long, value_enum, default_value_t = RecArg::Mf)]
        recommender: RecArg,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        taylor: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
        /// Run manifest (parameters, flags, loss traces).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Append fake-user profiles to a dataset.
    Inject {
        data: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train or apply the fake-user detector on a poisoned dataset.
    Detect {
        data: PathBuf,
        /// Profiles of the injected users; their names mark the fakes.
        #[arg(long)]
        profiles: PathBuf,
        /// Apply this detector instead of training one.
        #[arg(long)]
        detector: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        penalty: f64,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        save_detector: Option<PathBuf>,
        /// Feature dump, one user per line.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Dataset with every flagged user removed.
        #[arg(long)]
        filtered: Option<PathBuf>,
    },
    /// Hit ratio of a target item over the normal users.
    Evaluate {
        data: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        train: ModelArgs,
        #[arg(long, value_enum, default_value_t = RecArg::Mf)]
        recommender: RecArg,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        /// Count only the first K users. Defaults to all users, or to the
        /// users not named in --profiles.
        #[arg(long)]
        normal_users: Option<usize>,
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
    /// Run a full experiment grid from a TOML config.
    Experiment {
        config: PathBuf,
        /// Directory for report.txt, cells.tsv and summary.tsv.
        #[arg(short, long)]
        output: PathBuf,
        /// Override the config's seed list, e.g. --seeds 1,2,3.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 30)]
    sweeps: usize,
    #[arg(long = "train-seed", default_value_t = 0)]
    train_seed: u64,
    /// Newton steps after the sweeps, to reach tight stationarity.
    #[arg(long, default_value_t = 0)]
    polish: usize,
}

impl ModelArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            d: self.d,
            lambda: self.lambda,
            sweeps: self.sweeps,
            seed: self.train_seed,
            polish_steps: self.polish,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, default_value = "s-tna-inf")]
    variant: String,
    /// Number of fake users.
    #[arg(short, long, default_value_t = 10)]
    m: usize,
    /// Filler budget per fake user.
    #[arg(short, long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(short, long, default_value_t = 2.0)]
    b: f64,
    #[arg(long, default_value_t = 50)]
    delta: usize,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    #[arg(long, default_value_t = 50)]
    rounds: usize,
    #[arg(long, value_enum, default_value_t = JacobianArg::Coupled)]
    jacobian: JacobianArg,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rate fillers with the rounded optimized values.
    #[arg(long)]
    round_w: bool,
}

#[derive(ValueEnum, Clone, Copy)]
enum RecArg {
    Mf,
    Graph,
}

#[derive(ValueEnum, Clone, Copy)]
enum HessianArg {
    GaussNewton,
    Exact,
}

#[derive(ValueEnum, Clone, Copy)]
enum SolverArg {
    Elimination,
    Cg,
    Dense,
}

#[derive(ValueEnum, Clone, Copy)]
enum JacobianArg {
    Diagonal,
    Coupled,
}

fn load(path: &Path) -> Result<RatingDataset> {
    ingest(path, DEFAULT_R_MAX)
}

fn target_of(ds: &RatingDataset, name: &str) -> Result<ItemId> {
    ds.find_item(name)
        .ok_or_else(|| Error::InvalidArgument(format!("target item '{name}' not in dataset")))
}

fn model_for(ds: &RatingDataset, ckpt: Option<&Path>, args: &ModelArgs) -> Result<FactorModel> {
    match ckpt {
        Some(p) => {
            let m = load_checkpoint(p)?;
            if m.n_users() != ds.n_users() || m.n_items() != ds.n_items() {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint is {}x{} but dataset is {}x{}",
                    m.n_users(),
                    m.n_items(),
                    ds.n_users(),
                    ds.n_items()
                )));
            }
            Ok(m)
        }
        None => recpoison::train(ds, &args.config()),
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Ingest { input, r_max, output } => {
            let ds = ingest(&input, r_max)?;
            println!("users {} items {} ratings {}", ds.n_users(), ds.n_items(), ds.n_edges());
            if let Some(o) = output {
                ds.write(o)?;
            }
        }
        Cmd::Synth { seed, users, items, density, rank, output } => {
            let ds = synth(SynthSpec { seed, n_users: users, n_items: items, density, latent_rank: rank })?;
            ds.write(&output)?;
            println!("users {} items {} ratings {}", ds.n_users(), ds.n_items(), ds.n_edges());
        }
        Cmd::Train { data, model, output } => {
            let ds = load(&data)?;
            let m = recpoison::train(&ds, &model.config())?;
            save_checkpoint(&m, &output)?;
            let (sx, sy) = stationarity(&m, &ds);
            println!(
                "objective {:.6e} rmse {:.6} stationarity x {:.3e} y {:.3e}",
                m.objective_trace.last().copied().unwrap_or(f64::NAN),
                rmse(&m, &ds),
                sx,
                sy
            );
        }
        Cmd::Influence {
            data,
            target,
            model,
            train,
            recommender,
            alpha,
            taylor,
            hessian,
            solver,
            damping,
            delta,
            weights,
            output,
        } => {
            let ds = load(&data)?;
            let t = target_of(&ds, &target)?;
            let mut report = match recommender {
                RecArg::Mf => {
                    // tight stationarity keeps the first-order estimate honest
                    let mut args = train.clone();
                    if model.is_none() && args.polish == 0 {
                        args.polish = 50;
                    }
                    let m = model_for(&ds, model.as_deref(), &args)?;
                    let cfg = InfluenceConfig {
                        damping,
                        hessian: match hessian {
                            HessianArg::GaussNewton => HessianKind::GaussNewton,
                            HessianArg::Exact => HessianKind::Exact,
                        },
                        mode: match solver {
                            SolverArg::Elimination => SolverMode::Elimination,
                            SolverArg::Cg => SolverMode::ConjugateGradient,
                            SolverArg::Dense => SolverMode::Dense,
                        },
                        ..Default::default()
                    };
                    influence_report(&m, &ds, t, &cfg)?
                }
                RecArg::Graph => graph_influence_report(
                    &ds,
                    t,
                    &GraphInfluenceConfig { alpha, resolvent: taylor.map_or(Resolvent::Exact, Resolvent::Taylor) },
                )?,
            };
            report.select(delta.min(ds.n_users()).max(1))?;
            if weights {
                report.attach_weights()?;
            }
            emit(&report.to_text(&ds), output.as_deref())?;
        }
        Cmd::Attack { data, target, attack, train, recommender, alpha, taylor, output, manifest } => {
            let ds = load(&data)?;
            let t = target_of(&ds, &target)?;
            let plan = AttackPlan {
                variant: attack.variant.parse::<Variant>()?,
                m: attack.m,
                n: attack.n,
                eta: attack.eta,
                b: attack.b,
                delta: attack.delta,
                top_n: attack.top_n,
                rounds: attack.rounds,
                jacobian: match attack.jacobian {
                    JacobianArg::Diagonal => JacobianMode::Diagonal,
                    JacobianArg::Coupled => JacobianMode::Coupled,
                },
                step: StepRule { max_iter: attack.max_iter, ..Default::default() },
                seed: attack.seed,
                round_w: attack.round_w,
                recommender: match recommender {
                    RecArg::Mf => Recommender::Mf,
                    RecArg::Graph => Recommender::Graph,
                },
                alpha,
                resolvent: taylor.map_or(Resolvent::Exact, Resolvent::Taylor),
                train: train.config(),
                ..Default::default()
            };
            let outcome = run_attack(&ds, t, &plan)?;
            fs::write(&output, profiles_to_text(&ds, &outcome.profiles))?;
            if let Some(p) = manifest {
                fs::write(p, outcome.manifest(&ds))?;
            }
            for f in &outcome.flags {
                eprintln!("flag: {f}");
            }
            println!("{} fake users written", outcome.profiles.len());
        }
        Cmd::Inject { data, profiles, output } => {
            let ds = load(&data)?;
            let profs = parse_profiles(&fs::read_to_string(&profiles)?, &ds, None)?;
            let poisoned = inject(&ds, &profs)?;
            poisoned.write(&output)?;
            println!("users {} -> {}", ds.n_users(), poisoned.n_users());
        }
        Cmd::Detect { data, profiles, detector, penalty, epochs, seed, save_detector, features, filtered } => {
            let ds = load(&data)?;
            let fakes = fake_ids(&ds, &profiles)?;
            let feats = extract_features(&ds);
            let det = match detector {
                Some(p) => DetectorModel::load(p)?,
                None => {
                    let cfg = DetectorConfig { penalty, epochs, seed, ..Default::default() };
                    let (det, acc) = train_on_fakes(&feats, &fakes, &cfg)?;
                    println!("training accuracy {acc:.4}");
                    det
                }
            };
            let res = evaluate_fnr(&det, &ds, &feats, &fakes)?;
            let flagged = res.flagged.iter().filter(|&&f| f).count();
            println!("fnr {:.4} flagged {} of {} users", res.fnr, flagged, ds.n_users());
            if let Some(p) = save_detector {
                det.save(p)?;
            }
            if let Some(p) = features {
                fs::write(p, features_to_text(&ds, &feats, |u| fakes.binary_search(&u).is_ok()))?;
            }
            if let Some(p) = filtered {
                res.filtered.write(p)?;
            }
        }
        Cmd::Evaluate { data, target, model, train, recommender, alpha, top_n, normal_users, profiles } => {
            let ds = load(&data)?;
            let t = target_of(&ds, &target)?;
            let users: Vec<usize> = match (normal_users, profiles) {
                (Some(k), _) => (0..k.min(ds.n_users())).collect(),
                (None, Some(p)) => {
                    let fakes = fake_ids(&ds, &p)?;
                    (0..ds.n_users()).filter(|u| fakes.binary_search(u).is_err()).collect()
                }
                (None, None) => (0..ds.n_users()).collect(),
            };
            let scorer: Box<dyn Scorer> = match recommender {
                RecArg::Mf => Box::new(model_for(&ds, model.as_deref(), &train)?),
                RecArg::Graph => Box::new(GraphRecommender::new(&ds, alpha)?),
            };
            let hr = hit_ratio_over(scorer.as_ref(), &ds, t, top_n, &users);
            println!("target\tN\tnormal_users\thit_ratio");
            println!("{}\t{}\t{}\t{:.6}", target, top_n, users.len(), hr);
        }
        Cmd::Experiment { config, output, seeds } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = s;
                cfg.validate()?;
            }
            let start = Instant::now();
            let report = run_experiment(&cfg)?;
            report.write(&output)?;
            print!("{}", report.to_table());
            // kept out of the report so reruns stay byte-identical
            eprintln!("runtime {:.1}s", start.elapsed().as_secs_f64());
            if report.failures() > 0 {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Dataset ids of the users named in a profile file, ascending.
fn fake_ids(ds: &RatingDataset, profiles: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(profiles)?;
    let mut ids = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let name = line.split_whitespace().next().unwrap_or_default();
        let u = ds
            .find_user(name)
            .ok_or_else(|| Error::InvalidArgument(format!("profile user '{name}' not in dataset")))?;
        ids.push(u);
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
