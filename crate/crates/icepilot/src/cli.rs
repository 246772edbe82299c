//! Command-line interface.
//!
//! Exit codes: 0 on success, 2 for usage and configuration errors, 1 for
//! runtime failures. Every command prints a reproducibility stanza (seed,
//! config hash, source revision) to stderr before it starts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use icepilot_core::eval::{evaluate, sample_queries};
use icepilot_core::kinematics::JointState;
use icepilot_core::nn::{split_dataset, train_with_validation, PoseRegressor};
use icepilot_core::phantom::{build_target_states, ViewClass};
use serde_json::json;

use crate::config::EstimatorSource;
use crate::dataset::{self, scene_for_seed, scene_seed};
use crate::formats::load_scene;
use crate::report::{export_report, read_report, write_report};
use crate::service::{load_estimator, serve, ServiceState};
use crate::simulate::simulate;
use crate::{checkpoint, Config, Error};

#[derive(Debug, Parser)]
#[command(name = "icepilot", version, about = "Catheter view-guidance simulator")]
pub struct Cli {
    /// TOML configuration; falls back to $ICEPILOT_CONFIG, then defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labelled dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        scenes: usize,
        /// Renders per scene.
        #[arg(long, default_value_t = 500)]
        renders: usize,
    },
    /// Train the pose regressor on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Score an estimator on held-out scenes.
    Eval {
        /// Checkpoint to evaluate.
        #[arg(long, visible_alias = "checkpoint", conflicts_with = "oracle")]
        ckpt: Option<PathBuf>,
        /// Evaluate the exact oracle instead of a checkpoint.
        #[arg(long)]
        oracle: bool,
        /// Dataset directory whose scenes are used; fresh scenes otherwise.
        #[arg(long, conflicts_with = "scene_count")]
        scenes: Option<PathBuf>,
        /// Number of freshly generated evaluation scenes.
        #[arg(long, default_value_t = 5)]
        scene_count: usize,
        #[arg(long, default_value_t = 500)]
        cases: usize,
        /// JSON report path; CSV tables are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run guidance through a list of goals and log every step.
    Simulate {
        /// Scene JSON; the configured scene otherwise.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// `oracle` or a checkpoint path; the configured estimator otherwise.
        #[arg(long, visible_alias = "checkpoint")]
        estimator: Option<String>,
        /// Comma-separated goals, e.g. `LAA,RV,HOME`.
        #[arg(
            long,
            visible_alias = "goal",
            value_delimiter = ',',
            default_value = "RV,LV,LPV,RPV,LAA,ESO,HOME"
        )]
        goals: Vec<String>,
        /// Apply each advised delta; otherwise only the first advice per goal is logged.
        #[arg(long)]
        auto: bool,
        /// Start joints `θ1,θ2,θ3,d4`; the neutral state otherwise.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        start: Option<Vec<f64>>,
        /// JSON-lines step log; stdout otherwise.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run the session service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Regenerate CSV tables from a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also render SVG histograms.
        #[arg(long)]
        plot: bool,
    },
}

/// Errors that map to exit code 2.
fn is_usage(e: &anyhow::Error) -> bool {
    matches!(e.downcast_ref::<Error>(), Some(Error::Config(_)))
}

/// `git describe` of the source tree, computed once per process.
pub fn git_describe() -> &'static str {
    static REV: std::sync::OnceLock<String> = std::sync::OnceLock::new();
    REV.get_or_init(|| {
        std::process::Command::new("git")
            .args(["describe", "--always", "--dirty", "--tags"])
            .current_dir(env!("CARGO_MANIFEST_DIR"))
            .output()
            .ok()
            .filter(|o| o.status.success())
            .and_then(|o| String::from_utf8(o.stdout).ok())
            .map(|s| s.trim().to_string())
            .unwrap_or_else(|| "unknown".into())
    })
}

pub fn main_with(cli: Cli) -> ExitCode {
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}

fn with_checkpoint(cfg: &Config, checkpoint: Option<PathBuf>) -> EstimatorSource {
    match checkpoint {
        Some(path) => EstimatorSource::Checkpoint { path },
        None => cfg.service.estimator.clone(),
    }
}

/// The configured oracle (which may be noisy), or the exact one.
fn oracle(cfg: &Config) -> EstimatorSource {
    match &cfg.service.estimator {
        o @ EstimatorSource::Oracle(_) => o.clone(),
        EstimatorSource::Checkpoint { .. } => EstimatorSource::default(),
    }
}

fn estimator_source(cfg: &Config, arg: Option<String>) -> EstimatorSource {
    match arg.as_deref() {
        None => cfg.service.estimator.clone(),
        Some("oracle") => oracle(cfg),
        Some(path) => EstimatorSource::Checkpoint { path: path.into() },
    }
}

fn parse_goals(goals: &[String]) -> Result<Vec<ViewClass>, Error> {
    goals
        .iter()
        .map(|g| {
            ViewClass::parse(g.trim()).ok_or_else(|| Error::Config(format!("unknown goal `{g}`")))
        })
        .collect()
}

fn log_verbose(verbose: bool, msg: impl FnOnce() -> String) {
    if verbose {
        eprintln!("{}", msg());
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let (mut cfg, cfg_path) = Config::resolve(cli.config.as_deref())?;
    eprintln!(
        "# icepilot {} seed={} config={} config_hash={} git={}",
        env!("CARGO_PKG_VERSION"),
        cli.seed,
        cfg_path
            .as_deref()
            .map_or_else(|| "<defaults>".into(), |p| p.display().to_string()),
        cfg.hash(),
        git_describe()
    );
    let verbose = cli.verbose;
    match cli.command {
        Command::GenData {
            out,
            scenes,
            renders,
        } => {
            if scenes == 0 || renders == 0 {
                return Err(Error::Config(
                    "gen-data needs at least one scene and one render".into(),
                )
                .into());
            }
            let m = dataset::generate(&out, &cfg, scenes, renders, cli.seed)?;
            println!(
                "{}",
                json!({ "scenes": m.shards.len(), "records": m.record_count(), "out": out })
            );
        }
        Command::Train {
            data,
            out,
            epochs,
            learning_rate,
        } => {
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            if let Some(lr) = learning_rate {
                cfg.train.learning_rate = lr;
            }
            cfg.train.seed = cli.seed;
            if cfg.fan.width != cfg.fan.height || cfg.model.input_size != cfg.fan.width as usize {
                return Err(Error::Config(
                    "model.input_size must equal the square fan size".into(),
                )
                .into());
            }
            let samples = dataset::load_samples(&data, &cfg.model)?;
            log_verbose(verbose, || format!("loaded {} records", samples.len()));
            let (train_set, val_set) =
                split_dataset(&samples, cfg.train.validation_fraction, cfg.train.seed);
            let mut model = PoseRegressor::new(cfg.model.clone()).map_err(Error::Model)?;
            let report = train_with_validation(&mut model, &train_set, &val_set, &cfg.train, |m| {
                log_verbose(verbose, || {
                    format!(
                        "epoch {} train {:.4} validation {:.4} grad {:.2}",
                        m.epoch, m.train_loss, m.validation_loss, m.gradient_norm
                    )
                });
            })
            .map_err(Error::Model)?;
            let manifest = dataset::read_manifest(&data)?;
            let meta = json!({ "train": report, "dataset_seed": manifest.seed, "dataset_config_hash": manifest.config_hash, "train_config": cfg.train });
            checkpoint::save(&out, &model, meta)?;
            println!(
                "{}",
                json!({
                    "initial_validation_loss": report.initial_validation_loss,
                    "best_validation_loss": report.best_validation_loss,
                    "best_epoch": report.best_epoch,
                    "epochs": report.epochs.len(),
                    "out": out,
                })
            );
        }
        Command::Eval {
            ckpt,
            oracle,
            scenes,
            scene_count,
            cases,
            out,
        } => {
            if cases == 0 || (scenes.is_none() && scene_count == 0) {
                return Err(
                    Error::Config("eval needs at least one scene and one case".into()).into(),
                );
            }
            let source = if oracle {
                self::oracle(&cfg)
            } else {
                with_checkpoint(&cfg, ckpt)
            };
            let estimator = load_estimator(&source, &cfg.fan)?;
            let set = match &scenes {
                Some(dir) => dataset::load_scenes(dir, &cfg)?,
                None => (0..scene_count)
                    .map(|i| {
                        let scene = scene_for_seed(scene_seed(cli.seed, i), &cfg)?;
                        let targets = build_target_states(&scene, &cfg.catheter)?;
                        Ok((scene, targets))
                    })
                    .collect::<Result<Vec<_>, Error>>()?,
            };
            let queries =
                sample_queries(set.len(), cases, &cfg.scene.starts, &cfg.catheter, cli.seed);
            let report = evaluate(&set, &queries, estimator.as_ref(), &cfg.catheter, &cfg.fan)?;
            let files = write_report(&out, &report)?;
            log_verbose(verbose, || format!("wrote {files:?}"));
            println!(
                "{}",
                json!({ "estimator": estimator.name(), "total": report.total, "accuracy": report.accuracy, "coverage": report.coverage })
            );
        }
        Command::Simulate {
            scene,
            estimator,
            goals,
            auto,
            start,
            log,
        } => {
            let goals = parse_goals(&goals)?;
            let estimator = load_estimator(&estimator_source(&cfg, estimator), &cfg.fan)?;
            let scene = match scene.as_ref().or(cfg.scene.path.as_ref()) {
                Some(p) => load_scene(p)?,
                None => scene_for_seed(cfg.scene.seed, &cfg)?,
            };
            let start = match start.as_deref() {
                Some(&[a, b, c, d]) => JointState::from_array([a, b, c, d]),
                Some(_) => {
                    return Err(
                        Error::Config("--start takes four comma-separated values".into()).into(),
                    )
                }
                None => cfg.catheter.neutral(),
            };
            cfg.catheter
                .check_limits(&start)
                .map_err(|e| Error::Config(format!("start state: {e}")))?;
            let outcomes = match &log {
                Some(p) => {
                    let f = File::create(p).map_err(|e| Error::io(p, e))?;
                    let mut w = BufWriter::new(f);
                    let o = simulate(&cfg, &scene, estimator, start, &goals, auto, &mut w)?;
                    w.flush().map_err(|e| Error::io(p, e))?;
                    o
                }
                None => simulate(
                    &cfg,
                    &scene,
                    estimator,
                    start,
                    &goals,
                    auto,
                    &mut std::io::stdout().lock(),
                )?,
            };
            for o in &outcomes {
                eprintln!(
                    "{}: {:?} after {} steps{}",
                    o.goal.name(),
                    o.status,
                    o.steps,
                    o.failure
                        .as_deref()
                        .map(|f| format!(" ({f})"))
                        .unwrap_or_default()
                );
            }
        }
        Command::Serve { port, checkpoint } => {
            if let Some(p) = port {
                cfg.service.port = p;
            }
            cfg.service.estimator = with_checkpoint(&cfg, checkpoint);
            cfg.validate()?;
            let addr = cfg.service.address()?;
            let state = ServiceState::from_config(cfg)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr)
                    .await
                    .map_err(|e| Error::io(Path::new(&addr.to_string()), e))?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                serve(listener, state, async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
        Command::Report { input, out, plot } => {
            let report = read_report(&input)?;
            let files = export_report(&out, &report, plot)?;
            println!("{}", json!({ "files": files }));
        }
    }
    Ok(())
}
