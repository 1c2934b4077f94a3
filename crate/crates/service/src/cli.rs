//! The `latcompass` command line.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use latcompass_core::engine::Engine;
use latcompass_core::eval::{recovery_experiment, EvalSpace, RecoveryReport};
use latcompass_core::generator::readout::Attribute;
use latcompass_core::generator::BuiltinGenerator;
use latcompass_core::ids::RecordId;
use latcompass_core::store::{DirectionRecord, DirectionStore, ModerationStatus, StoreError};

use crate::config::{EngineArgs, ServiceConfig, StoreArgs};
use crate::error::ApiError;

#[derive(Debug, Parser)]
#[command(name = "latcompass", version, about = "Interactive discovery of latent directions in image generators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve(ServiceConfig),
    /// Run the direction-recovery experiments on the builtin generator and
    /// write a metrics file.
    Eval(EvalArgs),
    /// Set the moderation status of a saved direction.
    Moderate {
        id: String,
        #[arg(value_parser = parse_status)]
        status: ModerationStatus,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Write a saved direction to a JSON file.
    ExportDirection {
        id: String,
        file: PathBuf,
        /// Replace the file if it exists.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Add a direction from a JSON file; it starts out pending moderation.
    ImportDirection {
        file: PathBuf,
        #[command(flatten)]
        store: StoreArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Runs seeds 0..N for every experiment.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    /// Metrics file to write.
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
    /// Images sorted per calibration.
    #[arg(long, env = "LATCOMPASS_EVAL_N_TRAIN", default_value_t = 14)]
    pub n_train: usize,
    /// Planted axis to recover (1 to 4); repeat for several. Defaults to all.
    #[arg(long = "attribute", value_parser = clap::value_parser!(u8).range(1..=4))]
    pub attributes: Vec<u8>,
    /// `scene` or `detail`; repeat for both. Defaults to both.
    #[arg(long = "space")]
    pub spaces: Vec<EvalSpace>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

fn parse_status(s: &str) -> Result<ModerationStatus, String> {
    s.parse()
}

/// Parses the process arguments (exiting 2 on usage errors) and runs.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("LATCOMPASS_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve(config) => {
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(crate::server::serve(config))
        }
        Command::Eval(args) => {
            let reports = eval(&args)?;
            write_new_or_replace(&args.out, &serde_json::to_vec_pretty(&reports)?)?;
            for r in &reports {
                println!(
                    "attribute {} {:?}: median_cosine {:.4}, monotonic_fraction {:.2}",
                    r.attribute, r.space, r.median_cosine, r.monotonic_fraction
                );
            }
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Command::Moderate { id, status, store } => {
            let store = open_store(&store)?;
            let record = store.set_moderation_status(&RecordId::from(id), status).map_err(coded)?;
            println!("{} {}", record.id, record.moderation_status);
            Ok(())
        }
        Command::ExportDirection { id, file, force, store } => {
            let store = open_store(&store)?;
            let record = store.get(&RecordId::from(id)).map_err(coded)?;
            let bytes = serde_json::to_vec_pretty(&record)?;
            if force {
                write_new_or_replace(&file, &bytes)?;
            } else {
                write_new(&file, &bytes)?;
            }
            println!("{} -> {}", record.id, file.display());
            Ok(())
        }
        Command::ImportDirection { file, store } => {
            let store = open_store(&store)?;
            let raw = fs::read(&file).with_context(|| format!("cannot read {}", file.display()))?;
            let record: DirectionRecord = serde_json::from_slice(&raw)
                .with_context(|| format!("{} is not a direction record", file.display()))?;
            let record = store.import(record).map_err(coded)?;
            println!("{} {}", record.id, record.moderation_status);
            Ok(())
        }
    }
}

/// Prefixes a store error with its error code.
fn coded(e: StoreError) -> anyhow::Error {
    let api = ApiError::from(e);
    anyhow::anyhow!("{}: {}", api.code, api.message)
}

fn open_store(args: &StoreArgs) -> anyhow::Result<DirectionStore> {
    let store = DirectionStore::open(&args.data_dir).map_err(coded)?;
    for path in store.skipped() {
        tracing::warn!(path = %path.display(), "skipping unreadable direction record");
    }
    Ok(store)
}

fn write_new(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut file = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .with_context(|| format!("cannot create {} (use --force to replace it)", path.display()))?;
    file.write_all(bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn write_new_or_replace(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

/// Runs every requested recovery experiment over seeds `0..args.seeds`.
pub fn eval(args: &EvalArgs) -> anyhow::Result<Vec<RecoveryReport>> {
    let engine = Engine::new(Arc::new(BuiltinGenerator::new()), args.engine.truncation_theta)?;
    let config = args.engine.calibration();
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let attributes: Vec<Attribute> = if args.attributes.is_empty() {
        Attribute::ALL.to_vec()
    } else {
        args.attributes.iter().map(|a| Attribute::from_axis(*a as usize).expect("range-checked")).collect()
    };
    let spaces = if args.spaces.is_empty() { vec![EvalSpace::Scene, EvalSpace::Detail] } else { args.spaces.clone() };
    if config.policy.check(args.n_train / 2, args.n_train - args.n_train / 2).is_err() {
        bail!("--n-train {} does not satisfy the balance policy", args.n_train);
    }
    let mut reports = Vec::new();
    for space in &spaces {
        for attribute in &attributes {
            tracing::info!(attribute = attribute.axis(), ?space, "running recovery experiment");
            reports.push(recovery_experiment(&engine, *attribute, args.n_train, &seeds, *space, &config)?);
        }
    }
    Ok(reports)
}
