use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fligan_cli::config::{ExperimentConfig, Strategy};
use fligan_cli::runner::{self, prepare_world_from_config, RunPaths};
use fligan_cli::{CliError, Result};
use fligan_core::federation::SyntheticSampler;
use fligan_core::{
    load_sampler, ml_efficacy, run_fligan, sample_matching, train_fedgan_baseline,
    train_federated_gan, SavedSampler,
};

#[derive(Parser)]
#[command(
    name = "fligan",
    version,
    about = "Federated learning on incomplete tabular data with per-class federated GAN augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full strategy x alpha x seed experiment matrix.
    Run(RunArgs),
    /// Train a generator bank only and persist it for later use.
    Gan(GanArgs),
    /// Step-by-step augmentation from a saved generator bank.
    Augment(BankArgs),
    /// Synthetic-data efficacy check from a saved generator bank.
    Efficacy(BankArgs),
    /// Re-emit plots and tables from a finished run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the strategy list (repeatable).
    #[arg(long)]
    strategy: Vec<String>,
    /// Override the Dirichlet alpha list (repeatable).
    #[arg(long)]
    alpha: Vec<f64>,
    /// Override the node count.
    #[arg(long)]
    nodes: Option<usize>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the repeat count.
    #[arg(long)]
    repeats: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GanArgs {
    #[arg(long)]
    config: PathBuf,
    /// Which generator to train: fligan (per-label bank) or fedgan (joint).
    #[arg(long, default_value = "fligan")]
    strategy: String,
    /// Dirichlet alpha (default: first entry of the config list).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Bank output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BankArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory written by `fligan gan`.
    #[arg(long)]
    bank: PathBuf,
    /// Output directory (default: alongside the bank).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A run directory produced by `fligan run`.
    #[arg(long)]
    run: PathBuf,
}

/// Recorded next to a saved bank so `augment`/`efficacy` can rebuild the
/// exact split and partitions the bank was trained on.
#[derive(Serialize, Deserialize)]
struct BankMeta {
    strategy: String,
    alpha: f64,
    seed: u64,
    n_nodes: usize,
    test_fraction: f64,
    dataset: PathBuf,
}

fn apply_run_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) -> Result<()> {
    if !args.strategy.is_empty() {
        cfg.experiment.strategies = args
            .strategy
            .iter()
            .map(|s| Strategy::from_str(s))
            .collect::<Result<Vec<_>>>()?;
    }
    if !args.alpha.is_empty() {
        cfg.partition.alphas = args.alpha.clone();
    }
    if let Some(n) = args.nodes {
        cfg.partition.n_nodes = n;
    }
    if let Some(s) = args.seed {
        cfg.experiment.seed = s;
    }
    if let Some(r) = args.repeats {
        cfg.experiment.repeats = r;
    }
    if let Some(out) = &args.out {
        cfg.experiment.out_dir = out.clone();
    }
    cfg.validate()
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    apply_run_overrides(&mut cfg, &args)?;
    let paths = runner::prepare_run_dir(&cfg.experiment.out_dir)?;
    println!("run directory: {}", paths.root.display());
    let outcome = runner::run_matrix(&cfg, &paths)?;
    println!(
        "{}",
        std::fs::read_to_string(paths.root.join("summary.txt"))?
    );
    println!(
        "{} records -> {}",
        outcome.records.len(),
        paths.results_csv().display()
    );
    Ok(())
}

fn cmd_gan(args: GanArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(n) = args.nodes {
        cfg.partition.n_nodes = n;
        cfg.validate()?;
    }
    let strategy = Strategy::from_str(&args.strategy)?;
    if !strategy.uses_gan() {
        return Err(CliError::Config(
            "`gan` trains a generator; pass --strategy fligan or fedgan".into(),
        ));
    }
    let alpha = args.alpha.unwrap_or(cfg.partition.alphas[0]);
    let seed = args.seed.unwrap_or(cfg.experiment.seed);
    let out = args.out.unwrap_or_else(|| {
        cfg.experiment
            .out_dir
            .join(format!("bank-{strategy}-a{alpha}-s{seed}"))
    });

    let world = prepare_world_from_config(&cfg, alpha, seed)?;
    match strategy {
        Strategy::Fligan => {
            let (bank, logs) =
                train_federated_gan(&world.parts, &world.gm, &cfg.gan.schedule, &cfg.gan.gan, seed)?;
            bank.save_dir(&out)?;
            println!(
                "trained {} per-label generators over {} aggregation events",
                bank.generators.len(),
                logs.len()
            );
        }
        Strategy::FedGan => {
            let (model, logs) = train_fedgan_baseline(
                &world.parts,
                &world.gm,
                cfg.fedgan.rounds,
                cfg.fedgan.epochs,
                &cfg.gan.gan,
                seed,
            )?;
            model.save_dir(&out)?;
            println!("trained joint generator over {} aggregation events", logs.len());
        }
        Strategy::FedAvg => unreachable!("rejected above"),
    }
    std::fs::write(out.join("metadata.json"), world.gm.to_json()?)?;
    let meta = BankMeta {
        strategy: strategy.name().into(),
        alpha,
        seed,
        n_nodes: cfg.partition.n_nodes,
        test_fraction: cfg.partition.test_fraction,
        dataset: cfg.dataset.path.clone(),
    };
    std::fs::write(out.join("bank_meta.json"), serde_json::to_string_pretty(&meta)?)?;
    println!("bank written to {}", out.display());
    Ok(())
}

fn load_bank(args: &BankArgs, cfg: &ExperimentConfig) -> Result<(SavedSampler, BankMeta)> {
    let meta: BankMeta = serde_json::from_str(
        &std::fs::read_to_string(args.bank.join("bank_meta.json")).map_err(|e| {
            CliError::Config(format!(
                "{} does not look like a saved bank (missing bank_meta.json): {e}",
                args.bank.display()
            ))
        })?,
    )?;
    if meta.dataset != cfg.dataset.path {
        log::warn!(
            "bank was trained on {} but the config points at {}",
            meta.dataset.display(),
            cfg.dataset.path.display()
        );
    }
    Ok((load_sampler(&args.bank)?, meta))
}

fn cmd_augment(args: BankArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let (sampler, meta) = load_bank(&args, &cfg)?;
    let world = prepare_world_from_config(&cfg, meta.alpha, meta.seed)?;
    let outcome = run_fligan(
        &world.parts,
        &world.gm,
        &sampler,
        &cfg.classifier,
        &cfg.augment,
        &world.test,
        meta.seed,
    )?;
    let out = args.out.unwrap_or_else(|| args.bank.clone());
    std::fs::create_dir_all(&out)?;
    std::fs::write(
        out.join("history.json"),
        serde_json::to_string_pretty(&outcome.history)?,
    )?;
    fligan_core::save_weights(out.join("classifier.flt"), &outcome.model)?;
    for s in &outcome.history.steps {
        println!(
            "step {:2}  synthetic {:6}  accuracy {:.4}  spread {}",
            s.step, s.synthetic_rows_total, s.accuracy, s.max_node_spread
        );
    }
    println!(
        "best step {} with accuracy {:.4}; artifacts in {}",
        outcome.history.best_step,
        outcome.history.best_accuracy,
        out.display()
    );
    Ok(())
}

fn cmd_efficacy(args: BankArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let (sampler, meta) = load_bank(&args, &cfg)?;
    let world = prepare_world_from_config(&cfg, meta.alpha, meta.seed)?;
    let mut real_train = fligan_core::Dataset::empty(world.test.schema().clone());
    for p in &world.parts {
        real_train.extend_rows(&p.data)?;
    }
    let synth = sample_matching(&sampler as &dyn SyntheticSampler, &real_train, &world.gm, meta.seed)?;
    let report = ml_efficacy(&real_train, &world.test, &synth, &world.gm, meta.seed)?;
    let out = args.out.unwrap_or_else(|| args.bank.clone());
    std::fs::create_dir_all(&out)?;
    std::fs::write(
        out.join("efficacy.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "real-trained accuracy      {:.4}\nsynthetic-trained accuracy {:.4}\ngap                        {:+.4}{}",
        report.real_data_accuracy,
        report.synthetic_data_accuracy,
        report.gap,
        if report.degenerate_synthetic { "  (degenerate synthetic set)" } else { "" }
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let root = args.run.clone();
    let paths = RunPaths {
        cells: root.join("cells"),
        plots: root.join("plots"),
        tables: root.join("tables"),
        root,
    };
    std::fs::create_dir_all(&paths.plots)?;
    std::fs::create_dir_all(&paths.tables)?;

    let records = runner::read_records_csv(&paths.results_csv())?;
    let mut histories = Vec::new();
    let mut efficacy = Vec::new();
    if paths.cells.is_dir() {
        let mut cell_dirs: Vec<PathBuf> = std::fs::read_dir(&paths.cells)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        cell_dirs.sort();
        for dir in cell_dirs {
            let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let strategy = name.split('_').next().unwrap_or("unknown").to_string();
            if let Ok(text) = std::fs::read_to_string(dir.join("history.json")) {
                histories.push((name.clone(), serde_json::from_str(&text)?));
            }
            if let Ok(text) = std::fs::read_to_string(dir.join("efficacy.json")) {
                efficacy.push((strategy, serde_json::from_str(&text)?));
            }
        }
    }

    // dataset name and training size from the config snapshot when present
    let (dataset, real_rows) = match ExperimentConfig::load(paths.root.join("config.toml")) {
        Ok(cfg) => {
            let rows = runner::training_rows(&cfg).unwrap_or(0);
            (cfg.dataset.name(), rows)
        }
        Err(_) => ("dataset".to_string(), 0),
    };
    fligan_cli::report::emit_from_parts(&dataset, &records, &histories, &efficacy, real_rows, &paths)?;
    println!("reports rewritten under {}", paths.root.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Gan(args) => cmd_gan(args),
        Command::Augment(args) => cmd_augment(args),
        Command::Efficacy(args) => cmd_efficacy(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
