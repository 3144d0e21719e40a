//! The experiment matrix: for every (strategy, alpha, seed) cell, build the
//! split, partition, metadata, and strategy pipeline, then persist the
//! metrics record and artifacts before moving on — a crash loses at most the
//! in-flight cell.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use fligan_core::federation::SyntheticSampler;
use fligan_core::{
    collect_local_metadata, dirichlet_partition, load_dataset, merge_metadata, run_fligan,
    sample_matching, save_weights, split_train_test, timed, train_fedgan_baseline,
    train_federated_classifier, train_federated_gan, AugmentOutcome, AugmentationHistory,
    Dataset, EfficacyReport, GanRoundLog, GlobalMetadata, MetricsRecord, NodePartition, RoundLog,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Strategy};
use crate::{CliError, Result};

/// Directory layout of one run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
    pub cells: PathBuf,
    pub plots: PathBuf,
    pub tables: PathBuf,
}

impl RunPaths {
    pub fn results_csv(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn cell_dir(&self, strategy: Strategy, alpha: f64, seed: u64) -> PathBuf {
        self.cells.join(format!("{strategy}_a{alpha}_s{seed}"))
    }
}

/// Create a fresh timestamped run directory under `base`; an existing
/// directory is never reused or clobbered.
pub fn prepare_run_dir(base: impl AsRef<Path>) -> Result<RunPaths> {
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let mut candidate = base.as_ref().join(format!("run-{stamp}"));
    let mut suffix = 1u32;
    while candidate.exists() {
        candidate = base.as_ref().join(format!("run-{stamp}-{suffix}"));
        suffix += 1;
    }
    let paths = RunPaths {
        cells: candidate.join("cells"),
        plots: candidate.join("plots"),
        tables: candidate.join("tables"),
        root: candidate,
    };
    std::fs::create_dir_all(&paths.cells)?;
    std::fs::create_dir_all(&paths.plots)?;
    std::fs::create_dir_all(&paths.tables)?;
    Ok(paths)
}

/// Everything one cell produced besides its metrics row.
#[derive(Debug)]
pub struct CellResult {
    pub record: MetricsRecord,
    pub history: Option<AugmentationHistory>,
    pub efficacy: Option<EfficacyReport>,
}

/// Per-(strategy, alpha) means across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub strategy: String,
    pub alpha: f64,
    pub seeds: usize,
    pub mean_accuracy: f64,
    pub mean_wall_clock_seconds: f64,
    pub mean_synthetic_rows: f64,
    pub mean_steps: f64,
}

#[derive(Debug)]
pub struct MatrixOutcome {
    pub records: Vec<MetricsRecord>,
    pub cells: Vec<CellResult>,
    pub averages: Vec<AverageRow>,
    /// Training rows after the test split, for the synthetic-share table.
    pub real_train_rows: usize,
}

/// Shared per-(alpha, seed) state: the global split and node partitions are
/// identical for every strategy so accuracy comparisons are well defined.
pub struct PreparedWorld {
    pub parts: Vec<NodePartition>,
    pub gm: GlobalMetadata,
    pub test: Dataset,
    pub train_rows: usize,
}

/// Split, partition, and run the metadata round over an already loaded
/// dataset.
pub fn prepare_world(
    cfg: &ExperimentConfig,
    data: &Dataset,
    alpha: f64,
    seed: u64,
) -> Result<PreparedWorld> {
    let (train, test) = split_train_test(data, cfg.partition.test_fraction, seed)?;
    let parts = dirichlet_partition(&train, cfg.partition.n_nodes, alpha, seed)?;
    let locals: Vec<_> = parts
        .iter()
        .map(|p| collect_local_metadata(p, data.schema()))
        .collect();
    let gm = merge_metadata(data.schema(), &locals)?;
    Ok(PreparedWorld {
        parts,
        gm,
        test,
        train_rows: train.len(),
    })
}

/// Load the configured dataset and prepare the world for one (alpha, seed).
pub fn prepare_world_from_config(
    cfg: &ExperimentConfig,
    alpha: f64,
    seed: u64,
) -> Result<PreparedWorld> {
    let schema = cfg.dataset.schema()?;
    let report = load_dataset(&cfg.dataset.path, &schema)?;
    if report.rows_dropped > 0 {
        log::warn!("{} rows dropped while loading {}", report.rows_dropped, cfg.dataset.path.display());
    }
    prepare_world(cfg, &report.dataset, alpha, seed)
}

/// Training rows after the test split (seed-invariant; see `run_matrix`).
pub fn training_rows(cfg: &ExperimentConfig) -> Result<usize> {
    let schema = cfg.dataset.schema()?;
    let report = load_dataset(&cfg.dataset.path, &schema)?;
    let (train, _) = split_train_test(&report.dataset, cfg.partition.test_fraction, cfg.experiment.seed)?;
    Ok(train.len())
}

struct RunLogFile(File);

impl RunLogFile {
    fn create(path: &Path) -> Result<Self> {
        Ok(RunLogFile(File::create(path)?))
    }

    fn line(&mut self, text: impl AsRef<str>) -> Result<()> {
        writeln!(self.0, "{}", text.as_ref())?;
        Ok(())
    }

    fn gan_rounds(&mut self, logs: &[GanRoundLog]) -> Result<()> {
        for l in logs {
            self.line(format!(
                "gan label={} group={} round={} nodes={:?} counts={:?} critic_loss={:.4} gen_loss={:.4} secs={:.2}",
                l.label, l.group_index, l.round, l.participants, l.sample_counts,
                l.critic_loss, l.generator_loss, l.seconds
            ))?;
        }
        Ok(())
    }

    fn classifier_rounds(&mut self, prefix: &str, logs: &[RoundLog]) -> Result<()> {
        for l in logs {
            self.line(format!(
                "{prefix} round={} nodes={:?} counts={:?} loss={:.4} secs={:.2}",
                l.round, l.participants, l.sample_counts, l.aggregate_loss, l.seconds
            ))?;
        }
        Ok(())
    }
}

fn persist_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_augment_outcome(
    cell_dir: &Path,
    log: &mut RunLogFile,
    outcome: &AugmentOutcome,
) -> Result<()> {
    persist_json(&cell_dir.join("history.json"), &outcome.history)?;
    save_weights(cell_dir.join("models").join("classifier.flt"), &outcome.model)?;
    for (step, logs) in outcome.step_round_logs.iter().enumerate() {
        log.classifier_rounds(&format!("classifier step={step}"), logs)?;
    }
    for s in &outcome.history.steps {
        log.line(format!(
            "augment step={} synthetic_total={} accuracy={:.4} max_node_spread={}",
            s.step, s.synthetic_rows_total, s.accuracy, s.max_node_spread
        ))?;
    }
    Ok(())
}

/// Run one cell and persist its artifacts under `cell_dir`.
pub fn run_cell(
    cfg: &ExperimentConfig,
    data: &Dataset,
    strategy: Strategy,
    alpha: f64,
    seed: u64,
    cell_dir: &Path,
) -> Result<CellResult> {
    std::fs::create_dir_all(cell_dir.join("models"))?;
    let mut log = RunLogFile::create(&cell_dir.join("run.log"))?;
    log.line(format!("cell strategy={strategy} alpha={alpha} seed={seed}"))?;

    let world = prepare_world(cfg, data, alpha, seed)?;
    std::fs::write(cell_dir.join("metadata.json"), world.gm.to_json()?)?;
    for p in &world.parts {
        let dist = fligan_core::class_distribution(p);
        log.line(format!("node {} class_counts={:?}", p.node_id, dist.counts))?;
    }

    let node_data: Vec<Dataset> = world.parts.iter().map(|p| p.data.clone()).collect();
    let (outcome, wall) = timed(|| -> Result<(f64, usize, usize, Option<AugmentOutcome>, Option<EfficacyReport>)> {
        match strategy {
            Strategy::FedAvg => {
                let (model, acc, logs) = train_federated_classifier(
                    &node_data,
                    &world.gm,
                    &cfg.classifier,
                    &world.test,
                    seed,
                )?;
                log.classifier_rounds("classifier", &logs)?;
                save_weights(cell_dir.join("models").join("classifier.flt"), &model)?;
                Ok((acc, 0, 0, None, None))
            }
            Strategy::Fligan => {
                let (bank, gan_logs) = train_federated_gan(
                    &world.parts,
                    &world.gm,
                    &cfg.gan.schedule,
                    &cfg.gan.gan,
                    seed,
                )?;
                log.gan_rounds(&gan_logs)?;
                bank.save_dir(cell_dir.join("models").join("bank"))?;
                let outcome = run_fligan(
                    &world.parts,
                    &world.gm,
                    &bank,
                    &cfg.classifier,
                    &cfg.augment,
                    &world.test,
                    seed,
                )?;
                write_augment_outcome(cell_dir, &mut log, &outcome)?;
                let efficacy = maybe_efficacy(cfg, &bank, &world, seed)?;
                let best = outcome.history.best_step;
                let synth = outcome.history.steps[best].synthetic_rows_total;
                Ok((outcome.history.best_accuracy, synth, best, Some(outcome), efficacy))
            }
            Strategy::FedGan => {
                let (model, gan_logs) = train_fedgan_baseline(
                    &world.parts,
                    &world.gm,
                    cfg.fedgan.rounds,
                    cfg.fedgan.epochs,
                    &cfg.gan.gan,
                    seed,
                )?;
                log.gan_rounds(&gan_logs)?;
                model.save_dir(cell_dir.join("models").join("bank"))?;
                let outcome = run_fligan(
                    &world.parts,
                    &world.gm,
                    &model,
                    &cfg.classifier,
                    &cfg.augment,
                    &world.test,
                    seed,
                )?;
                write_augment_outcome(cell_dir, &mut log, &outcome)?;
                let efficacy = maybe_efficacy(cfg, &model, &world, seed)?;
                let best = outcome.history.best_step;
                let synth = outcome.history.steps[best].synthetic_rows_total;
                Ok((outcome.history.best_accuracy, synth, best, Some(outcome), efficacy))
            }
        }
    });
    let (accuracy, synthetic_rows_added, steps_taken, augment_outcome, efficacy) = outcome?;

    let record = MetricsRecord {
        strategy: strategy.name().to_string(),
        alpha,
        seed,
        accuracy,
        wall_clock_seconds: wall,
        synthetic_rows_added,
        steps_taken,
    };
    persist_json(&cell_dir.join("record.json"), &record)?;
    if let Some(e) = &efficacy {
        persist_json(&cell_dir.join("efficacy.json"), e)?;
    }
    log.line(format!(
        "done accuracy={accuracy:.4} wall={wall:.2}s synthetic={synthetic_rows_added} steps={steps_taken}"
    ))?;

    Ok(CellResult {
        record,
        history: augment_outcome.map(|o| o.history),
        efficacy,
    })
}

fn maybe_efficacy(
    cfg: &ExperimentConfig,
    sampler: &dyn SyntheticSampler,
    world: &PreparedWorld,
    seed: u64,
) -> Result<Option<EfficacyReport>> {
    if !cfg.experiment.efficacy {
        return Ok(None);
    }
    // Rebuild the training table the federation saw, then mirror its class
    // counts with synthetic rows.
    let mut real_train = Dataset::empty(world.test.schema().clone());
    for p in &world.parts {
        real_train.extend_rows(&p.data)?;
    }
    let synth = sample_matching(sampler, &real_train, &world.gm, seed)?;
    Ok(Some(fligan_core::ml_efficacy(
        &real_train,
        &world.test,
        &synth,
        &world.gm,
        seed,
    )?))
}

const CSV_HEADER: &str =
    "strategy,alpha,seed,accuracy,wall_clock_seconds,synthetic_rows_added,steps_taken";

fn record_csv_row(r: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.strategy, r.alpha, r.seed, r.accuracy, r.wall_clock_seconds, r.synthetic_rows_added,
        r.steps_taken
    )
}

/// Parse a results.csv produced by [`run_matrix`].
pub fn read_records_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| -> Result<&str> {
            row.get(i)
                .ok_or_else(|| CliError::Report(format!("results.csv row too short: {row:?}")))
        };
        out.push(MetricsRecord {
            strategy: field(0)?.to_string(),
            alpha: field(1)?.parse().map_err(|e| CliError::Report(format!("bad alpha: {e}")))?,
            seed: field(2)?.parse().map_err(|e| CliError::Report(format!("bad seed: {e}")))?,
            accuracy: field(3)?.parse().map_err(|e| CliError::Report(format!("bad accuracy: {e}")))?,
            wall_clock_seconds: field(4)?
                .parse()
                .map_err(|e| CliError::Report(format!("bad wall clock: {e}")))?,
            synthetic_rows_added: field(5)?
                .parse()
                .map_err(|e| CliError::Report(format!("bad synthetic rows: {e}")))?,
            steps_taken: field(6)?
                .parse()
                .map_err(|e| CliError::Report(format!("bad steps: {e}")))?,
        });
    }
    Ok(out)
}

/// Means per (strategy, alpha), in first-appearance order.
pub fn compute_averages(records: &[MetricsRecord]) -> Vec<AverageRow> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in records {
        if !keys.iter().any(|(s, a)| *s == r.strategy && *a == r.alpha) {
            keys.push((r.strategy.clone(), r.alpha));
        }
    }
    keys.into_iter()
        .map(|(strategy, alpha)| {
            let group: Vec<&MetricsRecord> = records
                .iter()
                .filter(|r| r.strategy == strategy && r.alpha == alpha)
                .collect();
            let n = group.len() as f64;
            AverageRow {
                strategy,
                alpha,
                seeds: group.len(),
                mean_accuracy: group.iter().map(|r| r.accuracy).sum::<f64>() / n,
                mean_wall_clock_seconds: group.iter().map(|r| r.wall_clock_seconds).sum::<f64>() / n,
                mean_synthetic_rows: group.iter().map(|r| r.synthetic_rows_added as f64).sum::<f64>() / n,
                mean_steps: group.iter().map(|r| r.steps_taken as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Run the full strategy x alpha x seed matrix described by `cfg`, persisting
/// records incrementally into `paths`, then emit the report files.
pub fn run_matrix(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<MatrixOutcome> {
    cfg.validate()?;
    std::fs::write(paths.root.join("config.toml"), cfg.to_toml()?)?;

    let schema = cfg.dataset.schema()?;
    let report = load_dataset(&cfg.dataset.path, &schema)?;
    if report.rows_dropped > 0 {
        log::warn!("{} rows dropped while loading {}", report.rows_dropped, cfg.dataset.path.display());
    }
    let data = report.dataset;
    if data.is_empty() {
        return Err(CliError::Config(format!(
            "{} holds no usable rows",
            cfg.dataset.path.display()
        )));
    }

    // Per-class test counts are floor(fraction * n) independent of the seed,
    // so the training size is the same for every cell.
    let real_train_rows = {
        let (train, _) = split_train_test(&data, cfg.partition.test_fraction, cfg.experiment.seed)?;
        train.len()
    };

    let mut csv_file = File::create(paths.results_csv())?;
    writeln!(csv_file, "{CSV_HEADER}")?;
    csv_file.flush()?;

    let mut records = Vec::new();
    let mut cells = Vec::new();
    for &strategy in &cfg.experiment.strategies {
        for &alpha in &cfg.partition.alphas {
            for &seed in &cfg.seeds() {
                log::info!("cell strategy={strategy} alpha={alpha} seed={seed}");
                let cell_dir = paths.cell_dir(strategy, alpha, seed);
                let cell = run_cell(cfg, &data, strategy, alpha, seed, &cell_dir)?;
                writeln!(csv_file, "{}", record_csv_row(&cell.record))?;
                csv_file.flush()?;
                records.push(cell.record.clone());
                cells.push(cell);
            }
        }
    }

    let averages = compute_averages(&records);
    let mut avg_csv = String::from(
        "strategy,alpha,seeds,mean_accuracy,mean_wall_clock_seconds,mean_synthetic_rows,mean_steps\n",
    );
    for a in &averages {
        avg_csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            a.strategy, a.alpha, a.seeds, a.mean_accuracy, a.mean_wall_clock_seconds,
            a.mean_synthetic_rows, a.mean_steps
        ));
    }
    std::fs::write(paths.root.join("averages.csv"), avg_csv)?;

    let outcome = MatrixOutcome {
        records,
        cells,
        averages,
        real_train_rows,
    };
    crate::report::emit_reports(cfg, &outcome, paths)?;
    Ok(outcome)
}
