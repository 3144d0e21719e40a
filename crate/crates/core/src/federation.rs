//! Federated coordination: count-weighted FedAvg aggregation, the per-label
//! federated GAN (grouped nodes, decayed budgets, richest group first), the
//! whole-table FedGAN baseline, and federated classifier training. All
//! weight exchange flows through the [`Transport`] seam.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::{self, GanConfig, GanPair, TrainStats};
use crate::grouping::{group_nodes, schedule};
use crate::metadata::{decode, encode, EncodedMatrix, EncodingLayout, GlobalMetadata};
use crate::nn;
use crate::seeding::{self, stage};
use crate::tabular::{class_distribution, ClassDistribution, Dataset, NodePartition};
use crate::transport::{InProcessTransport, Transport, WeightUpdate};
use crate::weights::{load_weights, save_weights, WeightSet};

/// Synthetic column name for the label block the FedGAN baseline appends.
const LABEL_BLOCK: &str = "__label__";

/// Count-weighted mean of weight sets: `sum_k (n_k / sum n) * w_k`.
pub fn fedavg_aggregate(weights: &[WeightSet], counts: &[usize]) -> Result<WeightSet> {
    if weights.is_empty() || weights.len() != counts.len() {
        return Err(Error::Contract(format!(
            "need matching non-empty weights/counts, got {} and {}",
            weights.len(),
            counts.len()
        )));
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Contract("aggregation counts must be positive".into()));
    }
    for w in &weights[1..] {
        if !weights[0].same_layout(w) {
            return Err(Error::Contract(
                "weight sets differ in tensor names or shapes; federated encoding should have prevented this".into(),
            ));
        }
    }
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let mut out = weights[0].clone();
    for t in out.tensors_mut() {
        t.array.fill(0.0);
    }
    for (w, &c) in weights.iter().zip(counts) {
        let share = c as f64 / total;
        for (acc, src) in out.tensors_mut().iter_mut().zip(w.tensors()) {
            acc.array.scaled_add(share, &src.array);
        }
    }
    Ok(out)
}

/// Budgets for the per-label federated GAN: initial rounds/epochs, their
/// per-group decay rates, and the DBSCAN grouping parameters over
/// log(1 + count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanScheduleConfig {
    pub r_init: usize,
    pub e_init: usize,
    pub alpha_r: f64,
    pub alpha_e: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
}

impl Default for GanScheduleConfig {
    fn default() -> Self {
        GanScheduleConfig {
            r_init: 3,
            e_init: 60,
            alpha_r: 0.5,
            alpha_e: 0.5,
            dbscan_eps: 0.5,
            dbscan_min_pts: 1,
        }
    }
}

/// One federated classifier round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub participants: Vec<usize>,
    pub sample_counts: Vec<usize>,
    pub aggregate_loss: f64,
    pub seconds: f64,
}

/// One federated GAN aggregation event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanRoundLog {
    pub label: String,
    pub group_index: usize,
    pub round: usize,
    pub participants: Vec<usize>,
    pub sample_counts: Vec<usize>,
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub seconds: f64,
}

/// Federated classifier hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![64, 64],
            rounds: 10,
            local_epochs: 2,
            batch_size: 64,
            learning_rate: 1e-3,
        }
    }
}

impl ClassifierConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("classifier dims must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("classifier learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One trained generator per class label that had at least one data-holding
/// node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeneratorBank {
    pub generators: BTreeMap<String, WeightSet>,
}

/// The FedGAN baseline's single whole-table generator; its layout carries the
/// extra one-hot label block.
#[derive(Debug, Clone, PartialEq)]
pub struct FedGanModel {
    pub generator: WeightSet,
    pub layout: EncodingLayout,
}

/// Source of class-conditional synthetic rows. [`GeneratorBank`] samples its
/// per-label generator directly; [`FedGanModel`] conditions by rejection on
/// the generated label block.
pub trait SyntheticSampler: Sync {
    fn has_label(&self, label: &str) -> bool;
    fn sample_rows(&self, label: &str, n: usize, gm: &GlobalMetadata, seed: u64) -> Result<Dataset>;
}

impl SyntheticSampler for GeneratorBank {
    fn has_label(&self, label: &str) -> bool {
        self.generators.contains_key(label)
    }

    fn sample_rows(&self, label: &str, n: usize, gm: &GlobalMetadata, seed: u64) -> Result<Dataset> {
        let gen = self.generators.get(label).ok_or_else(|| {
            Error::Contract(format!("no generator trained for label '{label}'"))
        })?;
        gan::sample(gen, n, label, gm, seed)
    }
}

impl SyntheticSampler for FedGanModel {
    fn has_label(&self, label: &str) -> bool {
        // one joint generator covers every label it was trained on
        matches!(&self.layout.blocks.last(), Some(b) if match &b.kind {
            crate::metadata::BlockKind::Categorical { values } => values.iter().any(|v| v == label),
            _ => false,
        })
    }

    fn sample_rows(&self, label: &str, n: usize, gm: &GlobalMetadata, seed: u64) -> Result<Dataset> {
        let label_idx = gm.class_index(label).ok_or_else(|| {
            Error::Contract(format!("label '{label}' is unknown to the federation"))
        })?;
        let base = gm.layout();
        let n_classes = gm.class_labels().len();
        if self.layout.width() != base.width() + n_classes {
            return Err(Error::Contract(
                "joint generator layout does not extend the federation layout by one label block".into(),
            ));
        }
        if n == 0 {
            return Ok(Dataset::empty(gm.schema().clone()));
        }

        let label_off = base.width();
        let noise_dim = nn::input_width(&self.generator);
        let mut rng = seeding::rng_from(seed, &[stage::SAMPLE, label_idx as u64]);
        let mut kept: Vec<f64> = Vec::with_capacity(n * base.width());
        let mut kept_rows = 0usize;

        // Conditioning by rejection keeps the feature/label correlation the
        // generator learned; capped so a label the generator almost never
        // emits cannot stall the pipeline.
        let mut attempts = 0;
        while kept_rows < n && attempts < 64 {
            let batch = n.clamp(64, 4096);
            let noise = Array2::from_shape_fn((batch, noise_dim), |_| StandardNormal.sample(&mut rng));
            let out = gan::generator_forward(&self.generator, &noise, &self.layout);
            for i in 0..batch {
                if kept_rows == n {
                    break;
                }
                let mut best = 0usize;
                let mut best_v = f64::NEG_INFINITY;
                for j in 0..n_classes {
                    let v = out[[i, label_off + j]];
                    if v > best_v {
                        best_v = v;
                        best = j;
                    }
                }
                if best == label_idx {
                    kept.extend((0..base.width()).map(|j| out[[i, j]]));
                    kept_rows += 1;
                }
            }
            attempts += 1;
        }
        if kept_rows < n {
            log::warn!(
                "joint generator rarely emits label '{label}'; forcing {} of {n} rows",
                n - kept_rows
            );
            let noise = Array2::from_shape_fn((n - kept_rows, noise_dim), |_| {
                StandardNormal.sample(&mut rng)
            });
            let out = gan::generator_forward(&self.generator, &noise, &self.layout);
            for i in 0..out.nrows() {
                kept.extend((0..base.width()).map(|j| out[[i, j]]));
            }
        }

        let features = Array2::from_shape_vec((n, base.width()), kept)
            .expect("kept buffer matches n x width");
        let encoded = EncodedMatrix {
            features,
            labels: vec![label_idx; n],
            layout: base,
        };
        decode(&encoded, gm)
    }
}

fn encode_partitions(
    parts: &[NodePartition],
    gm: &GlobalMetadata,
) -> Result<Vec<Option<EncodedMatrix>>> {
    parts
        .iter()
        .map(|p| {
            if p.data.is_empty() {
                Ok(None)
            } else {
                encode(&p.data, gm).map(Some)
            }
        })
        .collect()
}

/// Train one federated WGAN-GP per class label (grouped nodes, decayed
/// budgets, data-rich groups first) and return the generator bank plus one
/// log entry per aggregation event.
pub fn train_federated_gan(
    parts: &[NodePartition],
    gm: &GlobalMetadata,
    sched: &GanScheduleConfig,
    cfg: &GanConfig,
    seed: u64,
) -> Result<(GeneratorBank, Vec<GanRoundLog>)> {
    cfg.validate()?;
    for (i, p) in parts.iter().enumerate() {
        if p.node_id != i {
            return Err(Error::Contract("partitions must be ordered by node id".into()));
        }
    }

    let layout = gm.layout();
    let encoded = encode_partitions(parts, gm)?;
    let dists: Vec<ClassDistribution> = parts.iter().map(class_distribution).collect();

    let labels: Vec<(usize, String)> = gm
        .class_labels()
        .iter()
        .cloned()
        .enumerate()
        .collect();

    let per_label: Vec<(String, Option<WeightSet>, Vec<GanRoundLog>)> = labels
        .par_iter()
        .map(|(li, label)| -> Result<_> {
            let groups = group_nodes(label, &dists, sched.dbscan_eps, sched.dbscan_min_pts)?;
            if groups.is_empty() {
                log::warn!("label '{label}' has no data-holding nodes; skipping its generator");
                return Ok((label.clone(), None, Vec::new()));
            }

            let mut transport = InProcessTransport::new();
            let init = gan::init_gan(
                cfg,
                &layout,
                seeding::derive_seed(seed, &[stage::GAN_INIT, *li as u64]),
            )?;
            transport.publish_global(init.to_weightset());

            let mut logs = Vec::new();
            for (gidx, group) in groups.iter().enumerate() {
                let budget = schedule(sched.r_init, sched.e_init, sched.alpha_r, sched.alpha_e, gidx)?;
                log::info!(
                    "label '{label}' group {gidx}: nodes {:?}, volume {}, {} rounds x {} epochs",
                    group.member_node_ids,
                    group.volume,
                    budget.rounds,
                    budget.epochs
                );
                for round in 0..budget.rounds {
                    let t0 = Instant::now();
                    let global = GanPair::from_weightset(
                        transport.fetch_global().expect("published above"),
                    );
                    let train_seed = seeding::derive_seed(
                        seed,
                        &[stage::GAN_LOCAL, *li as u64, gidx as u64, round as u64],
                    );
                    let results: Vec<(usize, GanPair, usize, TrainStats)> = group
                        .member_node_ids
                        .par_iter()
                        .map(|&node| -> Result<_> {
                            let rows = encoded[node]
                                .as_ref()
                                .expect("grouped nodes hold data")
                                .rows_with_label(*li);
                            let (pair, stats) =
                                gan::train_local(&global, &rows, budget.epochs, cfg, train_seed)?;
                            Ok((node, pair, rows.n_rows(), stats))
                        })
                        .collect::<Result<_>>()?;

                    for (node, pair, count, _) in &results {
                        transport.submit(WeightUpdate {
                            node_id: *node,
                            weights: pair.to_weightset(),
                            sample_count: *count,
                        });
                    }
                    let updates = transport.drain();
                    let sets: Vec<WeightSet> = updates.iter().map(|u| u.weights.clone()).collect();
                    let counts: Vec<usize> = updates.iter().map(|u| u.sample_count).collect();
                    transport.publish_global(fedavg_aggregate(&sets, &counts)?);

                    let total: f64 = counts.iter().map(|&c| c as f64).sum();
                    let wmean = |pick: fn(&TrainStats) -> f64| {
                        results
                            .iter()
                            .map(|(_, _, c, s)| pick(s) * *c as f64 / total)
                            .sum::<f64>()
                    };
                    logs.push(GanRoundLog {
                        label: label.clone(),
                        group_index: gidx,
                        round,
                        participants: updates.iter().map(|u| u.node_id).collect(),
                        sample_counts: counts,
                        critic_loss: wmean(|s| s.critic_loss),
                        generator_loss: wmean(|s| s.generator_loss),
                        seconds: t0.elapsed().as_secs_f64(),
                    });
                }
            }

            let final_pair = GanPair::from_weightset(transport.fetch_global().expect("published"));
            Ok((label.clone(), Some(final_pair.generator), logs))
        })
        .collect::<Result<_>>()?;

    let mut bank = GeneratorBank::default();
    let mut logs = Vec::new();
    for (label, gen, mut label_logs) in per_label {
        if let Some(gen) = gen {
            bank.generators.insert(label, gen);
        }
        logs.append(&mut label_logs);
    }
    Ok((bank, logs))
}

/// FedGAN baseline: one generator/critic pair trained federatedly on every
/// node's full table, with the class label appended as an extra one-hot
/// block so sampling can recover it.
pub fn train_fedgan_baseline(
    parts: &[NodePartition],
    gm: &GlobalMetadata,
    rounds: usize,
    epochs: usize,
    cfg: &GanConfig,
    seed: u64,
) -> Result<(FedGanModel, Vec<GanRoundLog>)> {
    cfg.validate()?;
    let base = gm.layout();
    let ext = base.with_extra_block(LABEL_BLOCK, gm.class_labels());
    let n_classes = gm.class_labels().len();

    let encoded = encode_partitions(parts, gm)?;
    let extended: Vec<Option<EncodedMatrix>> = encoded
        .into_iter()
        .map(|enc| {
            enc.map(|e| {
                let n = e.n_rows();
                let mut features = Array2::zeros((n, ext.width()));
                features
                    .slice_mut(ndarray::s![.., ..base.width()])
                    .assign(&e.features);
                for (i, &li) in e.labels.iter().enumerate() {
                    features[[i, base.width() + li]] = 1.0;
                }
                EncodedMatrix {
                    features,
                    labels: e.labels,
                    layout: ext.clone(),
                }
            })
        })
        .collect();

    let holders: Vec<usize> = extended
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_some())
        .map(|(i, _)| i)
        .collect();
    if holders.is_empty() {
        return Err(Error::Contract("no node holds any data".into()));
    }
    let _ = n_classes;

    let mut transport = InProcessTransport::new();
    let init = gan::init_gan(cfg, &ext, seeding::derive_seed(seed, &[stage::FEDGAN_INIT]))?;
    transport.publish_global(init.to_weightset());

    let mut logs = Vec::new();
    for round in 0..rounds {
        let t0 = Instant::now();
        let global = GanPair::from_weightset(transport.fetch_global().expect("published"));
        let train_seed = seeding::derive_seed(seed, &[stage::FEDGAN_LOCAL, round as u64]);
        let results: Vec<(usize, GanPair, usize, TrainStats)> = holders
            .par_iter()
            .map(|&node| -> Result<_> {
                let rows = extended[node].as_ref().expect("holders are non-empty");
                let (pair, stats) = gan::train_local(&global, rows, epochs, cfg, train_seed)?;
                Ok((node, pair, rows.n_rows(), stats))
            })
            .collect::<Result<_>>()?;

        for (node, pair, count, _) in &results {
            transport.submit(WeightUpdate {
                node_id: *node,
                weights: pair.to_weightset(),
                sample_count: *count,
            });
        }
        let updates = transport.drain();
        let sets: Vec<WeightSet> = updates.iter().map(|u| u.weights.clone()).collect();
        let counts: Vec<usize> = updates.iter().map(|u| u.sample_count).collect();
        transport.publish_global(fedavg_aggregate(&sets, &counts)?);

        let total: f64 = counts.iter().map(|&c| c as f64).sum();
        let wmean = |pick: fn(&TrainStats) -> f64| {
            results
                .iter()
                .map(|(_, _, c, s)| pick(s) * *c as f64 / total)
                .sum::<f64>()
        };
        logs.push(GanRoundLog {
            label: "all".into(),
            group_index: 0,
            round,
            participants: updates.iter().map(|u| u.node_id).collect(),
            sample_counts: counts,
            critic_loss: wmean(|s| s.critic_loss),
            generator_loss: wmean(|s| s.generator_loss),
            seconds: t0.elapsed().as_secs_f64(),
        });
    }

    let final_pair = GanPair::from_weightset(transport.fetch_global().expect("published"));
    Ok((
        FedGanModel {
            generator: final_pair.generator,
            layout: ext,
        },
        logs,
    ))
}

/// One node's local classifier pass: `local_epochs` shuffled-batch Adam
/// epochs from the current global weights. Returns the trained weights and
/// the mean loss of the final epoch.
fn local_classifier_pass(
    global: &WeightSet,
    rows: &EncodedMatrix,
    n_classes: usize,
    ccfg: &ClassifierConfig,
    seed: u64,
) -> (WeightSet, f64) {
    let mut ws = global.clone();
    let mut adam = nn::Adam::new(&ws, ccfg.learning_rate, 0.9, 0.999);
    let mut rng = seeding::rng_from(seed, &[]);
    let n = rows.n_rows();
    let batch = ccfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut last_epoch_loss = 0.0;
    for _ in 0..ccfg.local_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let x = rows.features.select(ndarray::Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| rows.labels[i]).collect();
            let onehot = nn::one_hot(&labels, n_classes);
            let (loss, grads) = nn::xent_loss_grads(&ws, &x, &onehot);
            adam.step(&mut ws, &grads);
            epoch_loss += loss;
            batches += 1;
        }
        last_epoch_loss = epoch_loss / batches.max(1) as f64;
    }
    (ws, last_epoch_loss)
}

/// Train the federated softmax classifier with FedAvg over `ccfg.rounds`
/// rounds and score it on the shared test set.
pub fn train_federated_classifier(
    node_data: &[Dataset],
    gm: &GlobalMetadata,
    ccfg: &ClassifierConfig,
    test: &Dataset,
    seed: u64,
) -> Result<(WeightSet, f64, Vec<RoundLog>)> {
    ccfg.validate()?;
    let encoded: Vec<Option<EncodedMatrix>> = node_data
        .iter()
        .map(|d| {
            if d.is_empty() {
                Ok(None)
            } else {
                encode(d, gm).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let holders: Vec<usize> = encoded
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_some())
        .map(|(i, _)| i)
        .collect();
    if holders.is_empty() {
        return Err(Error::Contract(
            "federated training needs at least one node with data".into(),
        ));
    }

    let layout = gm.layout();
    let n_classes = gm.class_labels().len();
    let mut dims = vec![layout.width()];
    dims.extend(&ccfg.hidden);
    dims.push(n_classes);

    let mut transport = InProcessTransport::new();
    transport.publish_global(nn::init_mlp(
        &dims,
        seeding::derive_seed(seed, &[stage::CLS_INIT]),
    ));

    let mut logs = Vec::new();
    for round in 0..ccfg.rounds {
        let t0 = Instant::now();
        let global = transport.fetch_global().expect("published above").clone();
        // One derived seed per round, shared by all nodes: local streams
        // depend on the data, not on the node id.
        let round_seed = seeding::derive_seed(seed, &[stage::CLS_ROUND, round as u64]);
        let results: Vec<(usize, WeightSet, usize, f64)> = holders
            .par_iter()
            .map(|&node| {
                let rows = encoded[node].as_ref().expect("holders are non-empty");
                let (ws, loss) = local_classifier_pass(&global, rows, n_classes, ccfg, round_seed);
                (node, ws, rows.n_rows(), loss)
            })
            .collect();

        for (node, ws, count, _) in &results {
            transport.submit(WeightUpdate {
                node_id: *node,
                weights: ws.clone(),
                sample_count: *count,
            });
        }
        let updates = transport.drain();
        let sets: Vec<WeightSet> = updates.iter().map(|u| u.weights.clone()).collect();
        let counts: Vec<usize> = updates.iter().map(|u| u.sample_count).collect();
        transport.publish_global(fedavg_aggregate(&sets, &counts)?);

        let total: f64 = counts.iter().map(|&c| c as f64).sum();
        let agg_loss = results
            .iter()
            .map(|(_, _, c, l)| l * *c as f64 / total)
            .sum::<f64>();
        logs.push(RoundLog {
            round,
            participants: updates.iter().map(|u| u.node_id).collect(),
            sample_counts: counts,
            aggregate_loss: agg_loss,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }

    let model = transport.fetch_global().expect("published").clone();
    let test_enc = encode(test, gm)?;
    let acc = crate::eval::accuracy(&model, &test_enc)?;
    Ok((model, acc, logs))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum BankManifest {
    PerLabel { entries: Vec<BankEntry> },
    Joint { file: String, layout: EncodingLayout },
}

#[derive(Serialize, Deserialize)]
struct BankEntry {
    label: String,
    file: String,
}

impl GeneratorBank {
    /// Persist one container file per label plus a manifest.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (i, (label, gen)) in self.generators.iter().enumerate() {
            let file = format!("generator_{i:03}.flt");
            save_weights(dir.join(&file), gen)?;
            entries.push(BankEntry {
                label: label.clone(),
                file,
            });
        }
        let manifest = BankManifest::PerLabel { entries };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

impl FedGanModel {
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_weights(dir.join("generator.flt"), &self.generator)?;
        let manifest = BankManifest::Joint {
            file: "generator.flt".into(),
            layout: self.layout.clone(),
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

/// A persisted synthetic-row source: either a per-label bank or a joint
/// FedGAN generator.
pub enum SavedSampler {
    Bank(GeneratorBank),
    Joint(FedGanModel),
}

impl SyntheticSampler for SavedSampler {
    fn has_label(&self, label: &str) -> bool {
        match self {
            SavedSampler::Bank(b) => b.has_label(label),
            SavedSampler::Joint(j) => j.has_label(label),
        }
    }

    fn sample_rows(&self, label: &str, n: usize, gm: &GlobalMetadata, seed: u64) -> Result<Dataset> {
        match self {
            SavedSampler::Bank(b) => b.sample_rows(label, n, gm, seed),
            SavedSampler::Joint(j) => j.sample_rows(label, n, gm, seed),
        }
    }
}

/// Load whatever [`GeneratorBank::save_dir`] or [`FedGanModel::save_dir`]
/// wrote into `dir`.
pub fn load_sampler(dir: impl AsRef<Path>) -> Result<SavedSampler> {
    let dir = dir.as_ref();
    let manifest: BankManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    match manifest {
        BankManifest::PerLabel { entries } => {
            let mut bank = GeneratorBank::default();
            for e in entries {
                bank.generators.insert(e.label, load_weights(dir.join(&e.file))?);
            }
            Ok(SavedSampler::Bank(bank))
        }
        BankManifest::Joint { file, layout } => Ok(SavedSampler::Joint(FedGanModel {
            generator: load_weights(dir.join(&file))?,
            layout,
        })),
    }
}

/// Sample a synthetic training set whose per-class counts mirror a reference
/// dataset (used by the efficacy harness). Labels the sampler cannot produce
/// are skipped with a warning.
pub fn sample_matching(
    sampler: &dyn SyntheticSampler,
    reference: &Dataset,
    gm: &GlobalMetadata,
    seed: u64,
) -> Result<Dataset> {
    let mut out = Dataset::empty(reference.schema().clone());
    for (label, count) in reference.class_counts() {
        if !sampler.has_label(&label) {
            log::warn!("sampler has no generator for label '{label}'; efficacy set omits it");
            continue;
        }
        let rows = sampler.sample_rows(
            &label,
            count,
            gm,
            seeding::derive_seed(seed, &[stage::EFFICACY, seeding::hash_label(&label)]),
        )?;
        out.extend_rows(&rows)?;
    }
    if out.is_empty() {
        return Err(Error::Contract("sampler produced no rows for any label".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::{collect_local_metadata, merge_metadata};
    use crate::tabular::{dirichlet_partition, TableSchema, Value};
    use ndarray::array;
    use proptest::prelude::*;

    fn ws(values: &[f64]) -> WeightSet {
        let mut w = WeightSet::default();
        w.push(
            "w",
            Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap(),
        );
        w
    }

    #[test]
    fn aggregate_single_client_is_identity() {
        let a = ws(&[1.0, 2.0, 3.0]);
        assert_eq!(fedavg_aggregate(&[a.clone()], &[7]).unwrap(), a);
    }

    #[test]
    fn aggregate_weighted_means() {
        let out = fedavg_aggregate(&[ws(&[2.0]), ws(&[4.0])], &[1, 1]).unwrap();
        assert_eq!(out.get("w").unwrap(), &array![[3.0]]);
        let out = fedavg_aggregate(&[ws(&[2.0]), ws(&[4.0])], &[1, 3]).unwrap();
        assert_eq!(out.get("w").unwrap(), &array![[3.5]]);
    }

    #[test]
    fn aggregate_rejects_layout_mismatch() {
        let a = ws(&[1.0]);
        let mut b = ws(&[1.0]);
        b.tensors_mut()[0].name = "other".into();
        assert!(matches!(
            fedavg_aggregate(&[a, b], &[1, 1]),
            Err(Error::Contract(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn aggregate_is_permutation_and_scale_invariant(
            vals in proptest::collection::vec(
                proptest::collection::vec(-10.0f64..10.0, 4),
                2..5
            ),
            counts in proptest::collection::vec(1usize..50, 2..5),
            scale in 2usize..5,
        ) {
            let k = vals.len().min(counts.len());
            let sets: Vec<WeightSet> = vals[..k].iter().map(|v| ws(v)).collect();
            let counts = &counts[..k];

            let base = fedavg_aggregate(&sets, counts).unwrap();

            let mut perm: Vec<usize> = (0..k).collect();
            perm.reverse();
            let sets_p: Vec<WeightSet> = perm.iter().map(|&i| sets[i].clone()).collect();
            let counts_p: Vec<usize> = perm.iter().map(|&i| counts[i]).collect();
            let permuted = fedavg_aggregate(&sets_p, &counts_p).unwrap();

            let scaled_counts: Vec<usize> = counts.iter().map(|c| c * scale).collect();
            let scaled = fedavg_aggregate(&sets, &scaled_counts).unwrap();

            for (a, b) in base.tensors().iter().zip(permuted.tensors()) {
                for (x, y) in a.array.iter().zip(b.array.iter()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
            for (a, b) in base.tensors().iter().zip(scaled.tensors()) {
                for (x, y) in a.array.iter().zip(b.array.iter()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    fn blob_schema() -> TableSchema {
        TableSchema::new(vec![], vec!["x0".into(), "x1".into()], "y").unwrap()
    }

    /// Two linearly separable Gaussian blobs.
    fn blob_dataset(n_per_class: usize, seed: u64) -> Dataset {
        let mut rng = seeding::rng_from(seed, &[]);
        let mut rows = Vec::new();
        for _ in 0..n_per_class {
            let (dx, dy): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            rows.push(vec![
                Value::Cont(2.0 + dx),
                Value::Cont(2.0 + dy),
                Value::Cat("pos".into()),
            ]);
            let (dx, dy): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            rows.push(vec![
                Value::Cont(-2.0 + dx),
                Value::Cont(-2.0 + dy),
                Value::Cat("neg".into()),
            ]);
        }
        Dataset::new(blob_schema(), rows).unwrap()
    }

    fn gm_for(parts: &[NodePartition]) -> GlobalMetadata {
        let locals: Vec<_> = parts
            .iter()
            .map(|p| collect_local_metadata(p, &blob_schema()))
            .collect();
        merge_metadata(&blob_schema(), &locals).unwrap()
    }

    #[test]
    fn classifier_learns_separable_blobs() {
        let train = blob_dataset(120, 1);
        let test = blob_dataset(40, 2);
        let parts = vec![NodePartition { node_id: 0, data: train.clone() }];
        let gm = gm_for(&parts);
        let ccfg = ClassifierConfig { rounds: 10, ..ClassifierConfig::default() };
        let (_, acc, logs) =
            train_federated_classifier(&[train.clone()], &gm, &ccfg, &test, 5).unwrap();
        assert!(acc >= 0.95, "federated accuracy {acc}");
        assert_eq!(logs.len(), 10);

        // Centralized oracle on the same data: plain Adam training must reach
        // 0.99, establishing that the task itself is easy.
        let enc_train = encode(&train, &gm).unwrap();
        let enc_test = encode(&test, &gm).unwrap();
        let mut model = nn::init_mlp(&[2, 64, 64, 2], 5);
        let mut adam = nn::Adam::new(&model, 1e-3, 0.9, 0.999);
        let onehot = nn::one_hot(&enc_train.labels, 2);
        for _ in 0..150 {
            let (_, grads) = nn::xent_loss_grads(&model, &enc_train.features, &onehot);
            adam.step(&mut model, &grads);
        }
        let oracle = crate::eval::accuracy(&model, &enc_test).unwrap();
        assert!(oracle >= 0.99, "centralized oracle accuracy {oracle}");
    }

    #[test]
    fn zero_rounds_returns_untrained_net() {
        // labels independent of features so an untrained net scores near
        // chance rather than accidentally aligning with blob geometry
        let mut rng = seeding::rng_from(99, &[]);
        let mk = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let rows = (0..n)
                .map(|i| {
                    vec![
                        Value::Cont(rng.random_range(-3.0..3.0)),
                        Value::Cont(rng.random_range(-3.0..3.0)),
                        Value::Cat(if i % 2 == 0 { "pos".into() } else { "neg".into() }),
                    ]
                })
                .collect();
            Dataset::new(blob_schema(), rows).unwrap()
        };
        let train = mk(60, &mut rng);
        let test = mk(200, &mut rng);
        let parts = vec![NodePartition { node_id: 0, data: train.clone() }];
        let gm = gm_for(&parts);
        let ccfg = ClassifierConfig { rounds: 0, ..ClassifierConfig::default() };
        let (model, acc, logs) =
            train_federated_classifier(&[train], &gm, &ccfg, &test, 5).unwrap();
        assert!(logs.is_empty());
        // the returned weights are exactly the seeded initialization
        let expected = nn::init_mlp(
            &[2, 64, 64, 2],
            seeding::derive_seed(5, &[stage::CLS_INIT]),
        );
        assert_eq!(model, expected);
        assert!((0.35..=0.65).contains(&acc), "untrained accuracy {acc}");
    }

    #[test]
    fn replicated_nodes_match_single_node_trajectory() {
        let train = blob_dataset(60, 6);
        let test = blob_dataset(30, 7);
        let parts = vec![NodePartition { node_id: 0, data: train.clone() }];
        let gm = gm_for(&parts);
        let ccfg = ClassifierConfig { rounds: 3, ..ClassifierConfig::default() };
        let (w1, a1, _) =
            train_federated_classifier(&[train.clone()], &gm, &ccfg, &test, 11).unwrap();
        let (w2, a2, _) =
            train_federated_classifier(&[train.clone(), train], &gm, &ccfg, &test, 11).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(a1, a2);
    }

    #[test]
    fn classifier_is_deterministic() {
        let train = blob_dataset(40, 8);
        let test = blob_dataset(20, 9);
        let parts = dirichlet_partition(&train, 3, 1.0, 21).unwrap();
        let gm = gm_for(&parts);
        let node_data: Vec<Dataset> = parts.iter().map(|p| p.data.clone()).collect();
        let ccfg = ClassifierConfig { rounds: 3, ..ClassifierConfig::default() };
        let (w1, a1, _) = train_federated_classifier(&node_data, &gm, &ccfg, &test, 31).unwrap();
        let (w2, a2, _) = train_federated_classifier(&node_data, &gm, &ccfg, &test, 31).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(a1, a2);
    }

    fn tiny_gan_cfg() -> GanConfig {
        GanConfig {
            noise_dim: 4,
            gen_hidden: vec![8],
            disc_hidden: vec![8],
            n_critic: 1,
            batch_size: 16,
            learning_rate: 1e-3,
            ..GanConfig::default()
        }
    }

    #[test]
    fn federated_gan_aggregation_event_count() {
        // 1 label on 1 node: R_init = 2 -> exactly 2 aggregation events, each
        // a single-client identity aggregate.
        let schema = blob_schema();
        let mut rows = Vec::new();
        for i in 0..12 {
            rows.push(vec![
                Value::Cont(i as f64 / 12.0),
                Value::Cont(0.5),
                Value::Cat("only".into()),
            ]);
        }
        let parts = vec![NodePartition {
            node_id: 0,
            data: Dataset::new(schema, rows).unwrap(),
        }];
        let gm = gm_for(&parts);
        let sched = GanScheduleConfig { r_init: 2, e_init: 1, ..GanScheduleConfig::default() };
        let (bank, logs) = train_federated_gan(&parts, &gm, &sched, &tiny_gan_cfg(), 3).unwrap();
        assert_eq!(logs.len(), 2);
        assert!(bank.generators.contains_key("only"));
        assert!(logs.iter().all(|l| l.participants == vec![0]));
    }

    #[test]
    fn federated_gan_group_ladder_event_count() {
        // groups of sizes (2, 1) with R_init = 3, alpha_R = 0.5: group 0 runs
        // 3 rounds of 2-client aggregation, group 1 runs 2 rounds of 1-client
        // aggregation, 5 aggregations in total.
        let schema = blob_schema();
        let mk_rows = |n: usize| -> Dataset {
            let rows = (0..n)
                .map(|i| {
                    vec![
                        Value::Cont(i as f64 / n as f64),
                        Value::Cont(0.25),
                        Value::Cat("only".into()),
                    ]
                })
                .collect();
            Dataset::new(schema.clone(), rows).unwrap()
        };
        let parts = vec![
            NodePartition { node_id: 0, data: mk_rows(400) },
            NodePartition { node_id: 1, data: mk_rows(380) },
            NodePartition { node_id: 2, data: mk_rows(6) },
        ];
        let gm = gm_for(&parts);
        let sched = GanScheduleConfig { r_init: 3, e_init: 1, alpha_r: 0.5, ..GanScheduleConfig::default() };
        let (_, logs) = train_federated_gan(&parts, &gm, &sched, &tiny_gan_cfg(), 4).unwrap();
        assert_eq!(logs.len(), 5);
        let group0: Vec<_> = logs.iter().filter(|l| l.group_index == 0).collect();
        let group1: Vec<_> = logs.iter().filter(|l| l.group_index == 1).collect();
        assert_eq!(group0.len(), 3);
        assert_eq!(group1.len(), 2);
        assert!(group0.iter().all(|l| l.participants == vec![0, 1]));
        assert!(group1.iter().all(|l| l.participants == vec![2]));
    }

    #[test]
    fn bank_keys_equal_present_labels() {
        let train = blob_dataset(30, 10);
        let parts = dirichlet_partition(&train, 2, 1.0, 5).unwrap();
        let gm = gm_for(&parts);
        let sched = GanScheduleConfig { r_init: 1, e_init: 1, ..GanScheduleConfig::default() };
        let (bank, _) = train_federated_gan(&parts, &gm, &sched, &tiny_gan_cfg(), 6).unwrap();
        let keys: Vec<&String> = bank.generators.keys().collect();
        assert_eq!(keys, ["neg", "pos"]);
    }

    #[test]
    fn fedgan_round_count_and_decoding() {
        let train = blob_dataset(25, 11);
        let parts = dirichlet_partition(&train, 2, 1.0, 7).unwrap();
        let gm = gm_for(&parts);
        let (model, logs) =
            train_fedgan_baseline(&parts, &gm, 5, 1, &tiny_gan_cfg(), 8).unwrap();
        assert_eq!(logs.len(), 5);
        let rows = model.sample_rows("pos", 9, &gm, 3).unwrap();
        assert_eq!(rows.len(), 9);
        for i in 0..rows.len() {
            assert_eq!(rows.label_of(i), "pos");
        }
        // decoded values obey the schema and global ranges
        let (lo, hi) = gm.range("x0").unwrap();
        for row in rows.rows() {
            let v = row[0].as_cont().unwrap();
            assert!(v >= lo && v <= hi);
        }
    }

    #[test]
    fn bank_save_load_round_trip() {
        let train = blob_dataset(20, 12);
        let parts = vec![NodePartition { node_id: 0, data: train }];
        let gm = gm_for(&parts);
        let sched = GanScheduleConfig { r_init: 1, e_init: 1, ..GanScheduleConfig::default() };
        let (bank, _) = train_federated_gan(&parts, &gm, &sched, &tiny_gan_cfg(), 9).unwrap();

        let dir = tempfile::tempdir().unwrap();
        bank.save_dir(dir.path()).unwrap();
        match load_sampler(dir.path()).unwrap() {
            SavedSampler::Bank(loaded) => assert_eq!(loaded, bank),
            SavedSampler::Joint(_) => panic!("expected per-label bank"),
        }
    }

    #[test]
    fn sample_matching_mirrors_class_counts() {
        let train = blob_dataset(15, 13);
        let parts = vec![NodePartition { node_id: 0, data: train.clone() }];
        let gm = gm_for(&parts);
        let sched = GanScheduleConfig { r_init: 1, e_init: 1, ..GanScheduleConfig::default() };
        let (bank, _) = train_federated_gan(&parts, &gm, &sched, &tiny_gan_cfg(), 14).unwrap();
        let synth = sample_matching(&bank, &train, &gm, 15).unwrap();
        assert_eq!(synth.class_counts(), train.class_counts());
    }
}
