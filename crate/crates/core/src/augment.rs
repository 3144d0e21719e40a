//! Step-by-step synthetic data addition: each step tops up under-represented
//! classes on every node toward that node's largest class, retrains the
//! federated classifier from scratch, and stops once accuracy has not
//! improved for `delta` consecutive steps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{
    train_federated_classifier, ClassifierConfig, RoundLog, SyntheticSampler,
};
use crate::metadata::GlobalMetadata;
use crate::seeding::{self, stage};
use crate::tabular::{ClassDistribution, Dataset, NodePartition};
use crate::weights::WeightSet;

/// Rows to generate per (node, class label) in one step.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StepQuota {
    pub entries: BTreeMap<(usize, String), usize>,
    /// `ceil(step_fraction * N_max)`.
    pub step_size: usize,
}

impl StepQuota {
    pub fn total(&self) -> usize {
        self.entries.values().sum()
    }
}

/// One augmentation step as recorded in the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub synthetic_rows_total: usize,
    pub accuracy: f64,
    /// Largest per-node class-count spread (max - min over the federation's
    /// class labels) after this step's additions.
    pub max_node_spread: usize,
}

/// Full step history plus the best step found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationHistory {
    pub steps: Vec<StepRecord>,
    pub best_step: usize,
    pub best_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentOptions {
    /// Stop after this many consecutive steps without an accuracy improvement.
    pub delta: usize,
    /// Fraction of the largest (node, class) count added per step.
    pub step_fraction: f64,
    /// Hard cap on augmentation steps (the baseline step 0 not included).
    pub max_steps: usize,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            delta: 2,
            step_fraction: 0.01,
            max_steps: 30,
        }
    }
}

impl AugmentOptions {
    fn validate(&self) -> Result<()> {
        if self.delta == 0 || self.max_steps == 0 {
            return Err(Error::Config("delta and max_steps must be positive".into()));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "step_fraction must lie in (0, 1], got {}",
                self.step_fraction
            )));
        }
        Ok(())
    }
}

/// Everything [`run_fligan`] produces: the best model, the step history, and
/// the classifier round logs of every step (step 0 first).
#[derive(Debug)]
pub struct AugmentOutcome {
    pub model: WeightSet,
    pub history: AugmentationHistory,
    pub step_round_logs: Vec<Vec<RoundLog>>,
}

/// Compute per-(node, class) generation quotas from the current (real plus
/// already-added synthetic) class distributions. The step size is
/// `ceil(step_fraction * N_max)` where `N_max` is the largest local count of
/// any (node, class) pair; each node fills classes below its own largest
/// class — including classes it has never seen — never past that target.
pub fn compute_step_quota(
    dists: &[ClassDistribution],
    step_fraction: f64,
) -> Result<StepQuota> {
    if !(step_fraction > 0.0 && step_fraction <= 1.0) {
        return Err(Error::Contract(format!(
            "step_fraction must lie in (0, 1], got {step_fraction}"
        )));
    }
    let n_max = dists
        .iter()
        .flat_map(|d| d.counts.values())
        .copied()
        .max()
        .unwrap_or(0);
    if n_max == 0 {
        return Err(Error::Contract(
            "quota computation needs at least one non-zero class count".into(),
        ));
    }
    let step_size = (step_fraction * n_max as f64).ceil() as usize;

    // Classes known anywhere in the federation; nodes missing one entirely
    // still receive quota for it.
    let all_labels: std::collections::BTreeSet<&String> =
        dists.iter().flat_map(|d| d.counts.keys()).collect();

    let mut entries = BTreeMap::new();
    for dist in dists {
        let node_max = dist.counts.values().copied().max().unwrap_or(0);
        if node_max == 0 {
            continue; // an empty node has nothing to balance toward
        }
        for &label in &all_labels {
            let count = dist.count(label);
            if count < node_max {
                entries.insert(
                    (dist.node_id, label.clone()),
                    step_size.min(node_max - count),
                );
            }
        }
    }
    Ok(StepQuota { entries, step_size })
}

fn spread_of(dist: &ClassDistribution, all_labels: &[String]) -> usize {
    let counts: Vec<usize> = all_labels.iter().map(|l| dist.count(l)).collect();
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    max - min
}

/// The augmentation loop with the classifier trainer injected; `run_fligan`
/// passes the real federated trainer, tests can script accuracies.
pub fn run_with_classifier<F>(
    parts: &[NodePartition],
    gm: &GlobalMetadata,
    sampler: &dyn SyntheticSampler,
    opts: &AugmentOptions,
    seed: u64,
    mut train: F,
) -> Result<AugmentOutcome>
where
    F: FnMut(&[Dataset], u64) -> Result<(WeightSet, f64, Vec<RoundLog>)>,
{
    opts.validate()?;
    let labels = gm.class_labels().to_vec();
    let mut node_data: Vec<Dataset> = parts.iter().map(|p| p.data.clone()).collect();

    let max_spread = |data: &[Dataset]| -> usize {
        data.iter()
            .enumerate()
            .map(|(node_id, d)| {
                spread_of(
                    &ClassDistribution {
                        node_id,
                        counts: d.class_counts(),
                    },
                    &labels,
                )
            })
            .max()
            .unwrap_or(0)
    };

    // Step 0: the no-synthetic baseline.
    let (model0, acc0, logs0) = train(&node_data, seeding::derive_seed(seed, &[stage::AUG_TRAIN, 0]))?;
    let mut history = AugmentationHistory {
        steps: vec![StepRecord {
            step: 0,
            synthetic_rows_total: 0,
            accuracy: acc0,
            max_node_spread: max_spread(&node_data),
        }],
        best_step: 0,
        best_accuracy: acc0,
    };
    let mut step_round_logs = vec![logs0];
    let mut best_model = model0;
    let mut synthetic_total = 0usize;
    let mut stale_steps = 0usize;

    for step in 1..=opts.max_steps {
        let dists: Vec<ClassDistribution> = node_data
            .iter()
            .enumerate()
            .map(|(node_id, d)| ClassDistribution {
                node_id,
                counts: d.class_counts(),
            })
            .collect();
        let quota = compute_step_quota(&dists, opts.step_fraction)?;

        let mut added = 0usize;
        for ((node, label), &n) in &quota.entries {
            if n == 0 {
                continue;
            }
            if !sampler.has_label(label) {
                log::warn!("no generator for label '{label}'; its quota of {n} rows is skipped");
                continue;
            }
            let rows = sampler.sample_rows(
                label,
                n,
                gm,
                seeding::derive_seed(
                    seed,
                    &[stage::AUG_SAMPLE, step as u64, *node as u64, seeding::hash_label(label)],
                ),
            )?;
            node_data[*node].extend_rows(&rows)?;
            added += n;
        }
        synthetic_total += added;

        let (model, acc, logs) =
            train(&node_data, seeding::derive_seed(seed, &[stage::AUG_TRAIN, step as u64]))?;
        history.steps.push(StepRecord {
            step,
            synthetic_rows_total: synthetic_total,
            accuracy: acc,
            max_node_spread: max_spread(&node_data),
        });
        step_round_logs.push(logs);

        if acc > history.best_accuracy {
            history.best_accuracy = acc;
            history.best_step = step;
            best_model = model;
            stale_steps = 0;
        } else {
            stale_steps += 1;
        }

        if added == 0 {
            // Every node is already balanced (or lacks generators); further
            // steps would retrain on identical data forever.
            log::info!("step {step} added no rows; stopping");
            break;
        }
        if stale_steps >= opts.delta {
            break;
        }
    }

    Ok(AugmentOutcome {
        model: best_model,
        history,
        step_round_logs,
    })
}

/// Step-by-step augmentation with the real federated classifier: returns the
/// weights of the best step, the history, and per-step round logs.
pub fn run_fligan(
    parts: &[NodePartition],
    gm: &GlobalMetadata,
    sampler: &dyn SyntheticSampler,
    ccfg: &ClassifierConfig,
    opts: &AugmentOptions,
    test: &Dataset,
    seed: u64,
) -> Result<AugmentOutcome> {
    run_with_classifier(parts, gm, sampler, opts, seed, |node_data, step_seed| {
        train_federated_classifier(node_data, gm, ccfg, test, step_seed)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::{collect_local_metadata, merge_metadata};
    use crate::tabular::{TableSchema, Value};

    fn dist(node_id: usize, counts: &[(&str, usize)]) -> ClassDistribution {
        ClassDistribution {
            node_id,
            counts: counts.iter().map(|&(l, c)| (l.to_string(), c)).collect(),
        }
    }

    #[test]
    fn balanced_node_gets_zero_quota() {
        let dists = vec![dist(0, &[("a", 100), ("b", 100)])];
        let q = compute_step_quota(&dists, 0.01).unwrap();
        assert!(q.entries.is_empty());
        assert_eq!(q.step_size, 1);
    }

    #[test]
    fn quota_rule_hand_evaluation() {
        // N_max = 100 so step_size = ceil(0.01 * 100) = 1; node 0 lacks b,
        // node 1 lacks a.
        let dists = vec![dist(0, &[("a", 100), ("b", 0)]), dist(1, &[("b", 50)])];
        let q = compute_step_quota(&dists, 0.01).unwrap();
        assert_eq!(q.step_size, 1);
        assert_eq!(q.entries.len(), 2);
        assert_eq!(q.entries[&(0, "b".to_string())], 1);
        assert_eq!(q.entries[&(1, "a".to_string())], 1);
    }

    #[test]
    fn quota_is_clamped_to_the_deficit() {
        let dists = vec![dist(0, &[("a", 40), ("b", 38)])];
        let q = compute_step_quota(&dists, 0.5).unwrap();
        // step_size = 20 but the deficit is only 2
        assert_eq!(q.step_size, 20);
        assert_eq!(q.entries[&(0, "b".to_string())], 2);
    }

    #[test]
    fn classes_never_seen_by_a_node_receive_quota() {
        // node 0 has never seen b or c, which exist elsewhere in the federation
        let dists = vec![dist(0, &[("a", 10)]), dist(1, &[("b", 4), ("c", 4)])];
        let q = compute_step_quota(&dists, 0.2).unwrap();
        assert_eq!(q.entries[&(0, "b".to_string())], 2);
        assert_eq!(q.entries[&(0, "c".to_string())], 2);
    }

    fn toy_schema() -> TableSchema {
        TableSchema::new(vec![], vec!["x".into()], "y").unwrap()
    }

    fn toy_rows(label: &str, n: usize) -> Vec<Vec<Value>> {
        (0..n)
            .map(|i| vec![Value::Cont(i as f64), Value::Cat(label.into())])
            .collect()
    }

    fn toy_world(counts: &[&[(&str, usize)]]) -> (Vec<NodePartition>, GlobalMetadata) {
        let schema = toy_schema();
        let parts: Vec<NodePartition> = counts
            .iter()
            .enumerate()
            .map(|(node_id, spec)| {
                let mut rows = Vec::new();
                for &(label, n) in spec.iter() {
                    rows.extend(toy_rows(label, n));
                }
                NodePartition {
                    node_id,
                    data: crate::tabular::Dataset::new(schema.clone(), rows).unwrap(),
                }
            })
            .collect();
        let locals: Vec<_> = parts
            .iter()
            .map(|p| collect_local_metadata(p, &schema))
            .collect();
        let gm = merge_metadata(&schema, &locals).unwrap();
        (parts, gm)
    }

    /// Sampler that fabricates rows directly; good enough for loop-logic
    /// tests.
    struct StubSampler;

    impl SyntheticSampler for StubSampler {
        fn has_label(&self, _label: &str) -> bool {
            true
        }

        fn sample_rows(
            &self,
            label: &str,
            n: usize,
            _gm: &GlobalMetadata,
            _seed: u64,
        ) -> Result<Dataset> {
            crate::tabular::Dataset::new(toy_schema(), toy_rows(label, n))
        }
    }

    fn scripted_trainer(
        accuracies: &[f64],
    ) -> impl FnMut(&[Dataset], u64) -> Result<(WeightSet, f64, Vec<RoundLog>)> + '_ {
        let mut calls = 0usize;
        move |_data, seed| {
            let acc = accuracies[calls.min(accuracies.len() - 1)];
            calls += 1;
            let mut ws = WeightSet::default();
            // encode the call index so the returned "model" identifies its step
            ws.push("tag", ndarray::Array2::from_elem((1, 1), (calls - 1) as f64));
            let _ = seed;
            Ok((ws, acc, Vec::new()))
        }
    }

    #[test]
    fn patience_stops_after_delta_stale_steps() {
        let (parts, gm) = toy_world(&[&[("a", 50), ("b", 10)]]);
        let opts = AugmentOptions { delta: 2, step_fraction: 0.01, max_steps: 30 };
        let out = run_with_classifier(
            &parts,
            &gm,
            &StubSampler,
            &opts,
            0,
            scripted_trainer(&[0.70, 0.75, 0.74, 0.73]),
        )
        .unwrap();
        let steps: Vec<usize> = out.history.steps.iter().map(|s| s.step).collect();
        assert_eq!(steps, [0, 1, 2, 3]);
        assert_eq!(out.history.best_step, 1);
        assert!((out.history.best_accuracy - 0.75).abs() < 1e-12);
        // the returned model is the one trained at the best step
        assert_eq!(out.model.get("tag").unwrap()[[0, 0]], 1.0);
    }

    #[test]
    fn already_balanced_world_stops_after_one_step() {
        let (parts, gm) = toy_world(&[&[("a", 20), ("b", 20)]]);
        let opts = AugmentOptions::default();
        let out = run_with_classifier(
            &parts,
            &gm,
            &StubSampler,
            &opts,
            0,
            scripted_trainer(&[0.8, 0.8]),
        )
        .unwrap();
        let steps: Vec<usize> = out.history.steps.iter().map(|s| s.step).collect();
        assert_eq!(steps, [0, 1]);
        assert_eq!(out.history.steps[1].synthetic_rows_total, 0);
    }

    #[test]
    fn monotone_improvement_runs_to_the_cap() {
        // deficits large enough that quotas stay positive past the cap
        let (parts, gm) = toy_world(&[&[("a", 100)], &[("b", 50)]]);
        let opts = AugmentOptions { delta: 2, step_fraction: 0.01, max_steps: 5 };
        let rising: Vec<f64> = (0..=5).map(|i| 0.5 + 0.05 * i as f64).collect();
        let out = run_with_classifier(
            &parts,
            &gm,
            &StubSampler,
            &opts,
            0,
            scripted_trainer(&rising),
        )
        .unwrap();
        assert_eq!(out.history.steps.len(), 6); // baseline + max_steps
        assert_eq!(out.history.best_step, 5);
    }

    #[test]
    fn synthetic_counts_grow_and_spread_shrinks() {
        let (parts, gm) = toy_world(&[&[("a", 60), ("b", 5)], &[("b", 40)]]);
        let opts = AugmentOptions { delta: 2, step_fraction: 0.05, max_steps: 30 };
        let out = run_with_classifier(
            &parts,
            &gm,
            &StubSampler,
            &opts,
            0,
            // strictly rising so only the cap or full balance stops the loop
            scripted_trainer(&(0..40).map(|i| i as f64 / 40.0).collect::<Vec<_>>()),
        )
        .unwrap();
        for pair in out.history.steps.windows(2) {
            assert!(pair[1].synthetic_rows_total >= pair[0].synthetic_rows_total);
            assert!(pair[1].max_node_spread <= pair[0].max_node_spread);
        }
        // loop ran until both nodes balanced, then stopped on the zero-quota rule
        assert_eq!(out.history.steps.last().unwrap().max_node_spread, 0);
    }

    #[test]
    fn real_trainer_end_to_end_smoke() {
        let (parts, gm) = toy_world(&[&[("a", 30), ("b", 6)], &[("b", 25), ("a", 3)]]);
        let test_data = {
            let mut rows = toy_rows("a", 10);
            rows.extend(toy_rows("b", 10));
            crate::tabular::Dataset::new(toy_schema(), rows).unwrap()
        };
        let ccfg = ClassifierConfig {
            rounds: 1,
            local_epochs: 1,
            ..ClassifierConfig::default()
        };
        let opts = AugmentOptions { delta: 1, step_fraction: 0.1, max_steps: 2 };
        let out = run_fligan(&parts, &gm, &StubSampler, &ccfg, &opts, &test_data, 9).unwrap();
        assert!(!out.history.steps.is_empty());
        assert_eq!(out.step_round_logs.len(), out.history.steps.len());
        assert!(out.history.best_accuracy >= 0.0 && out.history.best_accuracy <= 1.0);
    }
}
