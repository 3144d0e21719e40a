//! Model scoring, the synthetic-data efficacy check (train a forest on
//! synthetic rows, test it on real ones, compare against the real-trained
//! twin), and wall-clock capture.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{ForestConfig, RandomForest};
use crate::metadata::{encode, EncodedMatrix, GlobalMetadata};
use crate::nn::{self, Head};
use crate::seeding::{self, stage};
use crate::tabular::Dataset;
use crate::weights::WeightSet;

/// Real-vs-synthetic training comparison, both models scored on the real
/// test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyReport {
    pub real_data_accuracy: f64,
    pub synthetic_data_accuracy: f64,
    /// `real_data_accuracy - synthetic_data_accuracy`.
    pub gap: f64,
    pub classifier_descriptor: String,
    pub dataset_descriptor: String,
    /// Set when the synthetic set covers fewer than two classes, making the
    /// synthetic-trained model constant.
    pub degenerate_synthetic: bool,
}

/// One experiment cell: strategy x alpha x seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub strategy: String,
    pub alpha: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub wall_clock_seconds: f64,
    pub synthetic_rows_added: usize,
    pub steps_taken: usize,
}

/// Fraction of test rows whose argmax logit matches the true label; argmax
/// ties go to the lowest class index.
pub fn accuracy(model: &WeightSet, test: &EncodedMatrix) -> Result<f64> {
    if test.n_rows() == 0 {
        return Err(Error::Contract("accuracy needs a non-empty test set".into()));
    }
    if nn::input_width(model) != test.layout.width() {
        return Err(Error::Contract(format!(
            "model input width {} does not match encoded width {}",
            nn::input_width(model),
            test.layout.width()
        )));
    }
    let logits = nn::forward_array(model, &test.features, Head::Linear);
    let mut hits = 0usize;
    for (i, &truth) in test.labels.iter().enumerate() {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for j in 0..logits.ncols() {
            let v = logits[[i, j]];
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        if best == truth {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.n_rows() as f64)
}

/// Train the same forest once on real rows and once on synthetic rows
/// (identical hyperparameters and seed), evaluate both on the real test
/// split, and report the accuracy gap.
pub fn ml_efficacy(
    real_train: &Dataset,
    real_test: &Dataset,
    synth_train: &Dataset,
    gm: &GlobalMetadata,
    seed: u64,
) -> Result<EfficacyReport> {
    if synth_train.is_empty() {
        return Err(Error::Contract("efficacy needs a non-empty synthetic set".into()));
    }
    if real_train.schema() != synth_train.schema() || real_train.schema() != real_test.schema() {
        return Err(Error::Schema("efficacy datasets must share one schema".into()));
    }

    let enc_real = encode(real_train, gm)?;
    let enc_synth = encode(synth_train, gm)?;
    let enc_test = encode(real_test, gm)?;
    let n_classes = gm.class_labels().len();

    let cfg = ForestConfig::default();
    let forest_seed = seeding::derive_seed(seed, &[stage::FOREST]);
    let real_forest = RandomForest::fit(&enc_real.features, &enc_real.labels, n_classes, &cfg, forest_seed)?;
    let synth_forest =
        RandomForest::fit(&enc_synth.features, &enc_synth.labels, n_classes, &cfg, forest_seed)?;

    let real_acc = real_forest.accuracy(&enc_test.features, &enc_test.labels);
    let synth_acc = synth_forest.accuracy(&enc_test.features, &enc_test.labels);

    let synth_classes = synth_train.class_counts().len();
    if synth_classes < 2 {
        log::warn!("synthetic training set covers {synth_classes} class(es); the synthetic-trained model is constant");
    }

    Ok(EfficacyReport {
        real_data_accuracy: real_acc,
        synthetic_data_accuracy: synth_acc,
        gap: real_acc - synth_acc,
        classifier_descriptor: format!(
            "random_forest(trees={}, depth=unlimited, bootstrap, mtry=sqrt(d), min_leaf={})",
            cfg.n_trees, cfg.min_samples_leaf
        ),
        dataset_descriptor: format!(
            "real_train={} synth_train={} real_test={} cols={}",
            real_train.len(),
            synth_train.len(),
            real_test.len(),
            real_train.schema().column_names().len()
        ),
        degenerate_synthetic: synth_classes < 2,
    })
}

/// Run `work` and return its result with the elapsed wall-clock seconds
/// (monotonic).
pub fn timed<T>(work: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let out = work();
    (out, t0.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metadata::{collect_local_metadata, merge_metadata};
    use crate::tabular::{NodePartition, TableSchema, Value};
    use ndarray::Array2;
    use rand::Rng;

    fn schema() -> TableSchema {
        TableSchema::new(vec![], vec!["x0".into(), "x1".into()], "y").unwrap()
    }

    fn blob_dataset(n_per_class: usize, seed: u64) -> Dataset {
        let mut rng = seeding::rng_from(seed, &[]);
        let mut rows = Vec::new();
        for _ in 0..n_per_class {
            for (center, label) in [(-2.0, "neg"), (2.0, "pos")] {
                rows.push(vec![
                    Value::Cont(center + rng.random_range(-1.0..1.0)),
                    Value::Cont(center + rng.random_range(-1.0..1.0)),
                    Value::Cat(label.into()),
                ]);
            }
        }
        Dataset::new(schema(), rows).unwrap()
    }

    fn gm_for(data: &Dataset) -> GlobalMetadata {
        let part = NodePartition { node_id: 0, data: data.clone() };
        let locals = vec![collect_local_metadata(&part, &schema())];
        merge_metadata(&schema(), &locals).unwrap()
    }

    /// Hand-built weights whose logits are controlled exactly.
    fn linear_model(w: Vec<f64>, classes: usize, width: usize) -> WeightSet {
        let mut ws = WeightSet::default();
        ws.push(
            "layer0.weight",
            Array2::from_shape_vec((width, classes), w).unwrap(),
        );
        ws.push("layer0.bias", Array2::zeros((1, classes)));
        ws
    }

    #[test]
    fn constant_predictor_scores_the_prevalence() {
        let data = blob_dataset(25, 1);
        let gm = gm_for(&data);
        let enc = encode(&data, &gm).unwrap();
        // zero weights give constant tied logits; the argmax tie rule picks
        // class 0 ("neg") for every row
        let model = linear_model(vec![0.0; 4], 2, 2);
        let acc = accuracy(&model, &enc).unwrap();
        assert!((acc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_oracle_scores_one() {
        let data = blob_dataset(25, 2);
        let gm = gm_for(&data);
        let enc = encode(&data, &gm).unwrap();
        // class "pos" sits at +2: logit_pos = x0 + x1, logit_neg = -(x0 + x1)
        let model = linear_model(vec![-1.0, 1.0, -1.0, 1.0], 2, 2);
        assert_eq!(accuracy(&model, &enc).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let data = blob_dataset(20, 3);
        let gm = gm_for(&data);
        let enc = encode(&data, &gm).unwrap();
        let model = linear_model(vec![-1.0, 1.0, -1.0, 1.0], 2, 2);
        let base = accuracy(&model, &enc).unwrap();
        let perm: Vec<usize> = (0..enc.n_rows()).rev().collect();
        let shuffled = enc.select_rows(&perm);
        assert_eq!(base, accuracy(&model, &shuffled).unwrap());
    }

    #[test]
    fn empty_test_set_is_a_contract_error() {
        let data = blob_dataset(5, 4);
        let gm = gm_for(&data);
        let enc = encode(&data, &gm).unwrap().select_rows(&[]);
        let model = linear_model(vec![0.0; 4], 2, 2);
        assert!(matches!(accuracy(&model, &enc), Err(Error::Contract(_))));
    }

    #[test]
    fn identical_training_sets_have_zero_gap() {
        let train = blob_dataset(40, 5);
        let test = blob_dataset(20, 6);
        let gm = gm_for(&train);
        let report = ml_efficacy(&train, &test, &train, &gm, 9).unwrap();
        assert_eq!(report.gap, 0.0);
        assert!(!report.degenerate_synthetic);
    }

    #[test]
    fn resampled_synthetic_keeps_gap_small() {
        // "synthetic" drawn from the same distribution: the upper-quality
        // reference for generator output
        let train = blob_dataset(100, 7);
        let synth = blob_dataset(100, 8);
        let test = blob_dataset(50, 9);
        let gm = gm_for(&train);
        let report = ml_efficacy(&train, &test, &synth, &gm, 10).unwrap();
        assert!(report.gap.abs() <= 0.10, "gap {}", report.gap);
    }

    #[test]
    fn single_class_synthetic_is_flagged_and_scores_prevalence() {
        let train = blob_dataset(30, 11);
        let test = blob_dataset(25, 12);
        let gm = gm_for(&train);
        let only_pos = {
            let rows: Vec<_> = train
                .rows()
                .iter()
                .filter(|r| r[2] == Value::Cat("pos".into()))
                .cloned()
                .collect();
            Dataset::new(schema(), rows).unwrap()
        };
        let report = ml_efficacy(&train, &test, &only_pos, &gm, 13).unwrap();
        assert!(report.degenerate_synthetic);
        assert!((report.synthetic_data_accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gap_is_antisymmetric_under_swapping() {
        let a = blob_dataset(40, 14);
        let b = blob_dataset(40, 15);
        let test = blob_dataset(20, 16);
        let gm = gm_for(&a);
        let ab = ml_efficacy(&a, &test, &b, &gm, 17).unwrap();
        let ba = ml_efficacy(&b, &test, &a, &gm, 17).unwrap();
        assert!((ab.gap + ba.gap).abs() < 1e-12);
    }

    #[test]
    fn timed_wraps_work() {
        let (value, secs) = timed(|| 21 * 2);
        assert_eq!(value, 42);
        assert!((0.0..0.1).contains(&secs));
    }

    #[test]
    fn nested_stage_timings_sum_below_total() {
        let ((_, inner_a), total) = timed(|| {
            let a = timed(|| std::hint::black_box((0..10_000).sum::<u64>()));
            a
        });
        assert!(inner_a <= total * 1.01);
    }
}
