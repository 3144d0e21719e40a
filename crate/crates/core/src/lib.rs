//! Federated learning on incomplete tabular data.
//!
//! The library emulates a federation of edge nodes on one machine:
//!
//! 1. [`tabular`] loads a CSV dataset, holds out a stratified test split, and
//!    partitions the training rows across nodes with Dirichlet label skew.
//! 2. [`metadata`] runs the federated encoding round — nodes share category
//!    vocabularies, continuous ranges, and class distributions; everyone then
//!    encodes rows into identically shaped matrices.
//! 3. [`grouping`] clusters nodes per class label by data volume (1-D DBSCAN)
//!    and decays round/epoch budgets per group.
//! 4. [`gan`] trains per-label WGAN-GP generators; [`federation`] coordinates
//!    the federated rounds (FedAvg aggregation) for GANs and the classifier.
//! 5. [`augment`] adds synthetic rows step by step, retraining the federated
//!    classifier until accuracy stops improving.
//! 6. [`eval`] scores models and validates synthetic data quality by training
//!    a random forest on synthetic rows and testing it on real ones.
//!
//! Every stage is a pure function of its inputs and a seed; whole experiment
//! runs are reproducible bit for bit (wall-clock timings aside).

pub mod augment;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod federation;
pub mod forest;
pub mod gan;
pub mod grouping;
pub mod metadata;
pub mod nn;
pub mod seeding;
pub mod tabular;
pub mod transport;
pub mod weights;

pub use augment::{
    compute_step_quota, run_fligan, run_with_classifier, AugmentOptions, AugmentOutcome,
    AugmentationHistory, StepQuota, StepRecord,
};
pub use error::{Error, Result};
pub use eval::{accuracy, ml_efficacy, timed, EfficacyReport, MetricsRecord};
pub use federation::{
    fedavg_aggregate, load_sampler, sample_matching, train_fedgan_baseline,
    train_federated_classifier, train_federated_gan, ClassifierConfig, FedGanModel, GanRoundLog,
    GanScheduleConfig, GeneratorBank, RoundLog, SavedSampler, SyntheticSampler,
};
pub use forest::{ForestConfig, RandomForest};
pub use gan::{
    critic_forward, critic_input_gradient, generator_forward, gradient_penalty, init_gan, sample,
    train_local, GanConfig, GanPair, TrainStats,
};
pub use grouping::{dbscan_1d, group_nodes, schedule, NodeGroup, TrainingSchedule};
pub use metadata::{
    collect_local_metadata, decode, encode, merge_metadata, EncodedMatrix, EncodingLayout,
    GlobalMetadata, LocalMetadata,
};
pub use tabular::{
    class_distribution, dirichlet_partition, load_dataset, split_train_test, ClassDistribution,
    Dataset, LoadReport, NodePartition, TableSchema, Value,
};
pub use weights::{load_weights, save_weights, NamedTensor, WeightSet};
