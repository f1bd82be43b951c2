//! Learning from label proportions (LLP) with consistency regularization,
//! at desk scale.
//!
//! The crate trains an instance-level MLP classifier from bags of unlabeled
//! instances annotated only with class-proportion vectors. The objective
//! combines the bag-level proportion cross-entropy with an instance-level
//! consistency term — additive Gaussian noise (Pi-model) or a virtual
//! adversarial perturbation (VAT) — weighted by an exponential ramp-up
//! schedule. Bags come from uniform random partitions or from k-means
//! clusters over PCA-projected features, and models are compared with
//! bag-level validation metrics (hard/soft L1 and KL) that need no instance
//! labels.
//!
//! Everything is deterministic given its seeds; gradients are exact
//! reverse-mode and are cross-checked against central finite differences in
//! the test suite. The `llp` binary exposes the experiment pipeline
//! (`generate-bags`, `train`, `toy`, `correlate`).

pub mod bagging;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kmeans;
pub mod losses;
pub mod metrics;
pub mod mlp;
pub mod rng;
pub mod tensor;
pub mod training;

pub use bagging::{
    kmeans_bags, proportion_label, split_bags, subsample_bag, uniform_bags, Bag, BagCollection,
};
pub use data::{gaussian_blobs, pca_project, standardize, two_moons, LabeledDataset};
pub use error::{Error, Result};
pub use experiment::{
    config_hash, correlate, default_correlate_config, run_experiment, CorrelateConfig,
    ExperimentConfig,
};
pub use losses::{
    combined_loss, pi_consistency, proportion_loss, rampup_weight, vat_consistency,
    vat_perturbation, ConsistencyKind, ConsistencySpec,
};
pub use metrics::{
    bag_error, estimate_proportion, instance_accuracy, pearson, validation_error, MetricKind,
    ValidationErrors,
};
pub use mlp::{backprop, finite_diff_grad, mlp_forward, GradBundle, MlpParams};
pub use tensor::Tensor;
pub use training::{
    adam_step, final_accuracy, lr_at, train, AdamHyper, AdamState, EpochRecord, TrainConfig,
};
