//! Experiment plumbing shared by the CLI: declarative configs, the single-run
//! pipeline (dataset -> bags -> split -> train), the decision-surface grid
//! for the toy demo, and the correlation study over a config grid.

use crate::bagging::{
    split_bags, subsample_bag, uniform_bags, kmeans_bags_with_dim, BagCollection,
    DEFAULT_PCA_DIM, DEFAULT_SUBSAMPLE_THRESHOLD,
};
use crate::data::{gaussian_blobs, two_moons, LabeledDataset};
use crate::error::{Error, Result};
use crate::losses::ConsistencySpec;
use crate::metrics::{pearson, MetricKind, ValidationErrors};
use crate::mlp::{mlp_forward, MlpParams};
use crate::tensor::Tensor;
use crate::training::{final_accuracy, train, EpochRecord, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Where instances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    TwoMoons {
        n_per_class: usize,
        noise_std: f64,
        seed: u64,
    },
    GaussianBlobs {
        centers: Vec<Vec<f64>>,
        n_per_center: usize,
        std: f64,
        seed: u64,
    },
    /// CSV file in the dataset export format (`f0,...,f{D-1},label`).
    Csv { path: String },
}

impl DatasetSpec {
    pub fn build(&self) -> Result<LabeledDataset> {
        match self {
            DatasetSpec::TwoMoons {
                n_per_class,
                noise_std,
                seed,
            } => two_moons(*n_per_class, *noise_std, *seed),
            DatasetSpec::GaussianBlobs {
                centers,
                n_per_center,
                std,
                seed,
            } => gaussian_blobs(centers, *n_per_center, *std, *seed),
            DatasetSpec::Csv { path } => {
                LabeledDataset::from_csv(&std::fs::read_to_string(path)?)
            }
        }
    }

    /// Replaces any embedded generator seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            DatasetSpec::TwoMoons { seed: s, .. } => *s = seed,
            DatasetSpec::GaussianBlobs { seed: s, .. } => *s = seed,
            DatasetSpec::Csv { .. } => {}
        }
        out
    }
}

fn default_threshold() -> Option<usize> {
    Some(DEFAULT_SUBSAMPLE_THRESHOLD)
}

/// How bags are generated from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BaggingSpec {
    Uniform {
        bag_size: usize,
        seed: u64,
    },
    Kmeans {
        k: usize,
        seed: u64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default)]
        pca_dim: Option<usize>,
        /// Bags larger than this are subsampled, keeping the original
        /// proportion label.
        #[serde(default = "default_threshold")]
        subsample_threshold: Option<usize>,
    },
    /// Load a previously generated bag file.
    File { path: String },
}

fn default_max_iter() -> usize {
    100
}

impl BaggingSpec {
    pub fn build(&self, ds: &LabeledDataset) -> Result<BagCollection> {
        match self {
            BaggingSpec::Uniform { bag_size, seed } => uniform_bags(ds, *bag_size, *seed),
            BaggingSpec::Kmeans {
                k,
                seed,
                max_iter,
                pca_dim,
                subsample_threshold,
            } => {
                let dim = pca_dim.unwrap_or(DEFAULT_PCA_DIM).min(ds.dim());
                let mut coll = kmeans_bags_with_dim(ds, *k, *seed, *max_iter, dim)?;
                if let Some(threshold) = subsample_threshold {
                    for (i, bag) in coll.bags.iter_mut().enumerate() {
                        *bag = subsample_bag(
                            bag,
                            *threshold,
                            crate::rng::derive_seed(&[*seed, i as u64]),
                        )?;
                    }
                }
                Ok(coll)
            }
            BaggingSpec::File { path } => {
                let coll = BagCollection::from_json(&std::fs::read_to_string(path)?)?;
                coll.validate(ds.len())?;
                Ok(coll)
            }
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            BaggingSpec::Uniform { seed: s, .. } => *s = seed,
            BaggingSpec::Kmeans { seed: s, .. } => *s = seed,
            BaggingSpec::File { .. } => {}
        }
        out
    }
}

/// Train/validation bag split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// A complete, self-describing experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Held-out instances for accuracy reporting.
    #[serde(default)]
    pub test_dataset: Option<DatasetSpec>,
    pub bagging: BaggingSpec,
    /// When present, bags are split before training and validation errors are
    /// tracked on the held-out bags.
    #[serde(default)]
    pub split: Option<SplitSpec>,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Overrides every embedded seed with the given value.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.dataset = out.dataset.with_seed(seed);
        out.test_dataset = out.test_dataset.map(|t| t.with_seed(seed.wrapping_add(1)));
        out.bagging = out.bagging.with_seed(seed);
        if let Some(split) = &mut out.split {
            split.seed = seed;
        }
        out.train.seed = seed;
        out
    }
}

/// Hex prefix of the SHA-256 of the canonical JSON encoding; stamped into
/// every output artifact so results can be traced to their config.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let canonical = serde_json::to_string(config)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything a finished run exposes.
pub struct ExperimentResult {
    pub params: MlpParams,
    pub records: Vec<EpochRecord>,
    pub train_bags: BagCollection,
    pub val_bags: Option<BagCollection>,
    pub dataset: LabeledDataset,
    /// Mean test accuracy over the final window, when a test set was given.
    pub final_accuracy: Option<f64>,
    /// Best (lowest) hard-L1 validation error seen across epochs.
    pub best_val_hard_l1: Option<f64>,
    /// Validation errors of the final model.
    pub final_val_errors: Option<ValidationErrors>,
}

/// Runs one experiment end to end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let dataset = cfg.dataset.build()?;
    let test = cfg.test_dataset.as_ref().map(|t| t.build()).transpose()?;
    let all_bags = cfg.bagging.build(&dataset)?;

    let (train_bags, val_bags) = match &cfg.split {
        Some(split) => {
            let (t, v) = split_bags(&all_bags, split.train_fraction, split.seed)?;
            (t, Some(v))
        }
        None => (all_bags, None),
    };

    let (params, records) = train(
        &train_bags,
        val_bags.as_ref(),
        &dataset,
        test.as_ref(),
        &cfg.train,
    )?;

    let final_acc = if test.is_some() {
        Some(final_accuracy(&records, cfg.train.final_window)?)
    } else {
        None
    };
    let best_val = records
        .iter()
        .filter_map(|r| r.val_errors.map(|v| v.hard_l1))
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.min(v)))
        });
    let final_val_errors = records.last().and_then(|r| r.val_errors);

    Ok(ExperimentResult {
        params,
        records,
        train_bags,
        val_bags,
        dataset,
        final_accuracy: final_acc,
        best_val_hard_l1: best_val,
        final_val_errors,
    })
}

/// A dense decision-surface sample for 2-D datasets, covering the data
/// bounding box padded by 20% on each side. CSV columns:
/// `x0,x1,prob_class1_vanilla,prob_class1_cons`.
pub fn decision_grid_csv(
    vanilla: &MlpParams,
    consistency: &MlpParams,
    ds: &LabeledDataset,
    resolution: usize,
) -> Result<String> {
    if ds.dim() != 2 {
        return Err(Error::InvalidArgument(
            "decision grid requires 2-D features".into(),
        ));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument("resolution must be >= 2".into()));
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in ds.features.iter_rows() {
        x_min = x_min.min(row[0]);
        x_max = x_max.max(row[0]);
        y_min = y_min.min(row[1]);
        y_max = y_max.max(row[1]);
    }
    let pad_x = 0.2 * (x_max - x_min);
    let pad_y = 0.2 * (y_max - y_min);
    x_min -= pad_x;
    x_max += pad_x;
    y_min -= pad_y;
    y_max += pad_y;

    let mut rows = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        let x = x_min + (x_max - x_min) * i as f64 / (resolution - 1) as f64;
        for j in 0..resolution {
            let y = y_min + (y_max - y_min) * j as f64 / (resolution - 1) as f64;
            rows.push(vec![x, y]);
        }
    }
    let grid = Tensor::from_rows(&rows)?;
    let pv = mlp_forward(vanilla, &grid)?;
    let pc = mlp_forward(consistency, &grid)?;

    let mut out = String::from("x0,x1,prob_class1_vanilla,prob_class1_cons\n");
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row[0],
            row[1],
            pv.at(i, 1),
            pc.at(i, 1)
        ));
    }
    Ok(out)
}

/// One grid point of the correlation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelateRun {
    pub run_id: String,
    /// Dataset family label; coefficients are reported per group and pooled.
    pub group: String,
    pub experiment: ExperimentConfig,
}

/// Config for the correlation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelateConfig {
    pub runs: Vec<CorrelateRun>,
}

/// Row of the correlation CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelateRow {
    pub run_id: String,
    pub group: String,
    pub config_hash: String,
    pub val_hard_l1: f64,
    pub val_soft_l1: f64,
    pub val_hard_kl: f64,
    pub val_soft_kl: f64,
    pub test_error: f64,
}

/// Pearson coefficients of the four validation metrics against test error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricCorrelations {
    pub hard_l1: f64,
    pub soft_l1: f64,
    pub hard_kl: f64,
    pub soft_kl: f64,
}

impl MetricCorrelations {
    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::HardL1 => self.hard_l1,
            MetricKind::SoftL1 => self.soft_l1,
            MetricKind::HardKl => self.hard_kl,
            MetricKind::SoftKl => self.soft_kl,
        }
    }

    fn from_rows(rows: &[&CorrelateRow]) -> Result<Self> {
        let errs: Vec<f64> = rows.iter().map(|r| r.test_error).collect();
        let series = |f: fn(&CorrelateRow) -> f64| -> Result<f64> {
            let xs: Vec<f64> = rows.iter().map(|r| f(r)).collect();
            pearson(&xs, &errs)
        };
        Ok(Self {
            hard_l1: series(|r| r.val_hard_l1)?,
            soft_l1: series(|r| r.val_soft_l1)?,
            hard_kl: series(|r| r.val_hard_kl)?,
            soft_kl: series(|r| r.val_soft_kl)?,
        })
    }
}

/// Correlation-study output: per-run rows plus coefficients per group and
/// pooled over all runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelateRow>,
    pub groups: Vec<(String, MetricCorrelations)>,
    pub pooled: MetricCorrelations,
}

impl CorrelationReport {
    /// CSV with one row per trained run:
    /// `run_id,config_hash,val_hard_l1,val_soft_l1,val_hard_kl,val_soft_kl,test_error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "run_id,config_hash,val_hard_l1,val_soft_l1,val_hard_kl,val_soft_kl,test_error\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.run_id,
                r.config_hash,
                r.val_hard_l1,
                r.val_soft_l1,
                r.val_hard_kl,
                r.val_soft_kl,
                r.test_error
            ));
        }
        out
    }
}

fn correlate_one(run: &CorrelateRun) -> Result<CorrelateRow> {
    let result = run_experiment(&run.experiment)?;
    let val = result.final_val_errors.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "run {} has no validation bags; correlate requires a split",
            run.run_id
        ))
    })?;
    let acc = result.final_accuracy.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "run {} has no test dataset; correlate requires one",
            run.run_id
        ))
    })?;
    Ok(CorrelateRow {
        run_id: run.run_id.clone(),
        group: run.group.clone(),
        config_hash: config_hash(&run.experiment)?,
        val_hard_l1: val.hard_l1,
        val_soft_l1: val.soft_l1,
        val_hard_kl: val.hard_kl,
        val_soft_kl: val.soft_kl,
        test_error: 1.0 - acc,
    })
}

/// Trains every grid point (in parallel up to `threads`) and correlates each
/// validation metric with the instance test error. Rows are sorted by run id
/// so the report does not depend on scheduling.
pub fn correlate(cfg: &CorrelateConfig, threads: usize) -> Result<CorrelationReport> {
    if cfg.runs.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least two completed runs".into(),
        ));
    }
    {
        let mut ids: Vec<&str> = cfg.runs.iter().map(|r| r.run_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != cfg.runs.len() {
            return Err(Error::InvalidArgument("duplicate run_id in grid".into()));
        }
    }

    let outcomes: Vec<Result<CorrelateRow>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            cfg.runs.par_iter().map(correlate_one).collect()
        })
    } else {
        cfg.runs.iter().map(correlate_one).collect()
    };

    let mut rows = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        rows.push(outcome?);
    }
    rows.sort_by(|a, b| a.run_id.cmp(&b.run_id));

    let mut group_names: Vec<String> = rows.iter().map(|r| r.group.clone()).collect();
    group_names.sort();
    group_names.dedup();
    let mut groups = Vec::with_capacity(group_names.len());
    for name in group_names {
        let members: Vec<&CorrelateRow> = rows.iter().filter(|r| r.group == name).collect();
        groups.push((name, MetricCorrelations::from_rows(&members)?));
    }
    let all: Vec<&CorrelateRow> = rows.iter().collect();
    let pooled = MetricCorrelations::from_rows(&all)?;

    Ok(CorrelationReport {
        rows,
        groups,
        pooled,
    })
}

/// The default desk-scale correlation grid: two datasets (two moons and three
/// Gaussian blobs) crossed with uniform bag sizes {8, 64}, consistency
/// weights {0.05, 0.1, 0.5}, perturbation radii {0.5, 1.0}, and three seeds —
/// 72 runs. Bag-size variation is what spreads run quality enough for the
/// correlation to be informative.
pub fn default_correlate_config() -> CorrelateConfig {
    let alphas = [0.05, 0.1, 0.5];
    let epsilons = [0.5, 1.0];
    let bag_sizes = [8usize, 64];
    let seeds = [1u64, 2, 3];

    let mut runs = Vec::new();
    for dataset_name in ["moons", "blobs"] {
        for &bag_size in &bag_sizes {
            for (ai, &alpha) in alphas.iter().enumerate() {
                for (ei, &epsilon) in epsilons.iter().enumerate() {
                    for &seed in &seeds {
                        let run_seed = crate::rng::derive_seed(&[
                            match dataset_name {
                                "moons" => 10,
                                _ => 20,
                            },
                            bag_size as u64,
                            ai as u64,
                            ei as u64,
                            seed,
                        ]);
                        let dataset = match dataset_name {
                            "moons" => DatasetSpec::TwoMoons {
                                n_per_class: 256,
                                noise_std: 0.25,
                                seed: run_seed,
                            },
                            _ => DatasetSpec::GaussianBlobs {
                                centers: vec![
                                    vec![0.0, 0.0],
                                    vec![2.5, 0.0],
                                    vec![1.25, 2.2],
                                ],
                                n_per_center: 170,
                                std: 1.0,
                                seed: run_seed,
                            },
                        };
                        let test_dataset = match dataset_name {
                            "moons" => DatasetSpec::TwoMoons {
                                n_per_class: 500,
                                noise_std: 0.25,
                                seed: run_seed.wrapping_add(7),
                            },
                            _ => DatasetSpec::GaussianBlobs {
                                centers: vec![
                                    vec![0.0, 0.0],
                                    vec![2.5, 0.0],
                                    vec![1.25, 2.2],
                                ],
                                n_per_center: 340,
                                std: 1.0,
                                seed: run_seed.wrapping_add(7),
                            },
                        };
                        runs.push(CorrelateRun {
                            run_id: format!(
                                "{dataset_name}_n{bag_size}_a{alpha}_e{epsilon}_s{seed}"
                            ),
                            group: dataset_name.to_string(),
                            experiment: ExperimentConfig {
                                dataset,
                                test_dataset: Some(test_dataset),
                                bagging: BaggingSpec::Uniform {
                                    bag_size,
                                    seed: run_seed,
                                },
                                split: Some(SplitSpec {
                                    train_fraction: 0.9,
                                    seed: run_seed,
                                }),
                                train: TrainConfig {
                                    hidden_layers: vec![64, 64],
                                    epochs: 120,
                                    base_lr: 3e-3,
                                    lr_decay_factor: 0.2,
                                    lr_decay_at: 96,
                                    consistency: ConsistencySpec::vat(alpha, epsilon, 36),
                                    seed: run_seed,
                                    final_window: 10,
                                    ..TrainConfig::default()
                                },
                            },
                        });
                    }
                }
            }
        }
    }
    CorrelateConfig { runs }
}

/// Grid parallelism cap: `LLP_THREADS` when set, otherwise the logical core
/// count.
pub fn thread_cap() -> usize {
    std::env::var("LLP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec::TwoMoons {
                n_per_class: 24,
                noise_std: 0.15,
                seed: 1,
            },
            test_dataset: Some(DatasetSpec::TwoMoons {
                n_per_class: 50,
                noise_std: 0.15,
                seed: 2,
            }),
            bagging: BaggingSpec::Uniform {
                bag_size: 8,
                seed: 3,
            },
            split: Some(SplitSpec {
                train_fraction: 0.8,
                seed: 4,
            }),
            train: TrainConfig {
                hidden_layers: vec![8],
                epochs: 3,
                base_lr: 1e-3,
                lr_decay_at: 3,
                final_window: 2,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn config_round_trips_losslessly() {
        let cfg = small_config();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(config_hash(&back).unwrap(), config_hash(&cfg).unwrap());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let cfg = small_config();
        let h1 = config_hash(&cfg).unwrap();
        assert_eq!(h1.len(), 16);
        assert_eq!(h1, config_hash(&cfg).unwrap());
        let mut other = cfg.clone();
        other.train.seed = 99;
        assert_ne!(h1, config_hash(&other).unwrap());
    }

    #[test]
    fn run_experiment_produces_records_and_accuracy() {
        let result = run_experiment(&small_config()).unwrap();
        assert_eq!(result.records.len(), 3);
        assert!(result.final_accuracy.unwrap() >= 0.0);
        assert!(result.best_val_hard_l1.unwrap() >= 0.0);
        assert!(result.val_bags.is_some());
    }

    #[test]
    fn with_seed_rewrites_all_seeds() {
        let cfg = small_config().with_seed(77);
        match cfg.dataset {
            DatasetSpec::TwoMoons { seed, .. } => assert_eq!(seed, 77),
            _ => unreachable!(),
        }
        match cfg.bagging {
            BaggingSpec::Uniform { seed, .. } => assert_eq!(seed, 77),
            _ => unreachable!(),
        }
        assert_eq!(cfg.split.unwrap().seed, 77);
        assert_eq!(cfg.train.seed, 77);
    }

    #[test]
    fn decision_grid_covers_padded_bounding_box() {
        let ds = two_moons(20, 0.1, 5).unwrap();
        let params = MlpParams::glorot(&[2, 4, 2], 6).unwrap();
        let csv = decision_grid_csv(&params, &params, &ds, 5).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "x0,x1,prob_class1_vanilla,prob_class1_cons"
        );
        let pts: Vec<Vec<f64>> = lines
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(pts.len(), 25);

        let xs: Vec<f64> = ds.features.iter_rows().map(|r| r[0]).collect();
        let (dx_min, dx_max) = (
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let gx: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        let (gx_min, gx_max) = (
            gx.iter().cloned().fold(f64::INFINITY, f64::min),
            gx.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let pad = 0.2 * (dx_max - dx_min);
        assert!((gx_min - (dx_min - pad)).abs() < 1e-9);
        assert!((gx_max - (dx_max + pad)).abs() < 1e-9);
    }

    #[test]
    fn default_grid_has_72_distinct_runs() {
        let grid = default_correlate_config();
        assert_eq!(grid.runs.len(), 72);
        let mut ids: Vec<&String> = grid.runs.iter().map(|r| &r.run_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 72);
        assert!(grid.runs.iter().any(|r| r.group == "moons"));
        assert!(grid.runs.iter().any(|r| r.group == "blobs"));
    }

    #[test]
    fn correlate_surfaces_constant_series_error() {
        // Identical runs (same seed) produce identical errors; the undefined
        // correlation must surface rather than silently yielding NaN.
        let run = CorrelateRun {
            run_id: "a".into(),
            group: "g".into(),
            experiment: small_config(),
        };
        let mut dup = run.clone();
        dup.run_id = "b".into();
        let cfg = CorrelateConfig {
            runs: vec![run, dup],
        };
        match correlate(&cfg, 1) {
            Err(Error::UndefinedCorrelation(_)) => {}
            other => panic!("expected undefined correlation, got {other:?}"),
        }
    }

    #[test]
    fn correlate_rejects_tiny_grids() {
        let cfg = CorrelateConfig {
            runs: vec![CorrelateRun {
                run_id: "only".into(),
                group: "g".into(),
                experiment: small_config(),
            }],
        };
        assert!(correlate(&cfg, 1).is_err());
    }
}
