//! The outer training loop: Adam updates over seeded-shuffled bags, the
//! step learning-rate schedule, per-epoch bookkeeping, and final-accuracy
//! reporting.

use crate::bagging::BagCollection;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{combined_loss, rampup_weight, ConsistencySpec};
use crate::metrics::{instance_accuracy, ValidationErrors};
use crate::mlp::{GradBundle, MlpParams};
use crate::rng::{self, derive_seed, rng_from, seeded_permutation};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Adam moment-decay and stability constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden layer widths of the classifier.
    pub hidden_layers: Vec<usize>,
    pub epochs: usize,
    pub base_lr: f64,
    /// Multiplier applied to the learning rate from `lr_decay_at` onward.
    pub lr_decay_factor: f64,
    pub lr_decay_at: usize,
    pub adam: AdamHyper,
    pub consistency: ConsistencySpec,
    pub seed: u64,
    /// Width of the trailing window used for the reported final accuracy.
    pub final_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![64, 64],
            epochs: 200,
            base_lr: 3e-4,
            lr_decay_factor: 0.2,
            lr_decay_at: 160,
            adam: AdamHyper::default(),
            consistency: ConsistencySpec::none(),
            seed: 0,
            final_window: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::InvalidArgument(
                "lr_decay_factor must lie in (0, 1]".into(),
            ));
        }
        if self.lr_decay_at > self.epochs {
            return Err(Error::InvalidArgument(
                "lr_decay_at must not exceed epochs".into(),
            ));
        }
        if self.final_window == 0 || self.final_window > self.epochs {
            return Err(Error::InvalidArgument(
                "final_window must lie in 1..=epochs".into(),
            ));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::InvalidArgument("base_lr must be > 0".into()));
        }
        self.consistency.validate()
    }
}

/// First and second moment estimates mirroring the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: GradBundle,
    pub v: GradBundle,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: GradBundle::zeros_like(params),
            v: GradBundle::zeros_like(params),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update; returns the new parameters and state.
pub fn adam_step(
    params: &MlpParams,
    grads: &GradBundle,
    state: &AdamState,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<(MlpParams, AdamState)> {
    if params.layers.len() != grads.layers.len() {
        return Err(Error::Shape("gradient layer count mismatch".into()));
    }
    let step = state.step + 1;
    let bc1 = 1.0 - hyper.beta1.powi(step as i32);
    let bc2 = 1.0 - hyper.beta2.powi(step as i32);

    let mut new_params = params.clone();
    let mut new_m = state.m.clone();
    let mut new_v = state.v.clone();

    for k in 0..params.layers.len() {
        if params.layers[k].weights.shape() != grads.layers[k].weights.shape()
            || params.layers[k].bias.len() != grads.layers[k].bias.len()
        {
            return Err(Error::Shape(format!("gradient shape mismatch in layer {k}")));
        }
        let update = |p: f64, g: f64, m: &mut f64, v: &mut f64| -> f64 {
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            p - lr * m_hat / (v_hat.sqrt() + hyper.eps)
        };

        let (rows, cols) = (
            params.layers[k].weights.rows(),
            params.layers[k].weights.cols(),
        );
        let mut w_new = Vec::with_capacity(rows * cols);
        {
            let w = params.layers[k].weights.values();
            let g = grads.layers[k].weights.values();
            let mut m_vals = new_m.layers[k].weights.values().to_vec();
            let mut v_vals = new_v.layers[k].weights.values().to_vec();
            for i in 0..w.len() {
                w_new.push(update(w[i], g[i], &mut m_vals[i], &mut v_vals[i]));
            }
            new_m.layers[k].weights = Tensor::new(vec![rows, cols], m_vals)?;
            new_v.layers[k].weights = Tensor::new(vec![rows, cols], v_vals)?;
        }
        new_params.layers[k].weights = Tensor::new(vec![rows, cols], w_new)?;

        for j in 0..params.layers[k].bias.len() {
            let g = grads.layers[k].bias[j];
            new_params.layers[k].bias[j] = update(
                params.layers[k].bias[j],
                g,
                &mut new_m.layers[k].bias[j],
                &mut new_v.layers[k].bias[j],
            );
        }
    }

    Ok((
        new_params,
        AdamState {
            m: new_m,
            v: new_v,
            step,
        },
    ))
}

/// Step schedule: `base_lr` before `lr_decay_at`, `base_lr * factor` after.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch >= cfg.lr_decay_at {
        cfg.base_lr * cfg.lr_decay_factor
    } else {
        cfg.base_lr
    }
}

/// Per-epoch bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean combined loss over the epoch's bags.
    pub train_loss: f64,
    /// Consistency weight `w(t)` used this epoch.
    pub consistency_weight: f64,
    pub val_errors: Option<ValidationErrors>,
    pub test_accuracy: Option<f64>,
}

/// Classifier init used by [`train`]; exposed so reference runs can start
/// from identical parameters.
pub fn initial_params(cfg: &TrainConfig, input_dim: usize, n_classes: usize) -> Result<MlpParams> {
    let mut dims = Vec::with_capacity(cfg.hidden_layers.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(&cfg.hidden_layers);
    dims.push(n_classes);
    MlpParams::glorot(&dims, derive_seed(&[cfg.seed, rng::tag::INIT]))
}

/// Seed of the perturbation stream for a given epoch and bag; exposed for
/// reference runs that must replay training exactly.
pub fn bag_step_seed(run_seed: u64, epoch: usize, bag_index: usize) -> u64 {
    derive_seed(&[run_seed, rng::tag::PERTURB, epoch as u64, bag_index as u64])
}

/// Bag visiting order for an epoch: a fresh seeded permutation per epoch.
pub fn epoch_bag_order(run_seed: u64, epoch: usize, n_bags: usize) -> Vec<usize> {
    let mut rng = rng_from(&[run_seed, rng::tag::SHUFFLE, epoch as u64]);
    seeded_permutation(n_bags, &mut rng)
}

/// Runs the full training loop: one Adam step per bag, bags reshuffled every
/// epoch, one [`EpochRecord`] per epoch. Deterministic given the config.
pub fn train(
    train_bags: &BagCollection,
    val_bags: Option<&BagCollection>,
    ds: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<(MlpParams, Vec<EpochRecord>)> {
    cfg.validate()?;
    train_bags.validate(ds.len())?;
    if let Some(vb) = val_bags {
        vb.validate(ds.len())?;
    }

    let mut params = initial_params(cfg, ds.dim(), ds.n_classes)?;
    let mut state = AdamState::new(&params);
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let order = epoch_bag_order(cfg.seed, epoch, train_bags.len());
        let mut loss_sum = 0.0;
        for &bag_index in &order {
            let bag = &train_bags.bags[bag_index];
            let bag_x = ds.features.gather_rows(&bag.indices)?;
            let (loss, grads) = combined_loss(
                &params,
                &bag_x,
                &bag.proportion,
                epoch,
                &cfg.consistency,
                bag_step_seed(cfg.seed, epoch, bag_index),
            )?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    bag: bag_index,
                });
            }
            loss_sum += loss;
            let (p, s) = adam_step(&params, &grads, &state, lr, &cfg.adam)?;
            params = p;
            state = s;
        }

        let val_errors = match val_bags {
            Some(vb) => Some(ValidationErrors::compute(&params, vb, ds)?),
            None => None,
        };
        let test_accuracy = match test {
            Some(t) => Some(instance_accuracy(&params, t)?),
            None => None,
        };
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_bags.len() as f64,
            consistency_weight: rampup_weight(epoch, &cfg.consistency),
            val_errors,
            test_accuracy,
        });
    }

    Ok((params, records))
}

/// Mean test accuracy over the last `window` epochs.
pub fn final_accuracy(records: &[EpochRecord], window: usize) -> Result<f64> {
    if window == 0 || window > records.len() {
        return Err(Error::InvalidArgument(format!(
            "window {window} out of range 1..={}",
            records.len()
        )));
    }
    let tail = &records[records.len() - window..];
    let mut sum = 0.0;
    for r in tail {
        sum += r.test_accuracy.ok_or_else(|| {
            Error::InvalidArgument(format!("epoch {} has no test accuracy", r.epoch))
        })?;
    }
    Ok(sum / window as f64)
}

/// History CSV with one row per epoch:
/// `epoch,train_loss,w_t,val_hard_l1,val_soft_l1,val_hard_kl,val_soft_kl,test_acc`.
/// Missing values are left empty.
pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut out =
        String::from("epoch,train_loss,w_t,val_hard_l1,val_soft_l1,val_hard_kl,val_soft_kl,test_acc\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{}",
            r.epoch, r.train_loss, r.consistency_weight
        ));
        match &r.val_errors {
            Some(v) => out.push_str(&format!(
                ",{},{},{},{}",
                v.hard_l1, v.soft_l1, v.hard_kl, v.soft_kl
            )),
            None => out.push_str(",,,,"),
        }
        match r.test_accuracy {
            Some(a) => out.push_str(&format!(",{a}\n")),
            None => out.push('\n'),
        }
    }
    out
}
