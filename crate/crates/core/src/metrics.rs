//! Bag-level validation metrics, instance accuracy, and Pearson correlation.

use crate::bagging::{check_simplex, BagCollection};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::mlp::{mlp_forward, MlpParams, PROB_FLOOR};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// The four bag-level validation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    HardL1,
    SoftL1,
    HardKl,
    SoftKl,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::HardL1,
        MetricKind::SoftL1,
        MetricKind::HardKl,
        MetricKind::SoftKl,
    ];

    pub fn is_hard(self) -> bool {
        matches!(self, MetricKind::HardL1 | MetricKind::HardKl)
    }
}

/// How bag errors aggregate into a validation error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BagWeighting {
    /// Plain mean over bags.
    #[default]
    Unweighted,
    /// Bags weighted by instance count.
    ByInstances,
}

/// Argmax with ties broken toward the lower class index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Estimated proportion label of a bag: the mean of soft predictions, or of
/// one-hot hard predictions.
pub fn estimate_proportion(params: &MlpParams, bag_x: &Tensor, hard: bool) -> Result<Vec<f64>> {
    if bag_x.rows() == 0 {
        return Err(Error::InvalidArgument("empty bag".into()));
    }
    let probs = mlp_forward(params, bag_x)?;
    if hard {
        let mut est = vec![0.0; probs.cols()];
        for row in probs.iter_rows() {
            est[argmax(row)] += 1.0;
        }
        for v in &mut est {
            *v /= probs.rows() as f64;
        }
        Ok(est)
    } else {
        Ok(probs.column_means())
    }
}

/// Error between a true and an estimated proportion. L1 kinds return
/// `sum |p_i - p_hat_i|` in `[0, 2]`; KL kinds return `KL(p || p_hat)` with
/// the estimate clamped to `>= 1e-8` and renormalized.
pub fn bag_error(p: &[f64], p_hat: &[f64], kind: MetricKind) -> Result<f64> {
    check_simplex(p)?;
    check_simplex(p_hat)?;
    if p.len() != p_hat.len() {
        return Err(Error::Shape("proportion length mismatch".into()));
    }
    match kind {
        MetricKind::HardL1 | MetricKind::SoftL1 => {
            Ok(p.iter().zip(p_hat).map(|(a, b)| (a - b).abs()).sum())
        }
        MetricKind::HardKl | MetricKind::SoftKl => {
            let clamped: Vec<f64> = p_hat.iter().map(|&v| v.max(PROB_FLOOR)).collect();
            let z: f64 = clamped.iter().sum();
            Ok(p.iter()
                .zip(&clamped)
                .filter(|(&pi, _)| pi > 0.0)
                .map(|(&pi, &qi)| pi * (pi.ln() - (qi / z).ln()))
                .sum())
        }
    }
}

/// Mean bag error over a validation collection. Hard kinds never read
/// instance labels: the estimate uses only features and the stored
/// proportions.
pub fn validation_error(
    params: &MlpParams,
    val_bags: &BagCollection,
    ds: &LabeledDataset,
    kind: MetricKind,
) -> Result<f64> {
    validation_error_weighted(params, val_bags, ds, kind, BagWeighting::Unweighted)
}

pub fn validation_error_weighted(
    params: &MlpParams,
    val_bags: &BagCollection,
    ds: &LabeledDataset,
    kind: MetricKind,
    weighting: BagWeighting,
) -> Result<f64> {
    if val_bags.is_empty() {
        return Err(Error::InvalidArgument("empty bag collection".into()));
    }
    let mut total = 0.0;
    let mut weight = 0.0;
    for bag in &val_bags.bags {
        let bag_x = ds.features.gather_rows(&bag.indices)?;
        let est = estimate_proportion(params, &bag_x, kind.is_hard())?;
        let err = bag_error(&bag.proportion, &est, kind)?;
        let w = match weighting {
            BagWeighting::Unweighted => 1.0,
            BagWeighting::ByInstances => bag.len() as f64,
        };
        total += w * err;
        weight += w;
    }
    Ok(total / weight)
}

/// All four validation errors of one model on one bag collection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationErrors {
    pub hard_l1: f64,
    pub soft_l1: f64,
    pub hard_kl: f64,
    pub soft_kl: f64,
}

impl ValidationErrors {
    pub fn compute(
        params: &MlpParams,
        val_bags: &BagCollection,
        ds: &LabeledDataset,
    ) -> Result<Self> {
        Ok(Self {
            hard_l1: validation_error(params, val_bags, ds, MetricKind::HardL1)?,
            soft_l1: validation_error(params, val_bags, ds, MetricKind::SoftL1)?,
            hard_kl: validation_error(params, val_bags, ds, MetricKind::HardKl)?,
            soft_kl: validation_error(params, val_bags, ds, MetricKind::SoftKl)?,
        })
    }

    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::HardL1 => self.hard_l1,
            MetricKind::SoftL1 => self.soft_l1,
            MetricKind::HardKl => self.hard_kl,
            MetricKind::SoftKl => self.soft_kl,
        }
    }
}

/// Fraction of argmax predictions matching the hidden labels.
pub fn instance_accuracy(params: &MlpParams, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let probs = mlp_forward(params, &test.features)?;
    let correct = probs
        .iter_rows()
        .zip(&test.labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape("series length mismatch".into()));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two observations".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a series is constant".into(),
        ));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagging::uniform_bags;
    use crate::data::two_moons;
    use crate::mlp::{Activation, Layer};
    use approx::assert_abs_diff_eq;

    fn constant_classifier(inputs: usize, classes: usize) -> MlpParams {
        MlpParams {
            layers: vec![Layer {
                weights: Tensor::zeros(inputs, classes),
                bias: vec![0.0; classes],
            }],
            activation: Activation::Relu,
        }
    }

    #[test]
    fn hard_estimate_of_single_instance_is_one_hot() {
        let params = MlpParams::glorot(&[2, 6, 3], 1).unwrap();
        let x = Tensor::new(vec![1, 2], vec![0.3, -1.2]).unwrap();
        let est = estimate_proportion(&params, &x, true).unwrap();
        assert_eq!(est.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(est.iter().filter(|&&v| v == 0.0).count(), 2);
    }

    #[test]
    fn soft_estimate_of_uniform_classifier_is_uniform() {
        let params = constant_classifier(2, 4);
        let x = Tensor::new(vec![3, 2], vec![1.0; 6]).unwrap();
        let est = estimate_proportion(&params, &x, false).unwrap();
        for v in est {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn hard_estimates_are_multiples_of_bag_size() {
        let params = MlpParams::glorot(&[2, 8, 3], 2).unwrap();
        let ds = two_moons(20, 0.2, 3).unwrap();
        let est = estimate_proportion(&params, &ds.features, true).unwrap();
        let n = ds.len() as f64;
        for v in est {
            let scaled = v * n;
            assert_abs_diff_eq!(scaled, scaled.round(), epsilon = 1e-9);
        }
    }

    #[test]
    fn bag_error_identity_and_extremes() {
        let p = [0.5, 0.5];
        for kind in MetricKind::ALL {
            assert_abs_diff_eq!(bag_error(&p, &p, kind).unwrap(), 0.0, epsilon = 1e-12);
        }
        // Disjoint one-hots: L1 hits its maximum of 2.
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert_abs_diff_eq!(
            bag_error(&a, &b, MetricKind::HardL1).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            bag_error(&[0.5, 0.5], &[1.0, 0.0], MetricKind::HardL1).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(bag_error(&[0.9, 0.3], &p, MetricKind::SoftL1).is_err());
    }

    #[test]
    fn kl_error_nonnegative_and_asymmetric_inputs_allowed() {
        let p = [1.0, 0.0];
        let q = [0.6, 0.4];
        let kl = bag_error(&p, &q, MetricKind::SoftKl).unwrap();
        assert!(kl > 0.0);
        // Zero entries in the estimate are clamped rather than infinite.
        let kl = bag_error(&[0.5, 0.5], &[1.0, 0.0], MetricKind::HardKl).unwrap();
        assert!(kl.is_finite() && kl > 0.0);
    }

    #[test]
    fn validation_error_one_bag_equals_bag_error() {
        let ds = two_moons(30, 0.15, 4).unwrap();
        let coll = uniform_bags(&ds, ds.len(), 5).unwrap();
        let params = MlpParams::glorot(&[2, 8, 2], 6).unwrap();
        for kind in MetricKind::ALL {
            let ve = validation_error(&params, &coll, &ds, kind).unwrap();
            let bag = &coll.bags[0];
            let x = ds.features.gather_rows(&bag.indices).unwrap();
            let est = estimate_proportion(&params, &x, kind.is_hard()).unwrap();
            let be = bag_error(&bag.proportion, &est, kind).unwrap();
            assert_abs_diff_eq!(ve, be, epsilon = 1e-15);
        }
    }

    #[test]
    fn accuracy_of_constant_classifier_on_balanced_set() {
        let ds = two_moons(50, 0.1, 7).unwrap();
        let params = constant_classifier(2, 2);
        // Ties break to class 0, which holds half the balanced set.
        let acc = instance_accuracy(&params, &ds).unwrap();
        assert_abs_diff_eq!(acc, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn accuracy_complement_property() {
        let ds = two_moons(40, 0.2, 8).unwrap();
        let params = MlpParams::glorot(&[2, 16, 2], 9).unwrap();
        let acc = instance_accuracy(&params, &ds).unwrap();
        let probs = mlp_forward(&params, &ds.features).unwrap();
        let errors = probs
            .iter_rows()
            .zip(&ds.labels)
            .filter(|(row, &l)| argmax(row) != l)
            .count();
        assert_abs_diff_eq!(
            acc + errors as f64 / ds.len() as f64,
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pearson_known_values() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 3.0).collect();
        assert_abs_diff_eq!(pearson(&xs, &ys).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(pearson(&xs, &neg).unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pearson_rejects_constant_series() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn pearson_affine_invariance() {
        let xs = [0.3, -1.2, 2.2, 0.9, -0.4];
        let ys = [1.0, 0.2, 2.5, 1.7, 0.6];
        let r = pearson(&xs, &ys).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|x| 3.0 * x + 10.0).collect();
        assert_abs_diff_eq!(pearson(&scaled, &ys).unwrap(), r, epsilon = 1e-12);
        let flipped: Vec<f64> = xs.iter().map(|x| -2.0 * x).collect();
        assert_abs_diff_eq!(pearson(&flipped, &ys).unwrap(), -r, epsilon = 1e-12);
    }
}
