//! The instance-level classifier: a dense ReLU MLP with a softmax head, plus
//! exact reverse-mode gradients with respect to parameters and inputs.
//!
//! Probabilities are clamped to `>= PROB_FLOOR` before any logarithm; the
//! matching gradient is zero wherever the clamp binds, so analytic gradients
//! agree with finite differences of the actual computed loss.

use crate::error::{Error, Result};
use crate::rng::{self, rng_from};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Lower clamp applied to probabilities before logarithms.
pub const PROB_FLOOR: f64 = 1e-8;

/// Hidden-layer nonlinearity tag. The final layer is always softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_in x fan_out` weight matrix.
    pub weights: Tensor,
    /// One bias per output unit.
    pub bias: Vec<f64>,
}

/// All trainable parameters of the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl MlpParams {
    /// Seeded symmetric-uniform init: weights `U(-b, b)` with
    /// `b = sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn glorot(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least input and output dimensions".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        let mut rng = rng_from(&[seed, rng::tag::INIT]);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let values: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            layers.push(Layer {
                weights: Tensor::new(vec![fan_in, fan_out], values)?,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(Self {
            layers,
            activation: Activation::Relu,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.rows()
    }

    /// Number of classes (fan-out of the final layer).
    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.cols()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.values().len() + l.bias.len())
            .sum()
    }

    /// Checks that adjacent layer dimensions chain and everything is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("no layers".into()));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].weights.cols() != pair[1].weights.rows() {
                return Err(Error::Shape(format!(
                    "layer {k} fan_out {} != layer {} fan_in {}",
                    pair[0].weights.cols(),
                    k + 1,
                    pair[1].weights.rows()
                )));
            }
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.weights.cols() {
                return Err(Error::Shape(format!("layer {k} bias length mismatch")));
            }
            if !l.weights.is_finite() || !l.bias.iter().all(|b| b.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "layer {k} has non-finite parameters"
                )));
            }
        }
        Ok(())
    }
}

/// Per-layer gradients mirroring [`MlpParams`], plus the optional gradient
/// with respect to the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub layers: Vec<Layer>,
    pub input: Option<Tensor>,
}

impl GradBundle {
    pub fn zeros_like(params: &MlpParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| Layer {
                weights: Tensor::zeros(l.weights.rows(), l.weights.cols()),
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        Self {
            layers,
            input: None,
        }
    }

    /// `self += scale * other` over all parameter gradients.
    pub fn accumulate(&mut self, scale: f64, other: &GradBundle) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient layer count mismatch".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weights.shape() != b.weights.shape() || a.bias.len() != b.bias.len() {
                return Err(Error::Shape("gradient shape mismatch".into()));
            }
            let vals: Vec<f64> = a
                .weights
                .values()
                .iter()
                .zip(b.weights.values())
                .map(|(x, y)| x + scale * y)
                .collect();
            a.weights = Tensor::new(a.weights.shape().to_vec(), vals)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.values().iter().chain(l.bias.iter()))
            .fold(0.0_f64, |m, &v| m.max(v.abs()))
    }
}

/// Forward-pass intermediates kept for the backward pass.
pub struct ForwardTrace {
    /// `activations[0]` is the input batch; `activations[k+1]` is the
    /// post-activation output of layer `k` (softmax for the last layer).
    pub activations: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn probs(&self) -> &Tensor {
        self.activations.last().unwrap()
    }
}

fn affine(x: &Tensor, layer: &Layer) -> Result<Tensor> {
    let mut z = x.matmul(&layer.weights)?;
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    Ok(z)
}

fn softmax_rows(z: &mut Tensor) {
    for r in 0..z.rows() {
        let row = z.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Runs the network and keeps every intermediate activation.
pub fn mlp_forward_trace(params: &MlpParams, x: &Tensor) -> Result<ForwardTrace> {
    params.validate()?;
    if !x.is_matrix() || x.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} columns, classifier expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    let last = params.layers.len() - 1;
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    activations.push(x.clone());
    for (k, layer) in params.layers.iter().enumerate() {
        let mut z = affine(activations.last().unwrap(), layer)?;
        if k == last {
            softmax_rows(&mut z);
        } else {
            match params.activation {
                Activation::Relu => z = z.map(|v| v.max(0.0)),
            }
        }
        activations.push(z);
    }
    Ok(ForwardTrace { activations })
}

/// Class probabilities for a batch: each output row lies on the simplex.
pub fn mlp_forward(params: &MlpParams, x: &Tensor) -> Result<Tensor> {
    Ok(mlp_forward_trace(params, x)?.activations.pop().unwrap())
}

/// Reverse pass from `upstream = dLoss/dProbs` through softmax, the hidden
/// stack, and optionally down to the input batch.
pub fn backprop_trace(
    params: &MlpParams,
    trace: &ForwardTrace,
    upstream: &Tensor,
    want_input_grad: bool,
) -> Result<GradBundle> {
    let probs = trace.probs();
    if upstream.shape() != probs.shape() {
        return Err(Error::Shape(format!(
            "upstream shape {:?} != output shape {:?}",
            upstream.shape(),
            probs.shape()
        )));
    }
    let n = probs.rows();
    let classes = probs.cols();

    // Softmax Jacobian: dz = p .* (dp - <dp, p>)
    let mut delta = Tensor::zeros(n, classes);
    for r in 0..n {
        let p = probs.row(r);
        let dp = upstream.row(r);
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for (dz, (&pi, &dpi)) in delta.row_mut(r).iter_mut().zip(p.iter().zip(dp)) {
            *dz = pi * (dpi - dot);
        }
    }

    let mut grads = Vec::with_capacity(params.layers.len());
    let mut input_grad = None;
    for (k, layer) in params.layers.iter().enumerate().rev() {
        let below = &trace.activations[k];
        // dW = below^T * delta; db = column sums of delta.
        let (fan_in, fan_out) = (layer.weights.rows(), layer.weights.cols());
        let mut gw = vec![0.0; fan_in * fan_out];
        let mut gb = vec![0.0; fan_out];
        for r in 0..n {
            let a = below.row(r);
            let d = delta.row(r);
            for (i, &ai) in a.iter().enumerate() {
                let gw_row = &mut gw[i * fan_out..(i + 1) * fan_out];
                for (g, &dj) in gw_row.iter_mut().zip(d) {
                    *g += ai * dj;
                }
            }
            for (g, &dj) in gb.iter_mut().zip(d) {
                *g += dj;
            }
        }
        grads.push(Layer {
            weights: Tensor::new(vec![fan_in, fan_out], gw)?,
            bias: gb,
        });

        let need_below = k > 0 || want_input_grad;
        if need_below {
            // d(below) = delta * W^T, gated by the activation derivative.
            let mut dbelow = Tensor::zeros(n, fan_in);
            for r in 0..n {
                let d = delta.row(r);
                let out = dbelow.row_mut(r);
                for (j, &dj) in d.iter().enumerate() {
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += dj * layer.weights.at(i, j);
                    }
                }
            }
            if k > 0 {
                match params.activation {
                    Activation::Relu => {
                        for r in 0..n {
                            let act = below.row(r);
                            for (v, &a) in dbelow.row_mut(r).iter_mut().zip(act) {
                                if a <= 0.0 {
                                    *v = 0.0;
                                }
                            }
                        }
                    }
                }
                delta = dbelow;
            } else {
                input_grad = Some(dbelow);
            }
        }
    }
    grads.reverse();
    Ok(GradBundle {
        layers: grads,
        input: input_grad,
    })
}

/// Convenience wrapper that reruns the forward pass before the reverse pass.
pub fn backprop(
    params: &MlpParams,
    x: &Tensor,
    upstream: &Tensor,
    want_input_grad: bool,
) -> Result<GradBundle> {
    let trace = mlp_forward_trace(params, x)?;
    backprop_trace(params, &trace, upstream, want_input_grad)
}

/// Central-difference gradient of an arbitrary scalar loss over every
/// parameter coordinate. This is the testing oracle for [`backprop`]; it never
/// touches the reverse-mode path.
pub fn finite_diff_grad(
    loss: impl Fn(&MlpParams) -> f64,
    params: &MlpParams,
    h: f64,
) -> Result<GradBundle> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let mut grads = GradBundle::zeros_like(params);
    let mut probe = params.clone();
    for k in 0..params.layers.len() {
        let (fan_in, fan_out) = (
            params.layers[k].weights.rows(),
            params.layers[k].weights.cols(),
        );
        for i in 0..fan_in {
            for j in 0..fan_out {
                let orig = params.layers[k].weights.at(i, j);
                probe.layers[k].weights.set(i, j, orig + h);
                let up = loss(&probe);
                probe.layers[k].weights.set(i, j, orig - h);
                let down = loss(&probe);
                probe.layers[k].weights.set(i, j, orig);
                grads.layers[k].weights.set(i, j, (up - down) / (2.0 * h));
            }
        }
        for j in 0..fan_out {
            let orig = params.layers[k].bias[j];
            probe.layers[k].bias[j] = orig + h;
            let up = loss(&probe);
            probe.layers[k].bias[j] = orig - h;
            let down = loss(&probe);
            probe.layers[k].bias[j] = orig;
            grads.layers[k].bias[j] = (up - down) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// Central-difference gradient with respect to the entries of an input batch.
pub fn finite_diff_input_grad(
    loss: impl Fn(&Tensor) -> f64,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let orig = x.at(r, c);
            probe.set(r, c, orig + h);
            let up = loss(&probe);
            probe.set(r, c, orig - h);
            let down = loss(&probe);
            probe.set(r, c, orig);
            grad.set(r, c, (up - down) / (2.0 * h));
        }
    }
    Ok(grad)
}

/// Relative-error comparison used by the gradient checks: coordinates where
/// both sides are below `floor` count as matching.
pub fn max_relative_error(a: &GradBundle, b: &GradBundle, floor: f64) -> f64 {
    let mut worst = 0.0_f64;
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        let it = la
            .weights
            .values()
            .iter()
            .chain(&la.bias)
            .zip(lb.weights.values().iter().chain(&lb.bias));
        for (&x, &y) in it {
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = rng_from(&[seed, 0xBA7C4]);
        let values = (0..rows * cols)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        Tensor::new(vec![rows, cols], values).unwrap()
    }

    #[test]
    fn zero_logits_give_uniform_probabilities() {
        // Zero final weights/biases -> softmax of zeros -> 1/L everywhere.
        let mut params = MlpParams::glorot(&[2, 3], 1).unwrap();
        params.layers[0].weights = Tensor::zeros(2, 3);
        let probs = mlp_forward(&params, &random_batch(4, 2, 2)).unwrap();
        for row in probs.iter_rows() {
            for &p in row {
                assert_abs_diff_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn saturated_softmax_hits_limit() {
        // Identity single layer, input [1000, 0] -> probs ~ [1, 0].
        let params = MlpParams {
            layers: vec![Layer {
                weights: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: vec![0.0, 0.0],
            }],
            activation: Activation::Relu,
        };
        let x = Tensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap();
        let probs = mlp_forward(&params, &x).unwrap();
        assert!(probs.at(0, 0) > 1.0 - 1e-12);
        assert!(probs.at(0, 1) < 1e-12);
    }

    #[test]
    fn rows_sum_to_one() {
        let params = MlpParams::glorot(&[2, 16, 3], 7).unwrap();
        let probs = mlp_forward(&params, &random_batch(32, 2, 3)).unwrap();
        for row in probs.iter_rows() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let params = MlpParams::glorot(&[3, 4, 2], 0).unwrap();
        assert!(matches!(
            mlp_forward(&params, &random_batch(2, 2, 0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let params = MlpParams::glorot(&[2, 8, 3], 5).unwrap();
        let x = random_batch(4, 2, 6);
        let upstream = Tensor::zeros(4, 3);
        let g = backprop(&params, &x, &upstream, true).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert_eq!(g.input.unwrap(), Tensor::zeros(4, 2));
    }

    #[test]
    fn backprop_matches_finite_differences_on_cross_entropy() {
        // Cross-entropy head over a random 2-8-3 MLP, oracle h = 1e-5.
        let params = MlpParams::glorot(&[2, 8, 3], 11).unwrap();
        let x = random_batch(5, 2, 12);
        let targets = [0usize, 2, 1, 0, 2];

        let ce = |p: &MlpParams| -> f64 {
            let probs = mlp_forward(p, &x).unwrap();
            -targets
                .iter()
                .enumerate()
                .map(|(r, &t)| probs.at(r, t).max(PROB_FLOOR).ln())
                .sum::<f64>()
                / targets.len() as f64
        };

        let probs = mlp_forward(&params, &x).unwrap();
        let mut upstream = Tensor::zeros(5, 3);
        for (r, &t) in targets.iter().enumerate() {
            let p = probs.at(r, t);
            if p > PROB_FLOOR {
                upstream.set(r, t, -1.0 / (p * targets.len() as f64));
            }
        }
        let analytic = backprop(&params, &x, &upstream, false).unwrap();
        let numeric = finite_diff_grad(ce, &params, 1e-5).unwrap();
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let params = MlpParams::glorot(&[3, 6, 2], 21).unwrap();
        let x = random_batch(3, 3, 22);
        let target = [1usize, 0, 1];

        let ce = |xs: &Tensor| -> f64 {
            let probs = mlp_forward(&params, xs).unwrap();
            -target
                .iter()
                .enumerate()
                .map(|(r, &t)| probs.at(r, t).max(PROB_FLOOR).ln())
                .sum::<f64>()
        };
        let probs = mlp_forward(&params, &x).unwrap();
        let mut upstream = Tensor::zeros(3, 2);
        for (r, &t) in target.iter().enumerate() {
            upstream.set(r, t, -1.0 / probs.at(r, t).max(PROB_FLOOR));
        }
        let analytic = backprop(&params, &x, &upstream, true).unwrap().input.unwrap();
        let numeric = finite_diff_input_grad(ce, &x, 1e-5).unwrap();
        for (a, b) in analytic.values().iter().zip(numeric.values()) {
            let denom = a.abs().max(b.abs()).max(1e-6);
            assert!((a - b).abs() / denom < 1e-4);
        }
    }

    #[test]
    fn kl_input_gradient_vanishes_at_zero_perturbation() {
        // KL(f(x) || f(x + r)) is minimized at r = 0, so the input gradient of
        // the second branch evaluated at the clean input is ~0.
        let params = MlpParams::glorot(&[2, 8, 3], 31).unwrap();
        let x = random_batch(4, 2, 32);
        let probs = mlp_forward(&params, &x).unwrap();
        let mut upstream = Tensor::zeros(4, 3);
        for r in 0..4 {
            for c in 0..3 {
                let a = probs.at(r, c);
                let b = probs.at(r, c); // second branch at r = 0
                upstream.set(r, c, -a / b.max(PROB_FLOOR));
            }
        }
        let g = backprop(&params, &x, &upstream, true).unwrap().input.unwrap();
        let norm: f64 = g.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm at r=0 was {norm}");
    }

    #[test]
    fn finite_diff_on_quadratic_recovers_parameters() {
        let params = MlpParams::glorot(&[2, 4, 2], 41).unwrap();
        let quad = |p: &MlpParams| -> f64 {
            p.layers
                .iter()
                .flat_map(|l| l.weights.values().iter().chain(&l.bias))
                .map(|v| v * v)
                .sum::<f64>()
                / 2.0
        };
        let g = finite_diff_grad(quad, &params, 1e-5).unwrap();
        for (gl, pl) in g.layers.iter().zip(&params.layers) {
            for (gv, pv) in gl.weights.values().iter().zip(pl.weights.values()) {
                assert_abs_diff_eq!(gv, pv, epsilon = 1e-8);
            }
        }

        let constant = |_: &MlpParams| 3.5;
        let g0 = finite_diff_grad(constant, &params, 1e-5).unwrap();
        assert_eq!(g0.max_abs(), 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let params = MlpParams::glorot(&[2, 16, 4], 51).unwrap();
        let x = random_batch(8, 2, 52);
        let a = mlp_forward(&params, &x).unwrap();
        let b = mlp_forward(&params, &x).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn glorot_respects_bounds_and_seeds() {
        let a = MlpParams::glorot(&[4, 8, 3], 9).unwrap();
        let b = MlpParams::glorot(&[4, 8, 3], 9).unwrap();
        assert_eq!(a, b);
        let bound = (6.0 / 12.0_f64).sqrt();
        assert!(a.layers[0]
            .weights
            .values()
            .iter()
            .all(|w| w.abs() <= bound));
        assert!(a.layers[0].bias.iter().all(|&b| b == 0.0));
    }
}
