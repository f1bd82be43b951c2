//! The loss surface: bag-level proportion cross-entropy, instance-level
//! consistency terms (Gaussian-noise and virtual-adversarial variants), the
//! exponential ramp-up weight, and the combined objective with its exact
//! parameter gradient.
//!
//! Perturbations are planned before differentiation: a [`ConsistencyPlan`]
//! freezes the perturbed inputs (and, under the stop-gradient convention, the
//! clean-branch target distributions) so the analytic gradient and any
//! finite-difference probe differentiate exactly the same function of the
//! parameters.

use crate::bagging::check_simplex;
use crate::error::{Error, Result};
use crate::mlp::{
    backprop_trace, mlp_forward, mlp_forward_trace, GradBundle, MlpParams, PROB_FLOOR,
};
use crate::rng::{self, derive_seed, random_unit_vector, rng_from, standard_normal};
use crate::tensor::{norm, Tensor};
use serde::{Deserialize, Serialize};

/// Which consistency term the combined loss carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyKind {
    #[default]
    None,
    PiModel,
    Vat,
}

/// Consistency hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySpec {
    pub kind: ConsistencyKind,
    /// Maximum consistency weight reached after ramp-up.
    pub alpha: f64,
    /// Gaussian noise std for the Pi-model perturbation.
    pub sigma: f64,
    /// Perturbation radius for the adversarial direction.
    pub epsilon: f64,
    /// Finite-difference scale of the power iteration.
    pub xi: f64,
    pub power_iters: usize,
    /// Epochs over which the weight ramps up to `alpha`.
    pub rampup_epochs: usize,
    /// When true (the default), gradients do not flow through the
    /// clean-branch target of the consistency distance.
    pub stop_grad_clean: bool,
}

impl Default for ConsistencySpec {
    fn default() -> Self {
        Self::none()
    }
}

impl ConsistencySpec {
    pub fn none() -> Self {
        Self {
            kind: ConsistencyKind::None,
            alpha: 0.0,
            sigma: 0.0,
            epsilon: 1.0,
            xi: 1e-6,
            power_iters: 1,
            rampup_epochs: 0,
            stop_grad_clean: true,
        }
    }

    pub fn pi_model(alpha: f64, sigma: f64, rampup_epochs: usize) -> Self {
        Self {
            kind: ConsistencyKind::PiModel,
            alpha,
            sigma,
            rampup_epochs,
            ..Self::none()
        }
    }

    pub fn vat(alpha: f64, epsilon: f64, rampup_epochs: usize) -> Self {
        Self {
            kind: ConsistencyKind::Vat,
            alpha,
            epsilon,
            rampup_epochs,
            ..Self::none()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::InvalidArgument("alpha must be >= 0".into()));
        }
        match self.kind {
            ConsistencyKind::Vat => {
                if self.epsilon <= 0.0 {
                    return Err(Error::InvalidArgument("epsilon must be > 0".into()));
                }
                if self.xi <= 0.0 {
                    return Err(Error::InvalidArgument("xi must be > 0".into()));
                }
                if self.power_iters == 0 {
                    return Err(Error::InvalidArgument("power_iters must be >= 1".into()));
                }
            }
            ConsistencyKind::PiModel => {
                if self.sigma < 0.0 {
                    return Err(Error::InvalidArgument("sigma must be >= 0".into()));
                }
            }
            ConsistencyKind::None => {}
        }
        Ok(())
    }
}

/// Clamp to `>= PROB_FLOOR` and renormalize onto the simplex.
fn clamp_renormalize(p: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = p.iter().map(|&v| v.max(PROB_FLOOR)).collect();
    let z: f64 = clamped.iter().sum();
    clamped.into_iter().map(|v| v / z).collect()
}

/// KL divergence between clamped+renormalized distributions.
fn kl_clamped(a: &[f64], b: &[f64]) -> f64 {
    let a = clamp_renormalize(a);
    let b = clamp_renormalize(b);
    a.iter()
        .zip(&b)
        .map(|(&ai, &bi)| ai * (ai.ln() - bi.ln()))
        .sum()
}

/// Cross-entropy between a true proportion label and an estimated one,
/// with the estimate clamped before the logarithm. Equals the instance
/// cross-entropy when the bag holds a single example.
pub fn proportion_loss(p: &[f64], p_hat: &[f64]) -> Result<f64> {
    check_simplex(p)?;
    check_simplex(p_hat)?;
    if p.len() != p_hat.len() {
        return Err(Error::Shape("proportion length mismatch".into()));
    }
    Ok(-p
        .iter()
        .zip(p_hat)
        .map(|(&pi, &qi)| pi * qi.max(PROB_FLOOR).ln())
        .sum::<f64>())
}

/// `w(t) = alpha * exp(-5 (1 - min(t, T_r)/T_r)^2)`, plateauing at `alpha`
/// once `t >= T_r`. With `T_r = 0` the weight is `alpha` from the start.
pub fn rampup_weight(epoch: usize, spec: &ConsistencySpec) -> f64 {
    if spec.rampup_epochs == 0 || epoch >= spec.rampup_epochs {
        return spec.alpha;
    }
    let frac = epoch as f64 / spec.rampup_epochs as f64;
    spec.alpha * (-5.0 * (1.0 - frac) * (1.0 - frac)).exp()
}

/// An adversarial direction for one instance.
#[derive(Debug, Clone)]
pub struct VatPerturbation {
    /// Direction scaled to norm `epsilon`.
    pub r_adv: Vec<f64>,
    /// True when a vanishing gradient forced the random-direction fallback.
    pub fallback: bool,
}

/// Approximates `argmax_{||r|| <= epsilon} KL(f(x) || f(x + r))` by power
/// iteration: starting from a random unit direction, repeatedly move to the
/// normalized input-gradient of the KL evaluated at `x + xi * d`.
pub fn vat_perturbation(
    params: &MlpParams,
    x: &[f64],
    epsilon: f64,
    xi: f64,
    power_iters: usize,
    seed: u64,
) -> Result<VatPerturbation> {
    if epsilon <= 0.0 || xi <= 0.0 {
        return Err(Error::InvalidArgument(
            "epsilon and xi must be positive".into(),
        ));
    }
    if power_iters == 0 {
        return Err(Error::InvalidArgument("power_iters must be >= 1".into()));
    }
    let row = Tensor::new(vec![1, x.len()], x.to_vec())?;
    let clean = mlp_forward(params, &row)?;
    let mut rng = rng_from(&[seed, rng::tag::PERTURB]);
    let mut d = random_unit_vector(x.len(), &mut rng);
    let mut fallback = false;
    for _ in 0..power_iters {
        let probe_vals: Vec<f64> = x.iter().zip(&d).map(|(&xv, &dv)| xv + xi * dv).collect();
        let probe = Tensor::new(vec![1, x.len()], probe_vals)?;
        let trace = mlp_forward_trace(params, &probe)?;
        let upstream = kl_upstream_perturbed(clean.row(0), trace.probs().row(0), 1.0);
        let grad = backprop_trace(params, &trace, &upstream, true)?
            .input
            .expect("input gradient requested");
        let g = grad.row(0);
        let g_norm = norm(g);
        if g_norm < 1e-30 {
            fallback = true;
            break;
        }
        d = g.iter().map(|&v| v / g_norm).collect();
    }
    Ok(VatPerturbation {
        r_adv: d.into_iter().map(|v| v * epsilon).collect(),
        fallback,
    })
}

/// Upstream gradient of `KL(a' || b')` with respect to the raw second-branch
/// probabilities `b`, where both sides are clamped and renormalized.
fn kl_upstream_perturbed(a: &[f64], b: &[f64], scale: f64) -> Tensor {
    let a_n = clamp_renormalize(a);
    let z_b: f64 = b.iter().map(|&v| v.max(PROB_FLOOR)).sum();
    let b_n = clamp_renormalize(b);
    let vals: Vec<f64> = b
        .iter()
        .zip(a_n.iter().zip(&b_n))
        .map(|(&raw, (&ai, &bi))| {
            if raw > PROB_FLOOR {
                scale * (1.0 - ai / bi) / z_b
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(vec![1, b.len()], vals).unwrap()
}

/// Precomputed perturbation state for one batch. Holding it fixed makes the
/// combined loss an ordinary differentiable function of the parameters.
#[derive(Debug, Clone)]
pub struct ConsistencyPlan {
    /// Perturbed copy of the batch; `None` when no consistency term applies.
    pub perturbed: Option<Tensor>,
    /// Clean-branch probabilities captured at plan time when the
    /// stop-gradient convention is active.
    pub frozen_clean: Option<Tensor>,
    /// Instances whose adversarial direction fell back to the random start.
    pub vat_fallbacks: usize,
}

impl ConsistencyPlan {
    pub fn empty() -> Self {
        Self {
            perturbed: None,
            frozen_clean: None,
            vat_fallbacks: 0,
        }
    }
}

/// Draws perturbations for a batch under the given spec.
pub fn plan_consistency(
    params: &MlpParams,
    x: &Tensor,
    spec: &ConsistencySpec,
    seed: u64,
) -> Result<ConsistencyPlan> {
    spec.validate()?;
    let perturbed = match spec.kind {
        ConsistencyKind::None => None,
        ConsistencyKind::PiModel => {
            let mut rng = rng_from(&[seed, rng::tag::PERTURB]);
            let mut noisy = x.clone();
            for r in 0..noisy.rows() {
                for v in noisy.row_mut(r) {
                    *v += spec.sigma * standard_normal(&mut rng);
                }
            }
            Some(noisy)
        }
        ConsistencyKind::Vat => {
            let mut adv = x.clone();
            let mut fallbacks = 0;
            for r in 0..x.rows() {
                let p = vat_perturbation(
                    params,
                    x.row(r),
                    spec.epsilon,
                    spec.xi,
                    spec.power_iters,
                    derive_seed(&[seed, r as u64]),
                )?;
                if p.fallback {
                    fallbacks += 1;
                }
                for (v, dr) in adv.row_mut(r).iter_mut().zip(&p.r_adv) {
                    *v += dr;
                }
            }
            let frozen = if spec.stop_grad_clean {
                Some(mlp_forward(params, x)?)
            } else {
                None
            };
            return Ok(ConsistencyPlan {
                perturbed: Some(adv),
                frozen_clean: frozen,
                vat_fallbacks: fallbacks,
            });
        }
    };
    let frozen_clean = match (&perturbed, spec.stop_grad_clean) {
        (Some(_), true) => Some(mlp_forward(params, x)?),
        _ => None,
    };
    Ok(ConsistencyPlan {
        perturbed,
        frozen_clean,
        vat_fallbacks: 0,
    })
}

fn consistency_distance(kind: ConsistencyKind, a: &[f64], b: &[f64]) -> f64 {
    match kind {
        ConsistencyKind::None => 0.0,
        ConsistencyKind::PiModel => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = x - y;
                d * d
            })
            .sum(),
        ConsistencyKind::Vat => kl_clamped(a, b),
    }
}

/// Mean consistency distance over the batch using the plan's perturbations.
/// The clean-branch target is the frozen copy when the plan holds one,
/// otherwise the current clean forward pass.
pub fn consistency_value(
    params: &MlpParams,
    x: &Tensor,
    spec: &ConsistencySpec,
    plan: &ConsistencyPlan,
) -> Result<f64> {
    let Some(perturbed) = &plan.perturbed else {
        return Ok(0.0);
    };
    let clean_owned;
    let clean = match &plan.frozen_clean {
        Some(f) => f,
        None => {
            clean_owned = mlp_forward(params, x)?;
            &clean_owned
        }
    };
    let pert = mlp_forward(params, perturbed)?;
    let n = x.rows() as f64;
    Ok(clean
        .iter_rows()
        .zip(pert.iter_rows())
        .map(|(a, b)| consistency_distance(spec.kind, a, b))
        .sum::<f64>()
        / n)
}

/// Mean over instances of `||f(x) - f(x + n)||^2` with Gaussian input noise;
/// the clean branch is treated as constant for gradients.
pub fn pi_consistency(params: &MlpParams, x: &Tensor, sigma: f64, seed: u64) -> Result<f64> {
    let spec = ConsistencySpec::pi_model(1.0, sigma, 0);
    let plan = plan_consistency(params, x, &spec, seed)?;
    consistency_value(params, x, &spec, &plan)
}

/// Mean over instances of `KL(f(x) || f(x + r_adv))`.
pub fn vat_consistency(
    params: &MlpParams,
    x: &Tensor,
    spec: &ConsistencySpec,
    seed: u64,
) -> Result<f64> {
    if spec.kind != ConsistencyKind::Vat {
        return Err(Error::InvalidArgument(
            "vat_consistency requires a VAT spec".into(),
        ));
    }
    let plan = plan_consistency(params, x, spec, seed)?;
    consistency_value(params, x, spec, &plan)
}

/// The combined objective `L_prop + w * L_cons` for one bag, evaluated
/// against a fixed plan. Returns the loss value and its exact gradient.
pub fn combined_loss_planned(
    params: &MlpParams,
    bag_x: &Tensor,
    p: &[f64],
    weight: f64,
    spec: &ConsistencySpec,
    plan: &ConsistencyPlan,
) -> Result<(f64, GradBundle)> {
    if bag_x.rows() == 0 {
        return Err(Error::InvalidArgument("empty bag".into()));
    }
    check_simplex(p)?;
    let n = bag_x.rows();
    let classes = params.output_dim();
    if p.len() != classes {
        return Err(Error::Shape(format!(
            "proportion has {} entries, classifier has {} classes",
            p.len(),
            classes
        )));
    }

    let clean_trace = mlp_forward_trace(params, bag_x)?;
    let probs = clean_trace.probs();

    // Estimated proportion label: mean of instance predictions.
    let p_hat = probs.column_means();
    let loss_prop = -p
        .iter()
        .zip(&p_hat)
        .map(|(&pi, &qi)| pi * qi.max(PROB_FLOOR).ln())
        .sum::<f64>();

    // d L_prop / d probs: every row gets (1/n) * dL/dp_hat.
    let mut upstream_clean = Tensor::zeros(n, classes);
    for r in 0..n {
        for (c, u) in upstream_clean.row_mut(r).iter_mut().enumerate() {
            if p_hat[c] > PROB_FLOOR {
                *u = -p[c] / p_hat[c] / n as f64;
            }
        }
    }

    let mut loss = loss_prop;
    let mut grads;

    let active = weight != 0.0 && spec.kind != ConsistencyKind::None && plan.perturbed.is_some();
    if active {
        let perturbed = plan.perturbed.as_ref().unwrap();
        let pert_trace = mlp_forward_trace(params, perturbed)?;
        let pert = pert_trace.probs();
        let target_owned;
        let target = match &plan.frozen_clean {
            Some(f) => f,
            None => {
                target_owned = probs.clone();
                &target_owned
            }
        };

        let mut cons = 0.0;
        let mut upstream_pert = Tensor::zeros(n, classes);
        let scale = weight / n as f64;
        for r in 0..n {
            let a = target.row(r);
            let b = pert.row(r);
            cons += consistency_distance(spec.kind, a, b);
            match spec.kind {
                ConsistencyKind::PiModel => {
                    for (u, (&ai, &bi)) in
                        upstream_pert.row_mut(r).iter_mut().zip(a.iter().zip(b))
                    {
                        *u = scale * 2.0 * (bi - ai);
                    }
                    if !spec.stop_grad_clean {
                        for (u, (&ai, &bi)) in
                            upstream_clean.row_mut(r).iter_mut().zip(a.iter().zip(b))
                        {
                            *u += scale * 2.0 * (ai - bi);
                        }
                    }
                }
                ConsistencyKind::Vat => {
                    let row_up = kl_upstream_perturbed(a, b, scale);
                    upstream_pert
                        .row_mut(r)
                        .copy_from_slice(row_up.row(0));
                    if !spec.stop_grad_clean {
                        add_kl_upstream_clean(upstream_clean.row_mut(r), a, b, scale);
                    }
                }
                ConsistencyKind::None => unreachable!(),
            }
        }
        cons /= n as f64;
        loss += weight * cons;

        grads = backprop_trace(params, &clean_trace, &upstream_clean, false)?;
        let pert_grads = backprop_trace(params, &pert_trace, &upstream_pert, false)?;
        grads.accumulate(1.0, &pert_grads)?;
    } else {
        grads = backprop_trace(params, &clean_trace, &upstream_clean, false)?;
    }

    Ok((loss, grads))
}

/// Gradient of `KL(a' || b')` with respect to the raw clean-branch
/// probabilities `a`, added in place (used when gradients flow through both
/// branches).
fn add_kl_upstream_clean(out: &mut [f64], a: &[f64], b: &[f64], scale: f64) {
    let z_a: f64 = a.iter().map(|&v| v.max(PROB_FLOOR)).sum();
    let a_n = clamp_renormalize(a);
    let b_n = clamp_renormalize(b);
    let kl: f64 = a_n
        .iter()
        .zip(&b_n)
        .map(|(&ai, &bi)| ai * (ai.ln() - bi.ln()))
        .sum();
    for (o, (&raw, (&ai, &bi))) in out.iter_mut().zip(a.iter().zip(a_n.iter().zip(&b_n))) {
        if raw > PROB_FLOOR {
            *o += scale * ((ai.ln() - bi.ln()) - kl) / z_a;
        }
    }
}

/// Loss value only, against the same plan; this is what finite-difference
/// probes evaluate.
pub fn combined_loss_value(
    params: &MlpParams,
    bag_x: &Tensor,
    p: &[f64],
    weight: f64,
    spec: &ConsistencySpec,
    plan: &ConsistencyPlan,
) -> Result<f64> {
    let probs = mlp_forward(params, bag_x)?;
    let p_hat = probs.column_means();
    let loss_prop = -p
        .iter()
        .zip(&p_hat)
        .map(|(&pi, &qi)| pi * qi.max(PROB_FLOOR).ln())
        .sum::<f64>();
    let cons = if weight != 0.0 {
        consistency_value(params, bag_x, spec, plan)?
    } else {
        0.0
    };
    Ok(loss_prop + weight * cons)
}

/// Plans perturbations for the epoch seed and returns the combined loss with
/// its gradient, weighting the consistency term by the ramp-up schedule.
pub fn combined_loss(
    params: &MlpParams,
    bag_x: &Tensor,
    p: &[f64],
    epoch: usize,
    spec: &ConsistencySpec,
    seed: u64,
) -> Result<(f64, GradBundle)> {
    let weight = rampup_weight(epoch, spec);
    let plan = if weight != 0.0 {
        plan_consistency(params, bag_x, spec, seed)?
    } else {
        ConsistencyPlan::empty()
    };
    combined_loss_planned(params, bag_x, p, weight, spec, &plan)
}
