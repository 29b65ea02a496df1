//! Curiosity losses, the encoder training objectives and the intrinsic reward.
//!
//! Scalar helpers operate on `f64` slices and are the reference definitions.
//! [`objective`] evaluates the batched objective on the networks and
//! accumulates its gradients; [`sample_losses`] evaluates the same per-sample
//! losses without touching any gradient buffer.

use ndarray::{Array1, Array2, Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{CrossmodalHead, CrossmodalMode, ForwardModel, InverseModel, VisualEncoder};
use crate::nn::{Param, Parameters, Scalar};

/// Discriminator probabilities are kept inside `[P_MIN, 1 - P_MIN]`.
pub const P_MIN: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CuriosityConfig {
    /// Weight on the positive (sound) class of the discrimination loss.
    pub positive_weight: f64,
    /// Share of the crossmodal loss in the encoder objective.
    pub crossmodal_weight: f64,
    /// Share of the forward loss in the dynamics loss.
    pub forward_weight: f64,
    /// Share of the crossmodal term in the intrinsic reward.
    pub reward_mix: f64,
    /// Offset inside the reward logarithms.
    pub log_offset: f64,
    /// Steps ahead predicted by the forward model.
    pub horizon: usize,
    pub mode: CrossmodalMode,
}

impl Default for CuriosityConfig {
    fn default() -> Self {
        Self {
            positive_weight: 100.0,
            crossmodal_weight: 0.2,
            forward_weight: 0.5,
            reward_mix: 0.8,
            log_offset: 1.0,
            horizon: 1,
            mode: CrossmodalMode::Discriminator,
        }
    }
}

impl CuriosityConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64, name: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("curiosity.{name} must be in [0, 1], got {v}")))
            }
        };
        unit(self.crossmodal_weight, "crossmodal_weight")?;
        unit(self.forward_weight, "forward_weight")?;
        unit(self.reward_mix, "reward_mix")?;
        if !(self.positive_weight > 0.0) {
            return Err(Error::Config("curiosity.positive_weight must be positive".into()));
        }
        if !(self.log_offset > 0.0) {
            return Err(Error::Config("curiosity.log_offset must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("curiosity.horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-sample (or batch-mean) loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub forward: f64,
    pub inverse: f64,
    /// `beta * forward + (1 - beta) * inverse`.
    pub dynamics: f64,
    /// `None` when no crossmodal head is trained.
    pub crossmodal: Option<f64>,
}

impl LossBreakdown {
    pub fn new(forward: f64, inverse: f64, beta: f64, crossmodal: Option<f64>) -> Self {
        Self {
            forward,
            inverse,
            dynamics: dynamics_loss(forward, inverse, beta),
            crossmodal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntrinsicReward {
    pub crossmodal: f64,
    pub dynamics: f64,
    /// `lambda * crossmodal + (1 - lambda) * dynamics`.
    pub total: f64,
}

fn squared_distance(context: &'static str, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(context, a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Squared Euclidean distance between predicted and actual latents.
pub fn forward_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    squared_distance("forward_loss", pred, target)
}

/// Squared Euclidean distance between predicted and taken actions.
pub fn inverse_loss(pred_action: &[f64], true_action: &[f64]) -> Result<f64> {
    squared_distance("inverse_loss", pred_action, true_action)
}

pub fn crossmodal_regression_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    squared_distance("crossmodal_regression_loss", pred, target)
}

fn check_label(label: u8) -> Result<()> {
    if label > 1 {
        return Err(Error::Domain(format!("label must be 0 or 1, got {label}")));
    }
    Ok(())
}

/// Positive-weighted binary cross entropy, natural log.
pub fn crossmodal_discrimination_loss(pred_prob: f64, label: u8, positive_weight: f64) -> Result<f64> {
    check_label(label)?;
    if !(pred_prob > 0.0 && pred_prob < 1.0) {
        return Err(Error::Domain(format!("probability must be inside (0, 1), got {pred_prob}")));
    }
    Ok(if label == 1 {
        -positive_weight * pred_prob.ln()
    } else {
        -(1.0 - pred_prob).ln()
    })
}

/// Derivative of [`crossmodal_discrimination_loss`] w.r.t. the probability.
pub fn crossmodal_discrimination_grad(pred_prob: f64, label: u8, positive_weight: f64) -> Result<f64> {
    check_label(label)?;
    if !(pred_prob > 0.0 && pred_prob < 1.0) {
        return Err(Error::Domain(format!("probability must be inside (0, 1), got {pred_prob}")));
    }
    Ok(if label == 1 {
        -positive_weight / pred_prob
    } else {
        1.0 / (1.0 - pred_prob)
    })
}

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(P_MIN, 1.0 - P_MIN)
}

pub fn dynamics_loss(forward: f64, inverse: f64, beta: f64) -> f64 {
    beta * forward + (1.0 - beta) * inverse
}

/// Pointwise encoder objective without the crossmodal term.
pub fn icm_pointwise(dynamics: f64) -> f64 {
    dynamics
}

/// Pointwise encoder objective mixing in the crossmodal loss with weight `alpha`.
pub fn iscm_pointwise(dynamics: f64, crossmodal: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * dynamics + alpha * crossmodal
}

pub fn intrinsic_reward(crossmodal_loss: f64, dynamics_loss: f64, lambda: f64, epsilon: f64) -> Result<IntrinsicReward> {
    if !(crossmodal_loss >= 0.0) || !(dynamics_loss >= 0.0) {
        return Err(Error::Domain(format!(
            "losses must be non-negative, got crossmodal {crossmodal_loss}, dynamics {dynamics_loss}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("log offset must be positive, got {epsilon}")));
    }
    let crossmodal = (crossmodal_loss + epsilon).ln();
    let dynamics = (dynamics_loss + epsilon).ln();
    Ok(IntrinsicReward {
        crossmodal,
        dynamics,
        total: lambda * crossmodal + (1.0 - lambda) * dynamics,
    })
}

/// Auditory supervision for a batch.
#[derive(Clone, Debug)]
pub enum CrossmodalTargets<T> {
    /// 0/1 sound labels, one per sample.
    Labels(Array1<T>),
    /// `(N, 36)` random audio features.
    Features(Array2<T>),
}

impl<T> CrossmodalTargets<T> {
    fn len(&self) -> usize {
        match self {
            CrossmodalTargets::Labels(l) => l.len(),
            CrossmodalTargets::Features(f) => f.nrows(),
        }
    }
}

/// Curiosity networks trained by the encoder objective.
#[derive(Clone, Debug)]
pub struct CuriosityModels<T> {
    pub encoder: VisualEncoder<T>,
    pub forward: ForwardModel<T>,
    pub inverse: InverseModel<T>,
    /// Absent for the vision-only objective.
    pub crossmodal: Option<CrossmodalHead<T>>,
}

impl<T: Scalar> Parameters<T> for CuriosityModels<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        v.extend(self.forward.params());
        v.extend(self.inverse.params());
        if let Some(c) = &self.crossmodal {
            v.extend(c.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.forward.params_mut());
        v.extend(self.inverse.params_mut());
        if let Some(c) = &mut self.crossmodal {
            v.extend(c.params_mut());
        }
        v
    }
}

/// One batch for the encoder objective.
///
/// `target_latents` are the encodings of the observation `horizon` steps
/// later. They enter the losses as constants.
#[derive(Clone, Debug)]
pub struct CuriosityBatch<T> {
    pub frames: Array4<T>,
    pub actions: Array2<T>,
    pub target_latents: Array2<T>,
    pub crossmodal: Option<CrossmodalTargets<T>>,
}

impl<T: Scalar> CuriosityBatch<T> {
    fn validate(&self) -> Result<usize> {
        let n = self.frames.dim().0;
        if n == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        if self.actions.nrows() != n {
            return Err(Error::shape("curiosity batch actions", n, self.actions.nrows()));
        }
        if self.target_latents.nrows() != n {
            return Err(Error::shape("curiosity batch targets", n, self.target_latents.nrows()));
        }
        if let Some(t) = &self.crossmodal {
            if t.len() != n {
                return Err(Error::shape("curiosity batch crossmodal targets", n, t.len()));
            }
        }
        Ok(n)
    }
}

/// Which encoder objective to optimize.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// Mean dynamics loss.
    Icm { forward_weight: f64 },
    /// Mean of `(1 - alpha) * dynamics + alpha * crossmodal`.
    Iscm {
        forward_weight: f64,
        crossmodal_weight: f64,
        positive_weight: f64,
    },
}

impl Objective {
    pub fn from_config(config: &CuriosityConfig, with_crossmodal: bool) -> Self {
        if with_crossmodal {
            Objective::Iscm {
                forward_weight: config.forward_weight,
                crossmodal_weight: config.crossmodal_weight,
                positive_weight: config.positive_weight,
            }
        } else {
            Objective::Icm {
                forward_weight: config.forward_weight,
            }
        }
    }

    fn forward_weight(&self) -> f64 {
        match *self {
            Objective::Icm { forward_weight } | Objective::Iscm { forward_weight, .. } => forward_weight,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveOutput {
    /// Batch-mean objective.
    pub value: f64,
    pub mean: LossBreakdown,
    pub per_sample: Vec<LossBreakdown>,
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().expect("finite scalar")
}

fn row_sq_dist<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> Vec<f64> {
    a.outer_iter()
        .zip(b.outer_iter())
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(&p, &q)| to_f64(p - q).powi(2)).sum())
        .collect()
}

/// Per-sample crossmodal losses and, when requested, the gradient of
/// `sum_i w * loss_i` w.r.t. the head output.
fn crossmodal_terms<T: Scalar>(
    pred: &Array2<T>,
    targets: &CrossmodalTargets<T>,
    positive_weight: f64,
    grad_scale: Option<f64>,
) -> Result<(Vec<f64>, Option<Array2<T>>)> {
    match targets {
        CrossmodalTargets::Labels(labels) => {
            if pred.ncols() != 1 {
                return Err(Error::shape("discriminator output", 1, pred.ncols()));
            }
            let mut losses = Vec::with_capacity(labels.len());
            let mut grad = grad_scale.map(|_| Array2::zeros(pred.dim()));
            for (i, &y) in labels.iter().enumerate() {
                let label = if y > T::from_f64_lossy(0.5) { 1 } else { 0 };
                // Clamp on the value; the gradient passes straight through it.
                let p = clamp_probability(to_f64(pred[[i, 0]]));
                losses.push(crossmodal_discrimination_loss(p, label, positive_weight)?);
                if let (Some(g), Some(w)) = (grad.as_mut(), grad_scale) {
                    let d = crossmodal_discrimination_grad(p, label, positive_weight)?;
                    g[[i, 0]] = T::from_f64_lossy(w * d);
                }
            }
            Ok((losses, grad))
        }
        CrossmodalTargets::Features(features) => {
            if pred.dim() != features.dim() {
                return Err(Error::shape("regressor output", format!("{:?}", features.dim()), format!("{:?}", pred.dim())));
            }
            let losses = row_sq_dist(pred.view(), features.view());
            let grad = grad_scale.map(|w| (pred - features) * T::from_f64_lossy(2.0 * w));
            Ok((losses, grad))
        }
    }
}

/// Evaluates the objective on a batch and accumulates its gradient into
/// every curiosity network. Gradients are added to whatever the buffers
/// already hold.
pub fn objective<T: Scalar>(models: &mut CuriosityModels<T>, batch: &CuriosityBatch<T>, objective: Objective) -> Result<ObjectiveOutput> {
    let n = batch.validate()?;
    let beta = objective.forward_weight();
    let alpha = match objective {
        Objective::Icm { .. } => None,
        Objective::Iscm { crossmodal_weight, .. } => Some(crossmodal_weight),
    };
    if alpha.is_some() && (models.crossmodal.is_none() || batch.crossmodal.is_none()) {
        return Err(Error::Config("crossmodal objective needs a crossmodal head and auditory targets".into()));
    }

    let tape = models.encoder.forward_tape(batch.frames.clone())?;
    let s = tape.latent.view();
    let f_tape = models.forward.forward_tape(s, batch.actions.view())?;
    let i_tape = models.inverse.forward_tape(s, batch.target_latents.view())?;
    let forward = row_sq_dist(f_tape.output.view(), batch.target_latents.view());
    let inverse = row_sq_dist(i_tape.output.view(), batch.actions.view());

    let dyn_share = 1.0 - alpha.unwrap_or(0.0);
    let mean_scale = 1.0 / n as f64;

    // d(objective)/d(prediction) for the squared-distance terms is 2 (pred - target) * weight / n.
    let wf = T::from_f64_lossy(2.0 * mean_scale * dyn_share * beta);
    let wi = T::from_f64_lossy(2.0 * mean_scale * dyn_share * (1.0 - beta));
    let df = (&f_tape.output - &batch.target_latents) * wf;
    let di = (&i_tape.output - &batch.actions) * wi;
    let (mut ds, _) = models.forward.backward(&f_tape, df);
    let (ds_inv, _) = models.inverse.backward(&i_tape, di);
    ds += &ds_inv;

    let mut crossmodal = None;
    if let (Some(alpha), Objective::Iscm { positive_weight, .. }) = (alpha, objective) {
        let head = models.crossmodal.as_mut().expect("checked");
        let c_tape = head.forward_tape(s)?;
        let targets = batch.crossmodal.as_ref().expect("checked");
        let (losses, grad) = crossmodal_terms(&c_tape.output, targets, positive_weight, Some(alpha * mean_scale))?;
        let ds_c = head.backward(&c_tape, grad.expect("requested"));
        ds += &ds_c;
        crossmodal = Some(losses);
    }

    models.encoder.backward(&tape, ds.view(), false);

    let per_sample: Vec<LossBreakdown> = (0..n)
        .map(|i| LossBreakdown::new(forward[i], inverse[i], beta, crossmodal.as_ref().map(|c| c[i])))
        .collect();
    let value = per_sample
        .iter()
        .map(|l| match (alpha, l.crossmodal) {
            (Some(a), Some(c)) => iscm_pointwise(l.dynamics, c, a),
            _ => icm_pointwise(l.dynamics),
        })
        .sum::<f64>()
        * mean_scale;
    Ok(ObjectiveOutput {
        value,
        mean: mean_breakdown(&per_sample, beta),
        per_sample,
    })
}

pub fn mean_breakdown(per_sample: &[LossBreakdown], beta: f64) -> LossBreakdown {
    let n = per_sample.len().max(1) as f64;
    let forward = per_sample.iter().map(|l| l.forward).sum::<f64>() / n;
    let inverse = per_sample.iter().map(|l| l.inverse).sum::<f64>() / n;
    let crossmodal = per_sample
        .iter()
        .map(|l| l.crossmodal)
        .sum::<Option<f64>>()
        .map(|c| c / n);
    LossBreakdown::new(forward, inverse, beta, crossmodal)
}

/// Per-sample losses under the current networks, given precomputed latents.
/// Used for rewards; no gradient buffer is touched.
pub fn sample_losses<T: Scalar>(
    models: &CuriosityModels<T>,
    latents: ArrayView2<T>,
    actions: ArrayView2<T>,
    target_latents: ArrayView2<T>,
    crossmodal: Option<&CrossmodalTargets<T>>,
    config: &CuriosityConfig,
) -> Result<Vec<LossBreakdown>> {
    let pred_next = models.forward.predict(latents, actions)?;
    let pred_action = models.inverse.predict(latents, target_latents)?;
    let forward = row_sq_dist(pred_next.view(), target_latents);
    let inverse = row_sq_dist(pred_action.view(), actions);
    let cross = match (&models.crossmodal, crossmodal) {
        (Some(head), Some(targets)) => {
            let pred = head.predict(latents)?;
            Some(crossmodal_terms(&pred, targets, config.positive_weight, None)?.0)
        }
        _ => None,
    };
    Ok((0..latents.nrows())
        .map(|i| LossBreakdown::new(forward[i], inverse[i], config.forward_weight, cross.as_ref().map(|c| c[i])))
        .collect())
}

/// Rewards for a batch of losses. Without a crossmodal term the reward is
/// the dynamics term alone.
pub fn batch_rewards(losses: &[LossBreakdown], config: &CuriosityConfig) -> Result<Vec<IntrinsicReward>> {
    losses
        .iter()
        .map(|l| match l.crossmodal {
            Some(c) => intrinsic_reward(c, l.dynamics, config.reward_mix, config.log_offset),
            None => intrinsic_reward(0.0, l.dynamics, 0.0, config.log_offset),
        })
        .collect()
}

/// Mean of the rows of a reward batch.
pub fn mean_reward(rewards: &[IntrinsicReward]) -> IntrinsicReward {
    let n = rewards.len().max(1) as f64;
    IntrinsicReward {
        crossmodal: rewards.iter().map(|r| r.crossmodal).sum::<f64>() / n,
        dynamics: rewards.iter().map(|r| r.dynamics).sum::<f64>() / n,
        total: rewards.iter().map(|r| r.total).sum::<f64>() / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn squared_losses() {
        let mut d = vec![0.0; 50];
        d[0] = 1.0;
        d[1] = 2.0;
        assert_eq!(forward_loss(&d, &[0.0; 50]).unwrap(), 5.0);
        assert_eq!(forward_loss(&d, &d).unwrap(), 0.0);
        assert_eq!(inverse_loss(&[0.5, 0.5], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(inverse_loss(&[-0.5, -0.5], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(crossmodal_regression_loss(&[1.0; 36], &[0.0; 36]).unwrap(), 36.0);
        assert!(forward_loss(&[0.0; 3], &[0.0; 2]).is_err());
    }

    #[test]
    fn discrimination_loss_values() {
        assert_abs_diff_eq!(crossmodal_discrimination_loss(0.5, 1, 100.0).unwrap(), 69.314718, epsilon = 1e-5);
        assert_abs_diff_eq!(crossmodal_discrimination_loss(0.5, 0, 100.0).unwrap(), 0.693147, epsilon = 1e-6);
        assert!(crossmodal_discrimination_loss(1.0 - 1e-12, 1, 100.0).unwrap() < 1e-9);
        assert!(matches!(crossmodal_discrimination_loss(0.0, 1, 1.0), Err(Error::Domain(_))));
        assert!(matches!(crossmodal_discrimination_loss(1.0, 0, 1.0), Err(Error::Domain(_))));
        assert!(crossmodal_discrimination_loss(0.5, 2, 1.0).is_err());
    }

    #[test]
    fn discrimination_grad_is_minus_weight_over_p() {
        for &p in &[0.01, 0.2, 0.5, 0.93] {
            assert_abs_diff_eq!(crossmodal_discrimination_grad(p, 1, 100.0).unwrap(), -100.0 / p, epsilon = 1e-9);
        }
    }

    #[test]
    fn dynamics_mix() {
        assert_eq!(dynamics_loss(2.0, 4.0, 0.5), 3.0);
        assert_eq!(dynamics_loss(2.0, 4.0, 1.0), 2.0);
        assert_eq!(dynamics_loss(2.0, 4.0, 0.0), 4.0);
        assert_abs_diff_eq!(iscm_pointwise(3.0, 69.3147, 0.2), 16.26294, epsilon = 1e-5);
        assert_eq!(iscm_pointwise(3.0, 69.3147, 0.0), icm_pointwise(3.0));
    }

    #[test]
    fn reward_values() {
        let r = intrinsic_reward(0.5, 0.1, 0.8, 1.0).unwrap();
        assert_abs_diff_eq!(r.total, 0.8 * 1.5f64.ln() + 0.2 * 1.1f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.total, 0.34343, epsilon = 1e-5);
        let z = intrinsic_reward(0.0, 0.0, 0.8, 1.0).unwrap();
        assert_eq!((z.crossmodal, z.dynamics, z.total), (0.0, 0.0, 0.0));
        let icm = intrinsic_reward(3.0, 0.7, 0.0, 1.0).unwrap();
        assert_eq!(icm.total, icm.dynamics);
        assert!(matches!(intrinsic_reward(-0.1, 0.0, 0.5, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn config_ranges() {
        CuriosityConfig::default().validate().unwrap();
        let bad = CuriosityConfig {
            crossmodal_weight: 1.5,
            ..CuriosityConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CuriosityConfig {
            horizon: 0,
            ..CuriosityConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
