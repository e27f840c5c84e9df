//! Fast Gradient Method adversarial training.
//!
//! For a sentence with concatenated normalized input embeddings `s` (layout
//! `[words..., chars...]`, total dimension `D`), the worst-case bounded
//! perturbation is approximated in one gradient computation:
//! `eta = epsilon * g / ||g||_2` with `g = grad_s L(theta_hat; s, y)` and
//! `epsilon = alpha * sqrt(D)`, the norm made adaptive to the sentence's
//! input dimension. Training minimizes the mixture
//! `gamma * L(s) + (1 - gamma) * L(s + eta)`; `eta` is a constant in the
//! backward pass, and the adversarial pass reuses the clean pass's dropout
//! masks so the perturbation targets the sub-network it was computed
//! against.

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::model::{GradientSet, ModelError, ModelStats, TaggerModel};
use crate::network::{DropoutMasks, EncodeOutput};

/// Threshold under which a gradient is treated as zero and no perturbation
/// is generated.
pub const ZERO_GRADIENT_NORM: f64 = 1e-12;

/// Adversarial-training knobs: `alpha` scales the perturbation norm
/// (`epsilon = alpha * sqrt(D)`), `gamma` weights the clean loss in the
/// mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub enabled: bool,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig { alpha: 0.05, gamma: 0.5, enabled: false }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha >= 0.0) {
            return Err(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        Ok(())
    }
}

/// A realized input perturbation and the gradient it came from.
#[derive(Debug, Clone)]
pub struct Perturbation {
    /// The perturbation vector, same layout as the input leaves.
    pub eta: Vec<f64>,
    /// The source gradient `g`.
    pub gradient: Vec<f64>,
    /// Realized norm `alpha * sqrt(D)` (0 when the gradient vanished).
    pub epsilon: f64,
    /// Sentence input dimension `D`.
    pub dim: usize,
    /// Set when `||g||_2 < ZERO_GRADIENT_NORM`; `eta` is zero then.
    pub zero_gradient: bool,
}

/// Concatenates the gradients of every input leaf of one encode output, in
/// the fixed `[words..., chars...]` layout.
pub fn extract_input_gradient(grads: &Gradients, encode: &EncodeOutput) -> Vec<f64> {
    let mut g = Vec::with_capacity(encode.input_dim);
    for leaf in encode.leaves() {
        g.extend_from_slice(grads.leaf(leaf.node).data());
    }
    debug_assert_eq!(g.len(), encode.input_dim);
    g
}

/// `g = grad_s L(theta_hat; s, y)` for one sentence, parameters fixed.
pub fn input_gradient(
    model: &TaggerModel,
    sentence: &crate::data::Sentence,
    masks: &DropoutMasks,
    stats: &ModelStats,
) -> Result<Vec<f64>, ModelError> {
    let fwd = model.forward_loss(sentence, masks, stats, None)?;
    let grads = fwd.tape.backward(fwd.loss)?;
    Ok(extract_input_gradient(&grads, &fwd.encode))
}

/// `eta = epsilon * g / ||g||_2` with `epsilon = alpha * sqrt(dim)`.
/// A vanishing gradient yields a zero perturbation with the flag set
/// instead of an error.
pub fn fgm_perturbation(g: &[f64], alpha: f64, dim: usize) -> Perturbation {
    assert_eq!(g.len(), dim, "gradient length must equal the input dimension");
    assert!(alpha >= 0.0, "alpha must be nonnegative");
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < ZERO_GRADIENT_NORM {
        return Perturbation {
            eta: vec![0.0; dim],
            gradient: g.to_vec(),
            epsilon: 0.0,
            dim,
            zero_gradient: true,
        };
    }
    let epsilon = alpha * (dim as f64).sqrt();
    let scale = epsilon / norm;
    Perturbation {
        eta: g.iter().map(|v| v * scale).collect(),
        gradient: g.to_vec(),
        epsilon,
        dim,
        zero_gradient: false,
    }
}

/// Everything the trainer needs from one adversarial example.
#[derive(Debug)]
pub struct AdversarialOutcome {
    pub clean_loss: f64,
    /// Loss on the perturbed input; absent when the zero-gradient fallback
    /// trained on the clean loss only.
    pub adversarial_loss: Option<f64>,
    /// The mixture `gamma * clean + (1 - gamma) * adversarial`.
    pub mixed_loss: f64,
    pub perturbation: Perturbation,
    pub gradients: GradientSet,
}

/// Builds the adversarial training loss for one sentence.
///
/// One tape carries both passes: the clean loss is built and swept once to
/// obtain `g` against the current parameters, then the perturbed forward
/// pass is appended (same dropout masks, same parameter leaves) and swept
/// from its own root. The mixture gradient is formed per component as
/// `gamma * grad_clean + (1 - gamma) * grad_adv`, which equals the backward
/// pass of the mixed loss and keeps `alpha = 0` bit-identical to baseline
/// training. `eta` enters as a constant, so no gradient flows through the
/// perturbation itself. Sentences with vanishing input gradient train on
/// the clean loss alone.
pub fn adversarial_loss(
    model: &TaggerModel,
    sentence: &crate::data::Sentence,
    masks: &DropoutMasks,
    stats: &ModelStats,
    cfg: &AdvConfig,
) -> Result<AdversarialOutcome, ModelError> {
    debug_assert!(cfg.enabled, "adversarial_loss called with adversarial training disabled");
    let mut fwd = model.forward_loss(sentence, masks, stats, None)?;
    let clean_loss = fwd.loss_value();

    let clean_grads = fwd.tape.backward(fwd.loss)?;
    let g = extract_input_gradient(&clean_grads, &fwd.encode);
    let perturbation = fgm_perturbation(&g, cfg.alpha, fwd.encode.input_dim);
    let mut gradients = model.gradient_set(&clean_grads, &fwd.binding, &[&fwd.encode], stats);

    if perturbation.zero_gradient {
        return Ok(AdversarialOutcome {
            clean_loss,
            adversarial_loss: None,
            mixed_loss: clean_loss,
            perturbation,
            gradients,
        });
    }

    let (encode_adv, loss_adv) = model.forward_loss_on(
        &mut fwd.tape,
        &fwd.binding,
        sentence,
        masks,
        stats,
        Some(&perturbation.eta),
    )?;
    let adv_value = fwd.tape.value(loss_adv).item();

    let adv_grads = fwd.tape.backward(loss_adv)?;
    let mut adv_set = model.gradient_set(&adv_grads, &fwd.binding, &[&encode_adv], stats);
    gradients.scale(cfg.gamma);
    adv_set.scale(1.0 - cfg.gamma);
    gradients.add_assign(&adv_set);

    Ok(AdversarialOutcome {
        clean_loss,
        adversarial_loss: Some(adv_value),
        mixed_loss: cfg.gamma * clean_loss + (1.0 - cfg.gamma) * adv_value,
        perturbation,
        gradients,
    })
}
