//! Class-weighted negative log-likelihood over softmax outputs.

use std::collections::BTreeMap;

use crate::error::{param_err, shape_err, Result};
use crate::tensor::Tensor;

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Per-class loss weights; classes without an entry weigh 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossConfig {
    weights: BTreeMap<usize, f64>,
}

impl LossConfig {
    pub fn uniform() -> Self {
        Self::default()
    }

    pub fn with_weights(weights: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let weights: BTreeMap<usize, f64> = weights.into_iter().collect();
        if let Some((class, w)) = weights.iter().find(|(_, &w)| !(w > 0.0 && w.is_finite())) {
            return Err(param_err!("class {class} weight must be positive, got {w}"));
        }
        Ok(Self { weights })
    }

    /// Weights used when tuning the output layer to the label frequencies:
    /// healthy 8, edema 2, necrosis / non-enhancing / enhancing 1.
    pub fn second_phase() -> Self {
        Self::with_weights([(0, 8.0), (1, 1.0), (2, 2.0), (3, 1.0), (4, 1.0)]).expect("static weights")
    }

    pub fn weight(&self, class: usize) -> f64 {
        self.weights.get(&class).copied().unwrap_or(1.0)
    }

    pub fn weights(&self) -> &BTreeMap<usize, f64> {
        &self.weights
    }
}

#[derive(Debug, Clone)]
pub struct NllOutput {
    pub loss: f64,
    /// Gradient with respect to the logits that produced `probs`.
    pub grad_logits: Tensor,
    /// Number of target probabilities clamped to [`LOG_CLAMP`].
    pub clamped: usize,
}

/// `loss = -(1/B) sum_i w(y_i) log p_i(y_i)` for a `[B, K]` probability batch.
///
/// The returned gradient is taken through the softmax directly:
/// `w(y_i) (p_i - onehot(y_i)) / B`.
pub fn nll_loss(probs: &Tensor, targets: &[usize], cfg: &LossConfig) -> Result<NllOutput> {
    let (b, k) = match *probs.shape() {
        [k] => (1, k),
        [b, k] => (b, k),
        _ => return Err(shape_err!("nll expects [B, K] probabilities, got {:?}", probs.shape())),
    };
    if targets.len() != b {
        return Err(shape_err!("{} targets for a batch of {b}", targets.len()));
    }
    let mut loss = 0.0;
    let mut clamped = 0;
    let mut grad = probs.clone();
    for (i, &y) in targets.iter().enumerate() {
        if y >= k {
            return Err(param_err!("target {y} outside [0, {k})"));
        }
        let w = cfg.weight(y);
        let p = probs.data()[i * k + y];
        if p < LOG_CLAMP {
            clamped += 1;
        }
        // NaN must survive the clamp so divergence stays visible.
        loss -= w * if p.is_nan() { p } else { p.max(LOG_CLAMP).ln() };
        let row = &mut grad.data_mut()[i * k..(i + 1) * k];
        row[y] -= 1.0;
        row.iter_mut().for_each(|g| *g *= w / b as f64);
    }
    Ok(NllOutput { loss: loss / b as f64, grad_logits: grad, clamped })
}
