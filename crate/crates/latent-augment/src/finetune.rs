//! Stage 3: fine-tune the classification head on encoded plus generated
//! features with the gamma-weighted objective
//!
//! ```text
//! L = mean_ce(encoded) + gamma * mean_ce(generated)
//! ```
//!
//! The two expectations are realized as per-sample weights inside shuffled
//! mixed minibatches: an encoded sample carries weight 1/N_e, a generated
//! one gamma/N_g, and each batch is scaled by N/|B| so the minibatch
//! gradient is an unbiased estimator of the full objective. The trunk is
//! never touched.

use crate::datasets::{FeatureDataset, Provenance};
use crate::encoder::EncoderNet;
use crate::error::{Error, Result};
use crate::numeric::{softmax_cross_entropy, softmax_cross_entropy_weighted, AdamState, Matrix, Rng};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    /// Weight of the generated-feature cross-entropy term.
    pub gamma: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            gamma: 0.05,
            epochs: 100,
            lr: 5e-4,
            batch_size: 128,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Config(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Loss curve and settings of a fine-tuning run. Contains no wall-clock
/// data, so report bytes are stable across reruns.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FinetuneReport {
    pub gamma: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Weighted objective per epoch (exact full-epoch value under the
    /// evolving parameters).
    pub losses: Vec<f64>,
    pub encoded_count: usize,
    pub generated_count: usize,
}

/// The full-batch fine-tuning objective: mean cross entropy over encoded
/// logits plus gamma times mean cross entropy over generated logits. An
/// empty generated set contributes zero.
pub fn loss_ft(
    logits_encoded: &Matrix,
    labels_encoded: &[u32],
    logits_generated: &Matrix,
    labels_generated: &[u32],
    gamma: f64,
) -> Result<f64> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::Config(format!("gamma must be >= 0, got {gamma}")));
    }
    let mut total = 0.0;
    if logits_encoded.rows() > 0 {
        let (ce, _) = softmax_cross_entropy(logits_encoded, labels_encoded)?;
        total += ce;
    } else if !labels_encoded.is_empty() {
        return Err(Error::Shape("encoded labels without logits".into()));
    }
    if logits_generated.rows() > 0 {
        let (ce, _) = softmax_cross_entropy(logits_generated, labels_generated)?;
        total += gamma * ce;
    } else if !labels_generated.is_empty() {
        return Err(Error::Shape("generated labels without logits".into()));
    }
    Ok(total)
}

/// Fine-tune the head on a mixed encoded/generated latent dataset, starting
/// from the current head. Returns the updated network and the loss curve;
/// the trunk is bit-identical to the input's.
pub fn finetune_head(
    net: &EncoderNet,
    mixed: &FeatureDataset,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(EncoderNet, FinetuneReport)> {
    cfg.validate()?;
    if mixed.is_empty() {
        return Err(Error::Config("fine-tuning set is empty".into()));
    }
    if mixed.dim() != net.latent_dim() {
        return Err(Error::Shape(format!(
            "mixed dataset dim {} does not match latent dim {}",
            mixed.dim(),
            net.latent_dim()
        )));
    }
    if mixed.num_classes() != net.num_classes() {
        return Err(Error::Shape(format!(
            "mixed dataset has {} classes, head expects {}",
            mixed.num_classes(),
            net.num_classes()
        )));
    }
    if mixed
        .records()
        .iter()
        .any(|r| r.provenance == Provenance::Raw)
    {
        return Err(Error::Config(
            "fine-tuning expects latent features (encoded or generated), found raw records".into(),
        ));
    }

    let n_total = mixed.len();
    let n_encoded = mixed.count_with_provenance(Provenance::Encoded);
    let n_generated = n_total - n_encoded;
    // Per-record weight: each set's term is its own mean, scaled by gamma
    // for the generated one.
    let weight_of = |p: Provenance| -> f64 {
        match p {
            Provenance::Encoded => 1.0 / n_encoded as f64,
            Provenance::Generated => cfg.gamma / n_generated as f64,
            Provenance::Raw => unreachable!(),
        }
    };

    let features = mixed.features_matrix();
    let labels = mixed.labels();
    let mut head = net.head().clone();
    let mut adam = AdamState::new(cfg.lr, &head.param_shapes());
    let mut rng = Rng::new(seed).substream("train");
    let mut order: Vec<usize> = (0..n_total).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut batch = Matrix::zeros(b, mixed.dim());
            let mut batch_labels = Vec::with_capacity(b);
            let mut weights = Vec::with_capacity(b);
            let scale = n_total as f64 / b as f64;
            for (i, &idx) in chunk.iter().enumerate() {
                batch.row_mut(i).copy_from_slice(features.row(idx));
                batch_labels.push(labels[idx]);
                weights.push(weight_of(mixed.records()[idx].provenance) * scale);
            }
            let cache = head.forward_cached(&batch, None)?;
            let (loss, dlogits) =
                softmax_cross_entropy_weighted(cache.output(), &batch_labels, &weights)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            // Batch losses are N/|B|-scaled unbiased estimates; averaging
            // them weighted by |B|/N reconstructs the epoch objective.
            epoch_loss += loss * b as f64 / n_total as f64;
            let (grads, _) = head.backward(&cache, &dlogits)?;
            let mut params = head.param_slices_mut();
            let mut grad_slices: Vec<&[f64]> = Vec::with_capacity(params.len());
            for (w, bias) in grads.d_weights.iter().zip(&grads.d_biases) {
                grad_slices.push(w.data());
                grad_slices.push(bias);
            }
            adam.step(&mut params, &grad_slices)?;
        }
        losses.push(epoch_loss);
    }

    let report = FinetuneReport {
        gamma: cfg.gamma,
        epochs: cfg.epochs,
        seed,
        losses,
        encoded_count: n_encoded,
        generated_count: n_generated,
    };
    Ok((net.with_head(head)?, report))
}
