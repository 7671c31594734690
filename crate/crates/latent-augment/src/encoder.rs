//! Stage 1: train the classifier `f(x) = G(E(x))` on the long-tailed raw
//! dataset with plain cross entropy, then emit the encoded feature set.
//!
//! The trunk `E` maps raw inputs to the latent space the diffusion model
//! operates in; the head `G` is a single linear layer so that stage 3 can
//! re-fit it cheaply while the trunk stays frozen.

use std::time::Instant;

use crate::datasets::{FeatureDataset, FeatureRecord, Provenance};
use crate::error::{Error, Result};
use crate::numeric::{
    softmax_cross_entropy, softmax_rows, Activation, AdamState, Matrix, Mlp, Rng,
};

/// Encoder trunk plus classification head.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    trunk: Mlp,
    head: Mlp,
}

impl EncoderNet {
    /// The head must be a single linear layer whose input matches the trunk
    /// output.
    pub fn new(trunk: Mlp, head: Mlp) -> Result<Self> {
        if head.layers().len() != 1 || head.layers()[0].activation != Activation::Identity {
            return Err(Error::Config(
                "classification head must be a single linear layer".into(),
            ));
        }
        if trunk.output_dim() != head.input_dim() {
            return Err(Error::Shape(format!(
                "trunk output dim {} does not match head input dim {}",
                trunk.output_dim(),
                head.input_dim()
            )));
        }
        Ok(EncoderNet { trunk, head })
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.trunk.output_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    /// Replace the head (used by fine-tuning); the trunk is untouched.
    pub fn with_head(&self, head: Mlp) -> Result<Self> {
        EncoderNet::new(self.trunk.clone(), head)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        use crate::numeric::persist as p;
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        p::write_magic(&mut w)?;
        p::write_u8(&mut w, p::SECTION_TRUNK)?;
        p::write_mlp_block(&mut w, &self.trunk)?;
        p::write_u8(&mut w, p::SECTION_HEAD)?;
        p::write_mlp_block(&mut w, &self.head)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        use crate::numeric::persist as p;
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        p::read_magic(&mut r)?;
        p::expect_section(&mut r, p::SECTION_TRUNK, "trunk")?;
        let trunk = p::read_mlp_block(&mut r)?;
        p::expect_section(&mut r, p::SECTION_HEAD, "head")?;
        let head = p::read_mlp_block(&mut r)?;
        EncoderNet::new(trunk, head)
    }
}

/// Hyperparameters for stage-1 training.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Hidden layer widths of the trunk (relu); the trunk ends with a linear
    /// projection to the latent dim.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Inverted dropout on hidden activations during training; off by
    /// default since tiny nets underfit with heavy dropout.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: vec![64, 64],
            latent_dim: 16,
            epochs: 40,
            lr: 1e-3,
            batch_size: 128,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Per-run training record.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    /// Mean loss per epoch, length = epochs.
    pub losses: Vec<f64>,
    /// Set for classifier training; absent for the noise predictor.
    pub final_train_accuracy: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
    pub wall_time_secs: f64,
}

/// Train `G(E(x))` with minibatch Adam on cross entropy. All randomness
/// (init, shuffling, dropout) is derived from `seed`.
pub fn train_stage1(
    raw: &FeatureDataset,
    cfg: &EncoderConfig,
    seed: u64,
) -> Result<(EncoderNet, TrainReport)> {
    cfg.validate()?;
    if raw.is_empty() {
        return Err(Error::Config("stage-1 training set is empty".into()));
    }
    if raw.records().iter().any(|r| r.provenance != Provenance::Raw) {
        return Err(Error::Config(
            "stage-1 expects a raw dataset (provenance raw)".into(),
        ));
    }
    let counts = raw.class_counts();
    if let Some(k) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Config(format!("class {k} has no samples")));
    }

    let start = Instant::now();
    let root = Rng::new(seed);
    let mut init_rng = root.substream("init");
    let mut dims = Vec::with_capacity(cfg.hidden.len() + 2);
    dims.push(raw.dim());
    dims.extend_from_slice(&cfg.hidden);
    dims.push(cfg.latent_dim);
    let mut acts = vec![Activation::Relu; cfg.hidden.len()];
    acts.push(Activation::Identity); // linear projection into latent space
    let trunk = Mlp::init(&dims, &acts, &mut init_rng)?;
    let head = Mlp::init(
        &[cfg.latent_dim, raw.num_classes()],
        &[Activation::Identity],
        &mut init_rng,
    )?;
    let mut net = EncoderNet::new(trunk, head)?;

    let shapes: Vec<usize> = net
        .trunk
        .param_shapes()
        .into_iter()
        .chain(net.head.param_shapes())
        .collect();
    let mut adam = AdamState::new(cfg.lr, &shapes);

    let features = raw.features_matrix();
    let labels = raw.labels();
    let mut train_rng = root.substream("train");
    let mut order: Vec<usize> = (0..raw.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        train_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Matrix::zeros(chunk.len(), raw.dim());
            let mut batch_labels = Vec::with_capacity(chunk.len());
            for (i, &idx) in chunk.iter().enumerate() {
                batch.row_mut(i).copy_from_slice(features.row(idx));
                batch_labels.push(labels[idx]);
            }
            let dropout = if cfg.dropout > 0.0 {
                Some((cfg.dropout, &mut train_rng))
            } else {
                None
            };
            let trunk_cache = net.trunk.forward_cached(&batch, dropout)?;
            let head_cache = net.head.forward_cached(trunk_cache.output(), None)?;
            let (loss, dlogits) = softmax_cross_entropy(head_cache.output(), &batch_labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            epoch_loss += loss * chunk.len() as f64;
            let (head_grads, dlatent) = net.head.backward(&head_cache, &dlogits)?;
            let (trunk_grads, _) = net.trunk.backward(&trunk_cache, &dlatent)?;

            let mut params = net.trunk.param_slices_mut();
            params.extend(net.head.param_slices_mut());
            let mut grads: Vec<&[f64]> = Vec::with_capacity(params.len());
            for (w, b) in trunk_grads.d_weights.iter().zip(&trunk_grads.d_biases) {
                grads.push(w.data());
                grads.push(b);
            }
            for (w, b) in head_grads.d_weights.iter().zip(&head_grads.d_biases) {
                grads.push(w.data());
                grads.push(b);
            }
            adam.step(&mut params, &grads)?;
        }
        losses.push(epoch_loss / raw.len() as f64);
    }

    let (predicted, _) = classify(&net, &features)?;
    let correct = predicted
        .iter()
        .zip(&labels)
        .filter(|(a, b)| a == b)
        .count();
    let report = TrainReport {
        losses,
        final_train_accuracy: Some(correct as f64 / raw.len() as f64),
        epochs: cfg.epochs,
        seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((net, report))
}

/// Map every raw record through the trunk: record i becomes `(E(x_i), y_i)`
/// with provenance `encoded`, order preserved.
pub fn encode_dataset(net: &EncoderNet, raw: &FeatureDataset) -> Result<FeatureDataset> {
    if raw.dim() != net.input_dim() {
        return Err(Error::Shape(format!(
            "dataset dim {} does not match trunk input dim {}",
            raw.dim(),
            net.input_dim()
        )));
    }
    let encoded_matrix = net.trunk.forward(&raw.features_matrix())?;
    let mut out = FeatureDataset::new(net.latent_dim(), raw.num_classes());
    for (i, r) in raw.records().iter().enumerate() {
        out.push(FeatureRecord {
            features: encoded_matrix.row(i).to_vec(),
            label: r.label,
            provenance: Provenance::Encoded,
        })?;
    }
    Ok(out)
}

/// Predicted labels (argmax, ties to the lowest index) and softmax scores.
pub fn classify(net: &EncoderNet, batch: &Matrix) -> Result<(Vec<u32>, Matrix)> {
    let logits = net.head.forward(&net.trunk.forward(batch)?)?;
    let scores = softmax_rows(&logits);
    let labels = (0..scores.rows())
        .map(|r| {
            let row = scores.row(r);
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect();
    Ok((labels, scores))
}
