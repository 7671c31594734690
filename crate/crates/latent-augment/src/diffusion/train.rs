//! Noise-prediction training for the latent diffusion model.
//!
//! Minimizes the L2 distance between the true perturbation noise and the
//! predicted noise: for each sample in each minibatch a fresh step t is
//! drawn uniformly from {1..T} and a fresh eps from N(0, I), the
//! standardized latent is perturbed in closed form, and the predictor is
//! regressed onto eps.

use std::time::Instant;

use crate::datasets::{FeatureDataset, Provenance};
use crate::diffusion::predictor::{NoisePredictor, PredictorShape, Standardization};
use crate::diffusion::schedule::NoiseSchedule;
use crate::encoder::TrainReport;
use crate::error::{Error, Result};
use crate::numeric::{mse_loss, AdamState, Matrix, MlpGrads, Rng};

/// Stage-2 hyperparameters: schedule, predictor shape, optimizer, sampler.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    /// Forward diffusion steps T.
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(flatten)]
    pub shape: PredictorShape,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Length of the reverse subsequence used at sampling time.
    pub reverse_steps: usize,
    /// Noise scale of the sampler; 0 is the deterministic sampler.
    pub eta: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            num_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            shape: PredictorShape::default(),
            epochs: 200,
            lr: 1e-3,
            batch_size: 128,
            reverse_steps: 500,
            eta: 0.0,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.reverse_steps == 0 || self.reverse_steps > self.num_steps {
            return Err(Error::Config(format!(
                "reverse_steps must be in 1..={}, got {}",
                self.num_steps, self.reverse_steps
            )));
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        Ok(())
    }

    /// The noise schedule these parameters describe.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        crate::diffusion::make_schedule(
            self.num_steps,
            self.beta_start,
            self.beta_end,
            crate::diffusion::ScheduleKind::Linear,
        )
    }
}

/// Train the class-conditional noise predictor on an encoded feature set.
/// Features are standardized per dimension first; the statistics ride along
/// in the returned predictor.
pub fn train_ldm(
    encoded: &FeatureDataset,
    sched: &NoiseSchedule,
    cfg: &DiffusionConfig,
    seed: u64,
) -> Result<(NoisePredictor, TrainReport)> {
    cfg.validate()?;
    if encoded.is_empty() {
        return Err(Error::Config("stage-2 training set is empty".into()));
    }
    if encoded
        .records()
        .iter()
        .any(|r| r.provenance != Provenance::Encoded)
    {
        return Err(Error::Config(
            "stage-2 expects encoded features (provenance encoded)".into(),
        ));
    }
    if sched.num_steps() != cfg.num_steps {
        return Err(Error::Config(format!(
            "schedule has {} steps, config says {}",
            sched.num_steps(),
            cfg.num_steps
        )));
    }

    let start = Instant::now();
    let latent_dim = encoded.dim();
    let raw_features = encoded.features_matrix();
    let standardization = Standardization::fit(&raw_features);
    let mut features = Matrix::zeros(raw_features.rows(), latent_dim);
    for i in 0..raw_features.rows() {
        features
            .row_mut(i)
            .copy_from_slice(&standardization.apply(raw_features.row(i)));
    }
    let labels = encoded.labels();

    let root = Rng::new(seed);
    let mut init_rng = root.substream("init");
    let mut pred = NoisePredictor::init(
        latent_dim,
        encoded.num_classes(),
        &cfg.shape,
        cfg.num_steps,
        standardization,
        sched.hash(),
        &mut init_rng,
    )?;

    let mut shapes = pred.core().param_shapes();
    shapes.push(pred.class_embed().data().len());
    let mut adam = AdamState::new(cfg.lr, &shapes);

    let mut train_rng = root.substream("train");
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let t_steps = cfg.num_steps as u64;
    let class_dim = pred.class_embed().cols();
    let time_dim = pred.time_embed().dim();

    for epoch in 0..cfg.epochs {
        train_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let n = chunk.len();
            let mut z_t = Matrix::zeros(n, latent_dim);
            let mut target = Matrix::zeros(n, latent_dim);
            let mut steps = Vec::with_capacity(n);
            let mut batch_labels = Vec::with_capacity(n);
            let mut eps = vec![0.0; latent_dim];
            for (i, &idx) in chunk.iter().enumerate() {
                let t = (train_rng.next_below(t_steps) + 1) as usize;
                train_rng.fill_normal(&mut eps);
                let perturbed = sched.forward_perturb(features.row(idx), t, &eps)?;
                z_t.row_mut(i).copy_from_slice(&perturbed);
                target.row_mut(i).copy_from_slice(&eps);
                steps.push(t);
                batch_labels.push(labels[idx]);
            }

            let input = pred.assemble_input(&z_t, &steps, &batch_labels)?;
            let cache = pred.core().forward_cached(&input, None)?;
            let (loss, dout) = mse_loss(cache.output(), &target)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            epoch_loss += loss * n as f64;
            let (core_grads, dinput) = pred.core().backward(&cache, &dout)?;

            // Route the input gradient's class-embedding columns back into
            // the embedding table rows by label.
            let mut embed_grad = Matrix::zeros(pred.class_embed().rows(), class_dim);
            let offset = latent_dim + time_dim;
            for (i, &label) in batch_labels.iter().enumerate() {
                let src = &dinput.row(i)[offset..offset + class_dim];
                let dst = embed_grad.row_mut(label as usize);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }

            step_params(&mut pred, &mut adam, &core_grads, &embed_grad)?;
        }
        losses.push(epoch_loss / encoded.len() as f64);
    }

    let report = TrainReport {
        losses,
        final_train_accuracy: None,
        epochs: cfg.epochs,
        seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((pred, report))
}

fn step_params(
    pred: &mut NoisePredictor,
    adam: &mut AdamState,
    core_grads: &MlpGrads,
    embed_grad: &Matrix,
) -> Result<()> {
    let mut grads: Vec<&[f64]> = Vec::with_capacity(core_grads.d_weights.len() * 2 + 1);
    for (w, b) in core_grads.d_weights.iter().zip(&core_grads.d_biases) {
        grads.push(w.data());
        grads.push(b);
    }
    grads.push(embed_grad.data());
    let mut params = pred.param_slices_mut();
    adam.step(&mut params, &grads)
}
