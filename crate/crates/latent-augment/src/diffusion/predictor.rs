//! Class-conditional noise predictor.
//!
//! An MLP that maps `concat(z_t, time_embedding(t), class_embedding(y))` to
//! a predicted noise vector in the latent space. The time embedding is a
//! fixed sinusoidal table; the class embedding is a learned K x dim table
//! trained jointly with the core network. Standardization statistics of the
//! training features are carried along so sampling can map its output back
//! to the encoder's scale.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::{Activation, Matrix, Mlp, Rng};

/// Fixed sinusoidal step-embedding table.
#[derive(Debug, Clone)]
pub struct TimeEmbedding {
    dim: usize,
    max_step: usize,
    table: Matrix, // (max_step + 1) x dim
}

impl TimeEmbedding {
    /// Layout per row t: `[cos(t w_0).. cos(t w_{h-1}), sin(t w_0)..]` with
    /// `w_i = 10000^(-i/h)` and h = dim/2.
    pub fn new(max_step: usize, dim: usize) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "time embedding dim must be a positive even number, got {dim}"
            )));
        }
        let half = dim / 2;
        let max_period: f64 = 10_000.0;
        let freqs: Vec<f64> = (0..half)
            .map(|i| (-(max_period.ln()) * i as f64 / half as f64).exp())
            .collect();
        let mut table = Matrix::zeros(max_step + 1, dim);
        for t in 0..=max_step {
            let row = table.row_mut(t);
            for (i, &f) in freqs.iter().enumerate() {
                let arg = t as f64 * f;
                row[i] = arg.cos();
                row[half + i] = arg.sin();
            }
        }
        Ok(TimeEmbedding {
            dim,
            max_step,
            table,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_step(&self) -> usize {
        self.max_step
    }

    pub fn embed(&self, t: usize) -> &[f64] {
        self.table.row(t)
    }
}

/// Per-dimension standardization statistics of the encoded training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population statistics; near-constant dimensions fall back to std 1 so
    /// standardization stays invertible.
    pub fn fit(features: &Matrix) -> Self {
        let (n, d) = (features.rows(), features.cols());
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(features.row(r)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|&s| {
                let sd = (s / n as f64).sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Standardization { mean, std }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&x, &m), &s)| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&x, &m), &s)| x * s + m)
            .collect()
    }
}

/// Shape parameters of the predictor network.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorShape {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub class_embed_dim: usize,
}

impl Default for PredictorShape {
    fn default() -> Self {
        PredictorShape {
            hidden: vec![128, 128],
            time_embed_dim: 32,
            class_embed_dim: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoisePredictor {
    core: Mlp,
    class_embed: Matrix, // K x class_embed_dim, learned
    time_embed: TimeEmbedding,
    latent_dim: usize,
    standardization: Standardization,
    schedule_hash: u64,
}

impl NoisePredictor {
    pub fn init(
        latent_dim: usize,
        num_classes: usize,
        shape: &PredictorShape,
        max_step: usize,
        standardization: Standardization,
        schedule_hash: u64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if latent_dim == 0 || num_classes == 0 {
            return Err(Error::Config(
                "predictor needs positive latent dim and class count".into(),
            ));
        }
        if shape.class_embed_dim == 0 {
            return Err(Error::Config("class embedding dim must be positive".into()));
        }
        if standardization.mean.len() != latent_dim || standardization.std.len() != latent_dim {
            return Err(Error::Shape(
                "standardization stats do not match latent dim".into(),
            ));
        }
        let time_embed = TimeEmbedding::new(max_step, shape.time_embed_dim)?;
        let input_dim = latent_dim + shape.time_embed_dim + shape.class_embed_dim;
        let mut dims = Vec::with_capacity(shape.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&shape.hidden);
        dims.push(latent_dim);
        let mut acts = vec![Activation::Silu; shape.hidden.len()];
        acts.push(Activation::Identity);
        let core = Mlp::init(&dims, &acts, rng)?;
        // One random vector per class; distinct vectors are what carry the
        // conditioning signal before training shapes them.
        let mut class_embed = Matrix::zeros(num_classes, shape.class_embed_dim);
        rng.fill_normal(class_embed.data_mut());
        Ok(NoisePredictor {
            core,
            class_embed,
            time_embed,
            latent_dim,
            standardization,
            schedule_hash,
        })
    }

    pub fn core(&self) -> &Mlp {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut Mlp {
        &mut self.core
    }

    pub fn class_embed(&self) -> &Matrix {
        &self.class_embed
    }

    pub fn class_embed_mut(&mut self) -> &mut Matrix {
        &mut self.class_embed
    }

    /// All learnable buffers: core weights/biases layer-major, then the
    /// class-embedding table. Matches the gradient order used in training.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let NoisePredictor {
            core, class_embed, ..
        } = self;
        let mut out = core.param_slices_mut();
        out.push(class_embed.data_mut());
        out
    }

    pub fn time_embed(&self) -> &TimeEmbedding {
        &self.time_embed
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_embed.rows()
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn schedule_hash(&self) -> u64 {
        self.schedule_hash
    }

    /// Fail fast when the predictor was trained under a different schedule.
    pub fn validate_schedule(&self, sched: &crate::diffusion::NoiseSchedule) -> Result<()> {
        if sched.hash() != self.schedule_hash {
            return Err(Error::Artifact(format!(
                "schedule hash mismatch: predictor was trained with {:#018x}, config gives {:#018x}",
                self.schedule_hash,
                sched.hash()
            )));
        }
        Ok(())
    }

    /// Assemble `concat(z_t, time_emb, class_emb)` rows for a batch.
    pub fn assemble_input(
        &self,
        z_rows: &Matrix,
        steps: &[usize],
        labels: &[u32],
    ) -> Result<Matrix> {
        let n = z_rows.rows();
        if steps.len() != n || labels.len() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows vs {} steps / {} labels",
                steps.len(),
                labels.len()
            )));
        }
        if z_rows.cols() != self.latent_dim {
            return Err(Error::Shape(format!(
                "feature dim {} vs predictor latent dim {}",
                z_rows.cols(),
                self.latent_dim
            )));
        }
        let (et, ey) = (self.time_embed.dim(), self.class_embed.cols());
        let mut input = Matrix::zeros(n, self.latent_dim + et + ey);
        for i in 0..n {
            if steps[i] > self.time_embed.max_step() {
                return Err(Error::Config(format!(
                    "step {} beyond embedding table ({})",
                    steps[i],
                    self.time_embed.max_step()
                )));
            }
            let label = labels[i] as usize;
            if label >= self.class_embed.rows() {
                return Err(Error::Config(format!(
                    "label {} out of range for {} classes",
                    labels[i],
                    self.class_embed.rows()
                )));
            }
            let row = input.row_mut(i);
            row[..self.latent_dim].copy_from_slice(z_rows.row(i));
            row[self.latent_dim..self.latent_dim + et]
                .copy_from_slice(self.time_embed.embed(steps[i]));
            row[self.latent_dim + et..].copy_from_slice(self.class_embed.row(label));
        }
        Ok(input)
    }

    /// Predicted noise for a batch of standardized latents.
    pub fn predict(&self, z_rows: &Matrix, steps: &[usize], labels: &[u32]) -> Result<Matrix> {
        let input = self.assemble_input(z_rows, steps, labels)?;
        self.core.forward(&input)
    }

    /// Predicted noise for a single standardized latent vector.
    pub fn predict_one(&self, z: &[f64], step: usize, label: u32) -> Result<Vec<f64>> {
        let mut m = Matrix::zeros(1, z.len());
        m.row_mut(0).copy_from_slice(z);
        let out = self.predict(&m, &[step], &[label])?;
        Ok(out.row(0).to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        use crate::numeric::persist as p;
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        p::write_magic(&mut w)?;
        p::write_u8(&mut w, p::SECTION_CORE)?;
        p::write_mlp_block(&mut w, &self.core)?;
        p::write_u8(&mut w, p::SECTION_CLASS_EMBED)?;
        p::write_u32(&mut w, self.class_embed.rows() as u32)?;
        p::write_u32(&mut w, self.class_embed.cols() as u32)?;
        p::write_f64_slice(&mut w, self.class_embed.data())?;
        p::write_u8(&mut w, p::SECTION_TIME_EMBED)?;
        p::write_u32(&mut w, self.time_embed.dim() as u32)?;
        p::write_u32(&mut w, self.time_embed.max_step() as u32)?;
        p::write_u8(&mut w, p::SECTION_STANDARDIZE)?;
        p::write_u32(&mut w, self.latent_dim as u32)?;
        p::write_f64_slice(&mut w, &self.standardization.mean)?;
        p::write_f64_slice(&mut w, &self.standardization.std)?;
        p::write_u8(&mut w, p::SECTION_SCHEDULE_HASH)?;
        p::write_u64(&mut w, self.schedule_hash)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        use crate::numeric::persist as p;
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        p::read_magic(&mut r)?;
        p::expect_section(&mut r, p::SECTION_CORE, "core")?;
        let core = p::read_mlp_block(&mut r)?;
        p::expect_section(&mut r, p::SECTION_CLASS_EMBED, "class embedding")?;
        let k = p::read_u32(&mut r)? as usize;
        let ey = p::read_u32(&mut r)? as usize;
        let class_embed = Matrix::from_vec(k, ey, p::read_f64_vec(&mut r, k * ey)?)?;
        p::expect_section(&mut r, p::SECTION_TIME_EMBED, "time embedding")?;
        let et = p::read_u32(&mut r)? as usize;
        let max_step = p::read_u32(&mut r)? as usize;
        let time_embed = TimeEmbedding::new(max_step, et)?;
        p::expect_section(&mut r, p::SECTION_STANDARDIZE, "standardization")?;
        let latent_dim = p::read_u32(&mut r)? as usize;
        let mean = p::read_f64_vec(&mut r, latent_dim)?;
        let std = p::read_f64_vec(&mut r, latent_dim)?;
        p::expect_section(&mut r, p::SECTION_SCHEDULE_HASH, "schedule hash")?;
        let schedule_hash = p::read_u64(&mut r)?;
        if core.input_dim() != latent_dim + et + ey || core.output_dim() != latent_dim {
            return Err(Error::Format(format!(
                "core dims {}->{} inconsistent with latent {latent_dim}, time {et}, class {ey}",
                core.input_dim(),
                core.output_dim()
            )));
        }
        Ok(NoisePredictor {
            core,
            class_embed,
            time_embed,
            latent_dim,
            standardization: Standardization { mean, std },
        schedule_hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_standardization(dim: usize) -> Standardization {
        Standardization {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    #[test]
    fn time_embedding_rows_differ_and_are_bounded() {
        let te = TimeEmbedding::new(100, 8).unwrap();
        assert_ne!(te.embed(1), te.embed(50));
        for t in [0usize, 1, 50, 100] {
            assert!(te.embed(t).iter().all(|v| v.abs() <= 1.0));
        }
        // cos(0) = 1, sin(0) = 0 at t=0.
        assert_eq!(te.embed(0)[..4], [1.0, 1.0, 1.0, 1.0]);
        assert_eq!(te.embed(0)[4..], [0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn time_embedding_needs_even_dim() {
        assert!(TimeEmbedding::new(10, 7).is_err());
        assert!(TimeEmbedding::new(10, 0).is_err());
    }

    #[test]
    fn standardization_round_trips() {
        let m = Matrix::from_vec(3, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
        let s = Standardization::fit(&m);
        assert!((s.mean[0] - 2.0).abs() < 1e-12);
        assert!((s.mean[1] - 20.0).abs() < 1e-12);
        let v = vec![2.5, 12.0];
        let back = s.invert(&s.apply(&v));
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
        // Standardized training columns have mean 0, std 1.
        let col: Vec<f64> = (0..3).map(|r| s.apply(m.row(r))[0]).collect();
        let mean: f64 = col.iter().sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn constant_dimension_falls_back_to_unit_std() {
        let m = Matrix::from_vec(3, 1, vec![5.0, 5.0, 5.0]).unwrap();
        let s = Standardization::fit(&m);
        assert_eq!(s.std[0], 1.0);
        assert_eq!(s.apply(&[5.0])[0], 0.0);
    }

    #[test]
    fn predictor_output_dims_and_conditioning() {
        let mut rng = Rng::new(12);
        let pred = NoisePredictor::init(
            4,
            3,
            &PredictorShape {
                hidden: vec![16],
                time_embed_dim: 8,
                class_embed_dim: 4,
            },
            50,
            unit_standardization(4),
            0xABCD,
            &mut rng,
        )
        .unwrap();
        let z = vec![0.1, -0.2, 0.3, 0.0];
        let a = pred.predict_one(&z, 10, 0).unwrap();
        assert_eq!(a.len(), 4);
        // Different class or step changes the prediction.
        let b = pred.predict_one(&z, 10, 1).unwrap();
        let c = pred.predict_one(&z, 30, 0).unwrap();
        assert_ne!(a, b);
        assert_ne!(a, c);
        // Same input twice is deterministic.
        assert_eq!(a, pred.predict_one(&z, 10, 0).unwrap());
    }

    #[test]
    fn predictor_rejects_bad_step_and_label() {
        let mut rng = Rng::new(12);
        let pred = NoisePredictor::init(
            2,
            2,
            &PredictorShape {
                hidden: vec![8],
                time_embed_dim: 4,
                class_embed_dim: 2,
            },
            10,
            unit_standardization(2),
            0,
            &mut rng,
        )
        .unwrap();
        assert!(pred.predict_one(&[0.0, 0.0], 11, 0).is_err());
        assert!(pred.predict_one(&[0.0, 0.0], 5, 2).is_err());
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let mut rng = Rng::new(31);
        let pred = NoisePredictor::init(
            3,
            4,
            &PredictorShape {
                hidden: vec![10, 10],
                time_embed_dim: 6,
                class_embed_dim: 5,
            },
            20,
            Standardization {
                mean: vec![0.5, -1.0, 2.0],
                std: vec![1.5, 0.25, 3.0],
            },
            0xDEADBEEF,
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.ldmn");
        pred.save(&path).unwrap();
        let loaded = NoisePredictor::load(&path).unwrap();
        assert_eq!(loaded.schedule_hash(), 0xDEADBEEF);
        assert_eq!(loaded.class_embed().data(), pred.class_embed().data());
        assert_eq!(loaded.standardization(), pred.standardization());
        let z = vec![0.3, 0.1, -0.7];
        assert_eq!(
            pred.predict_one(&z, 7, 2).unwrap(),
            loaded.predict_one(&z, 7, 2).unwrap()
        );
        // A second save writes identical bytes.
        let path2 = dir.path().join("pred2.ldmn");
        loaded.save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }
}
