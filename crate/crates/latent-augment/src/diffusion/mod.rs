//! Class-conditional latent diffusion: noise schedule, closed-form forward
//! perturbation, noise-prediction training, and DDIM sampling over a step
//! subsequence.

pub mod predictor;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use predictor::{NoisePredictor, PredictorShape, Standardization, TimeEmbedding};
pub use sampler::{ddim_sigma, ddim_step, ddim_update, sample_features, SamplerSpec};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind};
pub use train::{train_ldm, DiffusionConfig};
