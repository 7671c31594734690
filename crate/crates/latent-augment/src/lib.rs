//! Latent-space feature augmentation for long-tailed classification.
//!
//! The pipeline has three stages. Stage 1 trains a classifier
//! `f(x) = G(E(x))` on a long-tailed dataset with plain cross entropy and
//! extracts the encoded feature set. Stage 2 trains a class-conditional
//! denoising diffusion model on those features and samples pseudo-features
//! with a DDIM sampler. Stage 3 fine-tunes the classification head `G` on
//! encoded plus generated features, down-weighting the generated term by a
//! factor gamma. The tail classes, which stage 1 underfits, get extra
//! effective training signal from the generated features.
//!
//! Everything runs at desk scale on synthetic Gaussian-mixture data: the
//! networks are small f64 MLPs with hand-derived backprop, and every
//! stochastic choice flows through seeded, named RNG substreams so runs are
//! bit-reproducible.
//!
//! See the `examples/` directory for one runnable example per capability,
//! or the `latent-augment` binary for the pipeline CLI.

pub mod augmentation;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod finetune;
pub mod numeric;
pub mod pipeline;

pub use error::{Error, Result};
