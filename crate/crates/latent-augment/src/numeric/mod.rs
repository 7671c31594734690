//! Minimal dense neural-network substrate: matrices, MLPs with explicit
//! backprop, losses, Adam, and seeded randomness. Everything downstream
//! builds on this module.
//!
//! All arithmetic is f64. Training code is single-threaded by contract so
//! that a seed fully determines every parameter; inference helpers are pure
//! and safe to call from multiple threads on shared references.

pub mod adam;
pub mod loss;
pub mod matrix;
pub mod mlp;
pub mod persist;
pub mod rng;

pub use adam::AdamState;
pub use loss::{mse_loss, softmax_cross_entropy, softmax_cross_entropy_weighted, softmax_rows};
pub use matrix::Matrix;
pub use mlp::{Activation, ForwardCache, Layer, Mlp, MlpGrads};
pub use rng::{derive_seed, derive_seed_index, fnv1a64, Rng};

/// Matrix of i.i.d. standard normal draws.
pub fn gaussian_sample(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    rng.fill_normal(m.data_mut());
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_sample_is_reproducible() {
        let a = gaussian_sample(&mut Rng::new(99), 4, 4);
        let b = gaussian_sample(&mut Rng::new(99), 4, 4);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn gaussian_sample_substreams_differ() {
        let root = Rng::new(99);
        let a = gaussian_sample(&mut root.substream("a"), 4, 4);
        let b = gaussian_sample(&mut root.substream("b"), 4, 4);
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn gaussian_sample_moments() {
        let mut rng = Rng::new(2718);
        let m = gaussian_sample(&mut rng, 250, 400); // 1e5 draws
        let n = m.data().len() as f64;
        let mean = m.data().iter().sum::<f64>() / n;
        let var = m.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
