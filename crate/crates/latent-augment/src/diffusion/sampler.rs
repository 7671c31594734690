//! DDIM sampling: backward steps along a subsequence of the forward steps.
//!
//! One backward step from t to t_prev reconstructs the predicted clean
//! sample from the noise estimate, then re-noises it to level t_prev:
//!
//! ```text
//! x0_hat  = (z_t - sqrt(1 - a_t) eps_hat) / sqrt(a_t)
//! sigma   = eta * sqrt((1 - a_prev)/(1 - a_t)) * sqrt(1 - a_t/a_prev)
//! z_prev  = sqrt(a_prev) x0_hat + sqrt(1 - a_prev - sigma^2) eps_hat
//!           + sigma * noise
//! ```
//!
//! with `a_t = alpha_bar(t)`. At eta = 0 the sampler is deterministic; at
//! eta = 1 with consecutive steps the noise scale equals the ancestral
//! (DDPM) posterior standard deviation.

use rayon::prelude::*;

use crate::datasets::{FeatureDataset, FeatureRecord, Provenance};
use crate::diffusion::predictor::NoisePredictor;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Reverse subsequence tau_1 < ... < tau_s ending at T, plus the sampler's
/// noise scale and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSpec {
    taus: Vec<usize>,
    eta: f64,
    seed: u64,
}

impl SamplerSpec {
    /// Validated arbitrary subsequence. `num_steps` is the schedule's T; the
    /// subsequence must be strictly increasing within 1..=T and end at T.
    pub fn from_taus(num_steps: usize, taus: Vec<usize>, eta: f64, seed: u64) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        if *taus.last().unwrap() != num_steps {
            return Err(Error::Config(format!(
                "reverse subsequence must end at T={num_steps}, ends at {}",
                taus.last().unwrap()
            )));
        }
        if taus[0] == 0 || taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "reverse subsequence must be strictly increasing within 1..=T".into(),
            ));
        }
        if !eta.is_finite() || eta < 0.0 {
            return Err(Error::Config(format!("eta must be >= 0, got {eta}")));
        }
        Ok(SamplerSpec { taus, eta, seed })
    }

    /// Uniform stride: tau_i = floor(i * T / s) for i = 1..=s.
    pub fn uniform(num_steps: usize, reverse_steps: usize, eta: f64, seed: u64) -> Result<Self> {
        if reverse_steps == 0 || reverse_steps > num_steps {
            return Err(Error::Config(format!(
                "reverse steps must be in 1..={num_steps}, got {reverse_steps}"
            )));
        }
        let taus = (1..=reverse_steps)
            .map(|i| i * num_steps / reverse_steps)
            .collect();
        SamplerSpec::from_taus(num_steps, taus, eta, seed)
    }

    pub fn taus(&self) -> &[usize] {
        &self.taus
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// One backward step given an already-computed noise estimate. Pure algebra;
/// `rng` is only touched when the noise term is active (eta > 0 and
/// t_prev > 0).
pub fn ddim_update(
    sched: &NoiseSchedule,
    z_t: &[f64],
    eps_hat: &[f64],
    t: usize,
    t_prev: usize,
    eta: f64,
    mut rng: Option<&mut Rng>,
) -> Result<Vec<f64>> {
    if t_prev >= t {
        return Err(Error::Config(format!(
            "backward step needs t_prev < t, got {t_prev} >= {t}"
        )));
    }
    if t > sched.num_steps() {
        return Err(Error::Config(format!(
            "step {t} out of range 1..={}",
            sched.num_steps()
        )));
    }
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::Config(format!("eta must be >= 0, got {eta}")));
    }
    if z_t.len() != eps_hat.len() {
        return Err(Error::Shape(format!(
            "z_t dim {} vs eps dim {}",
            z_t.len(),
            eps_hat.len()
        )));
    }
    let a_t = sched.alpha_bar(t);
    let a_prev = sched.alpha_bar(t_prev);
    let sigma = if eta == 0.0 {
        0.0
    } else {
        eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_prev).sqrt()
    };
    let dir_sq = 1.0 - a_prev - sigma * sigma;
    if dir_sq < -1e-12 {
        return Err(Error::Config(format!(
            "eta {eta} too large at step {t}->{t_prev}: direction term is negative"
        )));
    }
    let dir = dir_sq.max(0.0).sqrt();
    let (sa_t, sa_prev) = (a_t.sqrt(), a_prev.sqrt());
    let noise_coeff = (1.0 - a_t).sqrt();
    let mut out = Vec::with_capacity(z_t.len());
    for (&z, &e) in z_t.iter().zip(eps_hat) {
        let x0_hat = (z - noise_coeff * e) / sa_t;
        out.push(sa_prev * x0_hat + dir * e);
    }
    if sigma > 0.0 {
        let rng = rng
            .take()
            .ok_or_else(|| Error::Config("eta > 0 requires an rng for the noise term".into()))?;
        for v in out.iter_mut() {
            *v += sigma * rng.next_normal();
        }
    }
    Ok(out)
}

/// The noise scale of the step, exposed for tests against the ancestral
/// posterior form.
pub fn ddim_sigma(sched: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> f64 {
    let a_t = sched.alpha_bar(t);
    let a_prev = sched.alpha_bar(t_prev);
    eta * ((1.0 - a_prev) / (1.0 - a_t)).sqrt() * (1.0 - a_t / a_prev).sqrt()
}

/// One backward step evaluated with the trained predictor, in the
/// predictor's standardized latent space.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step(
    sched: &NoiseSchedule,
    pred: &NoisePredictor,
    z_t: &[f64],
    t: usize,
    t_prev: usize,
    label: u32,
    eta: f64,
    rng: Option<&mut Rng>,
) -> Result<Vec<f64>> {
    pred.validate_schedule(sched)?;
    let eps_hat = pred.predict_one(z_t, t, label)?;
    ddim_update(sched, z_t, &eps_hat, t, t_prev, eta, rng)
}

/// Generate one pseudo-feature per requested label: draw z_T from N(0, I),
/// walk the reverse subsequence down to step 0, then map back to the
/// encoder's feature scale. Sample i uses an rng substream derived from
/// (seed, i), so the output is independent of parallel scheduling.
pub fn sample_features(
    sched: &NoiseSchedule,
    pred: &NoisePredictor,
    spec: &SamplerSpec,
    labels: &[u32],
) -> Result<FeatureDataset> {
    pred.validate_schedule(sched)?;
    if *spec.taus().last().unwrap() != sched.num_steps() {
        return Err(Error::Config(format!(
            "sampler subsequence ends at {}, schedule has T={}",
            spec.taus().last().unwrap(),
            sched.num_steps()
        )));
    }
    for &label in labels {
        if label as usize >= pred.num_classes() {
            return Err(Error::Config(format!(
                "label {label} out of range for {} classes",
                pred.num_classes()
            )));
        }
    }
    let dim = pred.latent_dim();
    let rows: Vec<Vec<f64>> = labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| -> Result<Vec<f64>> {
            let mut rng = Rng::new(crate::numeric::derive_seed_index(spec.seed(), i as u64));
            let mut z = vec![0.0; dim];
            rng.fill_normal(&mut z);
            let taus = spec.taus();
            for j in (0..taus.len()).rev() {
                let t = taus[j];
                let t_prev = if j > 0 { taus[j - 1] } else { 0 };
                let eps_hat = pred.predict_one(&z, t, label)?;
                z = ddim_update(sched, &z, &eps_hat, t, t_prev, spec.eta(), Some(&mut rng))?;
            }
            Ok(pred.standardization().invert(&z))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut ds = FeatureDataset::new(dim, pred.num_classes());
    for (features, &label) in rows.into_iter().zip(labels) {
        ds.push(FeatureRecord {
            features,
            label,
            provenance: Provenance::Generated,
        })?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::FeatureRecord;
    use crate::diffusion::train::{train_ldm, DiffusionConfig};
    use crate::diffusion::{make_schedule, PredictorShape, ScheduleKind};

    fn test_schedule() -> NoiseSchedule {
        make_schedule(100, 1e-3, 0.04, ScheduleKind::Linear).unwrap()
    }

    #[test]
    fn uniform_subsequence_shape() {
        let spec = SamplerSpec::uniform(1000, 500, 0.0, 1).unwrap();
        assert_eq!(spec.taus().len(), 500);
        assert_eq!(spec.taus()[0], 2);
        assert_eq!(*spec.taus().last().unwrap(), 1000);
        let full = SamplerSpec::uniform(10, 10, 0.0, 1).unwrap();
        assert_eq!(full.taus(), &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
    }

    #[test]
    fn spec_validation() {
        assert!(SamplerSpec::from_taus(10, vec![], 0.0, 1).is_err());
        assert!(SamplerSpec::from_taus(10, vec![2, 5, 9], 0.0, 1).is_err()); // must end at T
        assert!(SamplerSpec::from_taus(10, vec![5, 5, 10], 0.0, 1).is_err()); // strictly increasing
        assert!(SamplerSpec::from_taus(10, vec![0, 10], 0.0, 1).is_err()); // within 1..=T
        assert!(SamplerSpec::from_taus(10, vec![2, 10], -0.1, 1).is_err());
        assert!(SamplerSpec::from_taus(10, vec![2, 10], 0.0, 1).is_ok());
    }

    #[test]
    fn perfect_predictor_step_recovers_forward_perturb() {
        // If eps_hat equals the exact noise used to build z_t, one eta=0
        // step to t_prev lands on forward_perturb(z0, t_prev, eps).
        let sched = test_schedule();
        let mut rng = Rng::new(42);
        for &(t, t_prev) in &[(100usize, 50usize), (80, 1), (60, 59), (40, 0)] {
            let z0: Vec<f64> = (0..5).map(|_| rng.next_normal()).collect();
            let eps: Vec<f64> = (0..5).map(|_| rng.next_normal()).collect();
            let z_t = sched.forward_perturb(&z0, t, &eps).unwrap();
            let stepped = ddim_update(&sched, &z_t, &eps, t, t_prev, 0.0, None).unwrap();
            let want = if t_prev == 0 {
                z0.clone()
            } else {
                sched.forward_perturb(&z0, t_prev, &eps).unwrap()
            };
            for (a, b) in stepped.iter().zip(&want) {
                let rel = (a - b).abs() / b.abs().max(1.0);
                assert!(rel < 1e-10, "t={t} t_prev={t_prev}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn eta_one_consecutive_sigma_matches_ddpm_posterior() {
        // sigma(eta=1, t -> t-1) must equal sqrt((1-a_{t-1})/(1-a_t) beta_t).
        let sched = test_schedule();
        for t in 2..=100 {
            let sigma = ddim_sigma(&sched, t, t - 1, 1.0);
            let posterior = ((1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t))
                * sched.beta(t))
            .sqrt();
            assert!(
                (sigma - posterior).abs() < 1e-12,
                "t={t}: {sigma} vs {posterior}"
            );
        }
    }

    #[test]
    fn deterministic_at_eta_zero() {
        let sched = test_schedule();
        let z_t = vec![0.3, -1.2, 0.7];
        let eps = vec![0.1, 0.4, -0.2];
        let a = ddim_update(&sched, &z_t, &eps, 50, 20, 0.0, None).unwrap();
        let b = ddim_update(&sched, &z_t, &eps, 50, 20, 0.0, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_order_violation_rejected() {
        let sched = test_schedule();
        let z = vec![0.0; 2];
        assert!(ddim_update(&sched, &z, &z, 10, 10, 0.0, None).is_err());
        assert!(ddim_update(&sched, &z, &z, 10, 20, 0.0, None).is_err());
        assert!(ddim_update(&sched, &z, &z, 101, 50, 0.0, None).is_err());
        assert!(ddim_update(&sched, &z, &z, 10, 5, -1.0, None).is_err());
    }

    #[test]
    fn eta_positive_needs_rng() {
        let sched = test_schedule();
        let z = vec![0.0; 2];
        assert!(ddim_update(&sched, &z, &z, 10, 5, 1.0, None).is_err());
        let mut rng = Rng::new(1);
        assert!(ddim_update(&sched, &z, &z, 10, 5, 1.0, Some(&mut rng)).is_ok());
    }

    fn trained_fixture(seed: u64) -> (NoiseSchedule, NoisePredictor) {
        let mut rng = Rng::new(seed);
        let mut ds = FeatureDataset::new(2, 2);
        for k in 0..2u32 {
            let center = if k == 0 { -4.0 } else { 4.0 };
            for _ in 0..60 {
                ds.push(FeatureRecord {
                    features: vec![
                        center + 0.5 * rng.next_normal(),
                        -center + 0.5 * rng.next_normal(),
                    ],
                    label: k,
                    provenance: Provenance::Encoded,
                })
                .unwrap();
            }
        }
        let cfg = DiffusionConfig {
            num_steps: 100,
            beta_start: 1e-3,
            beta_end: 0.04,
            shape: PredictorShape {
                hidden: vec![48, 48],
                time_embed_dim: 8,
                class_embed_dim: 4,
            },
            epochs: 80,
            lr: 2e-3,
            batch_size: 32,
            reverse_steps: 50,
            eta: 0.0,
        };
        let sched = cfg.schedule().unwrap();
        let (pred, _) = train_ldm(&ds, &sched, &cfg, seed).unwrap();
        (sched, pred)
    }

    #[test]
    fn sample_features_contract_and_determinism() {
        let (sched, pred) = trained_fixture(3);
        let spec = SamplerSpec::uniform(100, 25, 0.0, 777).unwrap();
        let labels = vec![0u32, 0, 1, 1, 1];
        let a = sample_features(&sched, &pred, &spec, &labels).unwrap();
        let b = sample_features(&sched, &pred, &spec, &labels).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert_eq!(a.dim(), 2);
        assert_eq!(a.labels(), labels);
        assert!(a
            .records()
            .iter()
            .all(|r| r.provenance == Provenance::Generated));
        // A different sampler seed moves the samples.
        let spec2 = SamplerSpec::uniform(100, 25, 0.0, 778).unwrap();
        let c = sample_features(&sched, &pred, &spec2, &labels).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn samples_land_near_their_class() {
        // Two far-separated training clusters; generated features must sit
        // nearer their own class centroid.
        let (sched, pred) = trained_fixture(5);
        let spec = SamplerSpec::uniform(100, 50, 0.0, 99).unwrap();
        let labels: Vec<u32> = (0..40).map(|i| (i % 2) as u32).collect();
        let generated = sample_features(&sched, &pred, &spec, &labels).unwrap();
        let centroids = [[-4.0, 4.0], [4.0, -4.0]];
        let mut correct = 0;
        for r in generated.records() {
            let d0: f64 = r
                .features
                .iter()
                .zip(&centroids[0])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let d1: f64 = r
                .features
                .iter()
                .zip(&centroids[1])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let nearest = if d0 <= d1 { 0 } else { 1 };
            if nearest == r.label as usize {
                correct += 1;
            }
        }
        assert!(
            correct >= 36,
            "only {correct}/40 samples near their class centroid"
        );
    }

    #[test]
    fn mismatched_schedule_rejected() {
        let (_, pred) = trained_fixture(7);
        let other = make_schedule(100, 2e-3, 0.04, ScheduleKind::Linear).unwrap();
        let spec = SamplerSpec::uniform(100, 10, 0.0, 1).unwrap();
        match sample_features(&other, &pred, &spec, &[0]) {
            Err(Error::Artifact(msg)) => assert!(msg.contains("schedule hash")),
            other => panic!("expected artifact error, got {other:?}"),
        }
    }

    #[test]
    fn single_gaussian_class_sample_mean_matches_encoded_mean() {
        // One class, one Gaussian: the generated features' mean must sit
        // near the encoded features' mean. Tolerance widened from 3 to 5
        // standard errors to absorb model error on top of sampling error.
        let mut rng = Rng::new(31);
        let mut ds = FeatureDataset::new(3, 1);
        for _ in 0..150 {
            ds.push(FeatureRecord {
                features: vec![
                    2.0 + 0.7 * rng.next_normal(),
                    -1.0 + 0.7 * rng.next_normal(),
                    0.5 + 0.7 * rng.next_normal(),
                ],
                label: 0,
                provenance: Provenance::Encoded,
            })
            .unwrap();
        }
        let cfg = DiffusionConfig {
            num_steps: 200,
            beta_start: 1e-3,
            beta_end: 0.03,
            shape: PredictorShape {
                hidden: vec![64, 64],
                time_embed_dim: 8,
                class_embed_dim: 2,
            },
            epochs: 200,
            lr: 2e-3,
            batch_size: 64,
            reverse_steps: 100,
            eta: 0.0,
        };
        let sched = cfg.schedule().unwrap();
        let (pred, _) = train_ldm(&ds, &sched, &cfg, 17).unwrap();
        let spec = SamplerSpec::uniform(200, 100, 0.0, 5).unwrap();
        let n_gen = 400usize;
        let generated = sample_features(&sched, &pred, &spec, &vec![0u32; n_gen]).unwrap();

        for d in 0..3 {
            let enc_mean: f64 =
                ds.records().iter().map(|r| r.features[d]).sum::<f64>() / ds.len() as f64;
            let enc_var: f64 = ds
                .records()
                .iter()
                .map(|r| (r.features[d] - enc_mean) * (r.features[d] - enc_mean))
                .sum::<f64>()
                / ds.len() as f64;
            let gen_mean: f64 = generated.records().iter().map(|r| r.features[d]).sum::<f64>()
                / n_gen as f64;
            let se = (enc_var / n_gen as f64).sqrt();
            assert!(
                (gen_mean - enc_mean).abs() < 5.0 * se,
                "dim {d}: generated mean {gen_mean} vs encoded mean {enc_mean} (5 SE = {})",
                5.0 * se
            );
        }
    }
}
