//! Noise schedule: per-step variances and their cumulative products.
//!
//! Convention used throughout: `beta[t]` is the per-step noise variance at
//! step t (1-based), `alpha_bar[t]` is the cumulative product of
//! `(1 - beta_s)` for s <= t, with `alpha_bar[0] = 1`. The closed-form
//! perturbation `z_t = sqrt(alpha_bar[t]) z_0 + sqrt(1 - alpha_bar[t]) eps`
//! follows from chaining the single-step transitions.

use crate::error::{Error, Result};
use crate::numeric::fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
}

impl ScheduleKind {
    fn code(self) -> u8 {
        match self {
            ScheduleKind::Linear => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_start: f64,
    beta_end: f64,
    kind: ScheduleKind,
}

/// Build a schedule with `num_steps` steps. The linear kind interpolates
/// beta from `beta_start` at t=1 to `beta_end` at t=T inclusive.
pub fn make_schedule(
    num_steps: usize,
    beta_start: f64,
    beta_end: f64,
    kind: ScheduleKind,
) -> Result<NoiseSchedule> {
    if num_steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "beta range must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..num_steps)
            .map(|i| {
                if num_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
                }
            })
            .collect(),
    };
    let mut alpha_bar = Vec::with_capacity(num_steps + 1);
    alpha_bar.push(1.0);
    let mut prod = 1.0;
    for &beta in &betas {
        prod *= 1.0 - beta;
        alpha_bar.push(prod);
    }
    Ok(NoiseSchedule {
        betas,
        alpha_bar,
        beta_start,
        beta_end,
        kind,
    })
}

impl NoiseSchedule {
    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    /// Per-step variance at step t, 1-based.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative product at step t; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Fingerprint of the schedule parameters; stored in trained predictor
    /// files and checked on load so a model is never sampled with a
    /// different schedule than it was trained on.
    pub fn hash(&self) -> u64 {
        let mut buf = Vec::with_capacity(25);
        buf.extend_from_slice(&(self.betas.len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.beta_start.to_bits().to_le_bytes());
        buf.extend_from_slice(&self.beta_end.to_bits().to_le_bytes());
        buf.push(self.kind.code());
        fnv1a64(&buf)
    }

    /// Closed-form forward perturbation
    /// `z_t = sqrt(alpha_bar[t]) z0 + sqrt(1 - alpha_bar[t]) eps`.
    pub fn forward_perturb(&self, z0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::Config(format!(
                "step {t} out of range 1..={}",
                self.num_steps()
            )));
        }
        if z0.len() != eps.len() {
            return Err(Error::Shape(format!(
                "z0 has dim {}, eps has dim {}",
                z0.len(),
                eps.len()
            )));
        }
        let a = self.alpha_bar[t];
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        Ok(z0.iter().zip(eps).map(|(&z, &e)| sa * z + sn * e).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.5, 0.5, ScheduleKind::Linear).unwrap();
        assert_eq!(s.alpha_bars(), &[1.0, 0.5]);
    }

    #[test]
    fn default_schedule_terminal_alpha_bar_frozen() {
        // Independent cumulative-product evaluation gives 4.0358e-5.
        let s = make_schedule(1000, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let terminal = s.alpha_bar(1000);
        assert!(
            (terminal - 4.0358297653756754e-5).abs() < 1e-18,
            "{terminal}"
        );
        assert!(terminal < 0.01);
        assert!((s.beta(1) - 1e-4).abs() < 1e-18);
        assert!((s.beta(1000) - 0.02).abs() < 1e-18);
    }

    #[test]
    fn alpha_bar_strictly_decreasing_from_one() {
        for &(t, b0, b1) in &[(10usize, 0.1f64, 0.3f64), (100, 1e-4, 0.02), (3, 0.5, 0.9)] {
            let s = make_schedule(t, b0, b1, ScheduleKind::Linear).unwrap();
            assert_eq!(s.alpha_bar(0), 1.0);
            for i in 1..=t {
                assert!(s.alpha_bar(i) < s.alpha_bar(i - 1));
                assert!(s.alpha_bar(i) > 0.0);
            }
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(make_schedule(0, 0.1, 0.2, ScheduleKind::Linear).is_err());
        assert!(make_schedule(10, 0.0, 0.2, ScheduleKind::Linear).is_err());
        assert!(make_schedule(10, 0.3, 0.2, ScheduleKind::Linear).is_err());
        assert!(make_schedule(10, 0.3, 1.0, ScheduleKind::Linear).is_err());
    }

    #[test]
    fn forward_perturb_near_identity_at_tiny_beta() {
        let s = make_schedule(1, 1e-12, 1e-12, ScheduleKind::Linear).unwrap();
        let z0 = [1.0, -2.0, 0.5];
        let eps = [0.0, 0.0, 0.0];
        let z1 = s.forward_perturb(&z0, 1, &eps).unwrap();
        for (a, b) in z1.iter().zip(&z0) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_perturb_step_bounds() {
        let s = make_schedule(5, 0.1, 0.2, ScheduleKind::Linear).unwrap();
        assert!(s.forward_perturb(&[0.0], 0, &[0.0]).is_err());
        assert!(s.forward_perturb(&[0.0], 6, &[0.0]).is_err());
        assert!(s.forward_perturb(&[0.0], 5, &[0.0]).is_ok());
    }

    #[test]
    fn forward_perturb_is_linear_in_both_arguments() {
        let s = make_schedule(50, 1e-3, 0.05, ScheduleKind::Linear).unwrap();
        let mut rng = Rng::new(3);
        let draw = |rng: &mut Rng| -> Vec<f64> { (0..6).map(|_| rng.next_normal()).collect() };
        let (za, zb) = (draw(&mut rng), draw(&mut rng));
        let (ea, eb) = (draw(&mut rng), draw(&mut rng));
        let t = 20;
        let lhs = s
            .forward_perturb(
                &za.iter().zip(&zb).map(|(a, b)| a + b).collect::<Vec<_>>(),
                t,
                &ea.iter().zip(&eb).map(|(a, b)| a + b).collect::<Vec<_>>(),
            )
            .unwrap();
        let pa = s.forward_perturb(&za, t, &ea).unwrap();
        let pb = s.forward_perturb(&zb, t, &eb).unwrap();
        for ((l, a), b) in lhs.iter().zip(&pa).zip(&pb) {
            let rhs = a + b;
            assert!((l - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn chained_single_steps_match_closed_form_moments() {
        // Monte Carlo: applying t transitions
        // z_s = sqrt(1 - beta_s) z_{s-1} + sqrt(beta_s) eps_s
        // must match the closed form's mean and variance.
        let s = make_schedule(40, 1e-3, 0.05, ScheduleKind::Linear).unwrap();
        let t = 40;
        let z0 = 1.7;
        let n = 20_000;
        let mut rng = Rng::new(99);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let mut z = z0;
            for step in 1..=t {
                let beta = s.beta(step);
                z = (1.0 - beta).sqrt() * z + beta.sqrt() * rng.next_normal();
            }
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let want_mean = s.alpha_bar(t).sqrt() * z0;
        let want_var = 1.0 - s.alpha_bar(t);
        let se_mean = (want_var / n as f64).sqrt();
        let se_var = want_var * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!(
            (mean - want_mean).abs() < 3.0 * se_mean,
            "mean {mean} vs {want_mean}"
        );
        assert!(
            (var - want_var).abs() < 3.0 * se_var,
            "var {var} vs {want_var}"
        );
    }

    #[test]
    fn hash_distinguishes_parameters() {
        let a = make_schedule(1000, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let b = make_schedule(999, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let c = make_schedule(1000, 2e-4, 0.02, ScheduleKind::Linear).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        let a2 = make_schedule(1000, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        assert_eq!(a.hash(), a2.hash());
    }
}
