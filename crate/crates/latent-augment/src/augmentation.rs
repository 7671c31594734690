//! Augmentation policy: which classes receive pseudo-features and how many.
//!
//! The label distribution handed to the sampler is a policy choice: target
//! all classes or one of the many/medium/few groups (or an explicit set),
//! with per-class counts either proportional to each class's encoded count
//! or equal across targeted classes.

use crate::datasets::{ClassProfile, FeatureDataset, Group, Provenance};
use crate::diffusion::{sample_features, NoisePredictor, NoiseSchedule, SamplerSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentTarget {
    All,
    Many,
    Medium,
    Few,
    Custom(Vec<u32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Generate `ratio * n_k` features for each targeted class k.
    Proportional,
    /// Generate `ratio * mean(n)` features for every targeted class, where
    /// the mean is over all classes.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub target: AugmentTarget,
    /// Generated-to-encoded count ratio for targeted classes.
    pub ratio: f64,
    pub mode: LabelMode,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            target: AugmentTarget::Few,
            ratio: 0.4,
            mode: LabelMode::Proportional,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !self.ratio.is_finite() || self.ratio < 0.0 {
            return Err(Error::Policy(format!(
                "ratio must be >= 0, got {}",
                self.ratio
            )));
        }
        if let AugmentTarget::Custom(classes) = &self.target {
            for &c in classes {
                if c as usize >= num_classes {
                    return Err(Error::Policy(format!(
                        "custom target class {c} out of range for {num_classes} classes"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The labels to generate, ascending, one entry per pseudo-feature.
/// Rounding is half-up, and a targeted class whose plan rounds to zero still
/// gets one sample when the ratio is positive, so tiny tail classes are
/// never silently skipped.
pub fn plan_labels(policy: &AugmentPolicy, profile: &ClassProfile) -> Result<Vec<u32>> {
    policy.validate(profile.num_classes())?;
    let targeted: Vec<usize> = match &policy.target {
        AugmentTarget::All => (0..profile.num_classes()).collect(),
        AugmentTarget::Many => profile.classes_in(Group::Many),
        AugmentTarget::Medium => profile.classes_in(Group::Medium),
        AugmentTarget::Few => profile.classes_in(Group::Few),
        AugmentTarget::Custom(classes) => {
            let mut v: Vec<usize> = classes.iter().map(|&c| c as usize).collect();
            v.sort_unstable();
            v.dedup();
            v
        }
    };
    if targeted.is_empty() {
        return Err(Error::Policy(format!(
            "target group {:?} contains no classes",
            policy.target
        )));
    }
    if policy.ratio == 0.0 {
        return Ok(Vec::new());
    }
    let mean_count = profile.counts().iter().sum::<usize>() as f64 / profile.num_classes() as f64;
    let mut labels = Vec::new();
    for &k in &targeted {
        let base = match policy.mode {
            LabelMode::Proportional => profile.counts()[k] as f64,
            LabelMode::Balanced => mean_count,
        };
        let count = ((policy.ratio * base).round() as usize).max(1);
        labels.extend(std::iter::repeat_n(k as u32, count));
    }
    Ok(labels)
}

/// Union of the encoded dataset and freshly sampled pseudo-features.
/// Encoded records pass through untouched (same order, same bytes);
/// generated records are appended with provenance `generated`.
pub fn augment(
    encoded: &FeatureDataset,
    pred: &NoisePredictor,
    sched: &NoiseSchedule,
    spec: &SamplerSpec,
    policy: &AugmentPolicy,
    profile: &ClassProfile,
) -> Result<FeatureDataset> {
    let plan = plan_labels(policy, profile)?;
    let mut out = encoded.clone();
    if plan.is_empty() {
        return Ok(out);
    }
    let generated = sample_features(sched, pred, spec, &plan)?;
    out.extend_from(&generated)?;
    Ok(out)
}

/// Per-class generated counts of a dataset (provenance `generated` only).
pub fn generated_counts(ds: &FeatureDataset) -> Vec<usize> {
    let mut counts = vec![0usize; ds.num_classes()];
    for r in ds.records() {
        if r.provenance == Provenance::Generated {
            counts[r.label as usize] += 1;
        }
    }
    counts
}
