//! Metrics and reporting: overall/per-class/group accuracy, confusion
//! matrix, 2D PCA projections of feature sets, and the stage-3 ratio sweep.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::augmentation::{augment, AugmentPolicy};
use crate::datasets::{ClassProfile, FeatureDataset, Group, Provenance};
use crate::diffusion::{NoisePredictor, NoiseSchedule, SamplerSpec};
use crate::encoder::{classify, EncoderNet};
use crate::error::{Error, Result};
use crate::finetune::{finetune_head, FinetuneConfig};
use crate::numeric::Matrix;

/// Accuracy by training-count group. A group with no test samples (or no
/// member classes) reports null.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GroupAccuracy {
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    /// Per-class accuracy; null for classes absent from the test set.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub group_accuracy: GroupAccuracy,
    /// confusion[actual][predicted].
    pub confusion: Vec<Vec<u64>>,
    pub config_fingerprint: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn group(&self, g: Group) -> Option<f64> {
        match g {
            Group::Many => self.group_accuracy.many,
            Group::Medium => self.group_accuracy.medium,
            Group::Few => self.group_accuracy.few,
        }
    }
}

/// Evaluate a classifier on a test set. The grouping comes from the
/// profile, i.e. from TRAINING counts, not from the test set.
pub fn evaluate(
    net: &EncoderNet,
    test: &FeatureDataset,
    profile: &ClassProfile,
) -> Result<EvalReport> {
    if test.dim() != net.input_dim() {
        return Err(Error::Shape(format!(
            "test dim {} does not match model input dim {}",
            test.dim(),
            net.input_dim()
        )));
    }
    let k = net.num_classes();
    if test.num_classes() != k || profile.num_classes() != k {
        return Err(Error::Shape(format!(
            "class counts disagree: model {k}, test {}, profile {}",
            test.num_classes(),
            profile.num_classes()
        )));
    }
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }

    let (predicted, _) = classify(net, &test.features_matrix())?;
    let mut confusion = vec![vec![0u64; k]; k];
    for (rec, &p) in test.records().iter().zip(&predicted) {
        confusion[rec.label as usize][p as usize] += 1;
    }

    let row_total = |r: &[u64]| r.iter().sum::<u64>();
    let per_class_accuracy: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(kk, row)| {
            let total = row_total(row);
            (total > 0).then(|| row[kk] as f64 / total as f64)
        })
        .collect();
    let total: u64 = confusion.iter().map(|r| row_total(r)).sum();
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();

    let group_acc = |g: Group| -> Option<f64> {
        let mut correct = 0u64;
        let mut count = 0u64;
        for kk in profile.classes_in(g) {
            correct += confusion[kk][kk];
            count += row_total(&confusion[kk]);
        }
        (count > 0).then(|| correct as f64 / count as f64)
    };

    Ok(EvalReport {
        overall_accuracy: trace as f64 / total as f64,
        per_class_accuracy,
        group_accuracy: GroupAccuracy {
            many: group_acc(Group::Many),
            medium: group_acc(Group::Medium),
            few: group_acc(Group::Few),
        },
        confusion,
        config_fingerprint: String::new(),
        seed: 0,
    })
}

/// A feature record projected onto the top-2 principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected2D {
    pub x: f64,
    pub y: f64,
    pub label: u32,
    pub provenance: Provenance,
}

/// PCA onto the top-2 principal components of the combined set, for
/// external plotting. Zero-variance directions fall back to canonical basis
/// axes in index order; component signs are fixed so output is
/// reproducible.
pub fn project_2d(features: &FeatureDataset) -> Result<Vec<Projected2D>> {
    let (n, d) = (features.len(), features.dim());
    if n < 2 {
        return Err(Error::Config(format!(
            "projection needs at least 2 records, got {n}"
        )));
    }
    if d < 2 {
        return Err(Error::Config(format!(
            "projection needs dim >= 2, got {d}"
        )));
    }
    let data = features.features_matrix();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut centered = Matrix::zeros(n, d);
    for i in 0..n {
        for (j, (&v, &m)) in data.row(i).iter().zip(&mean).enumerate() {
            centered.set(i, j, v - m);
        }
    }
    let mut cov = centered.matmul_tn(&centered)?;
    for v in cov.data_mut() {
        *v /= n as f64;
    }

    let (eigvals, eigvecs) = jacobi_eigen(&cov);
    // Order components by eigenvalue descending, stable in the index so
    // degenerate directions keep canonical order.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eigvals[b]
            .partial_cmp(&eigvals[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&idx| {
            let mut v: Vec<f64> = (0..d).map(|r| eigvecs.get(r, idx)).collect();
            // Sign convention: largest-magnitude entry positive.
            let lead = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if v[lead] < 0.0 {
                for x in v.iter_mut() {
                    *x = -*x;
                }
            }
            v
        })
        .collect();

    Ok(features
        .records()
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let row = centered.row(i);
            let dot = |axis: &[f64]| row.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
            Projected2D {
                x: dot(&axes[0]),
                y: dot(&axes[1]),
                label: rec.label,
                provenance: rec.provenance,
            }
        })
        .collect())
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns). Adequate for the small
/// covariance sizes used here.
pub fn jacobi_eigen(sym: &Matrix) -> (Vec<f64>, Matrix) {
    let n = sym.rows();
    debug_assert_eq!(n, sym.cols());
    let mut a = sym.clone();
    let mut v = Matrix::identity(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q) * a.get(p, q);
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q of A.
                for i in 0..n {
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    a.set(i, p, c * aip - s * aiq);
                    a.set(i, q, s * aip + c * aiq);
                }
                for i in 0..n {
                    let api = a.get(p, i);
                    let aqi = a.get(q, i);
                    a.set(p, i, c * api - s * aqi);
                    a.set(q, i, s * api + c * aqi);
                }
                // Accumulate the rotation into V.
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| a.get(i, i)).collect();
    (eigvals, v)
}

pub fn save_projection_csv(points: &[Projected2D], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "x,y,label,provenance")?;
    for p in points {
        writeln!(w, "{},{},{},{}", p.x, p.y, p.label, p.provenance.name())?;
    }
    w.flush()?;
    Ok(())
}

/// Everything the stage-3 rerun needs, borrowed from trained artifacts.
pub struct SweepInputs<'a> {
    pub net: &'a EncoderNet,
    pub encoded: &'a FeatureDataset,
    pub pred: &'a NoisePredictor,
    pub sched: &'a NoiseSchedule,
    pub profile: &'a ClassProfile,
    pub test: &'a FeatureDataset,
    pub sampler: &'a SamplerSpec,
    pub policy: &'a AugmentPolicy,
    pub finetune: &'a FinetuneConfig,
    pub finetune_seed: u64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub acc_all: f64,
    pub acc_many: Option<f64>,
    pub acc_medium: Option<f64>,
    pub acc_few: Option<f64>,
}

/// Re-run stage 3 plus evaluation at each ratio. Seeds are shared across
/// ratios (they come from the inputs, not the ratio index), so each row
/// equals an individually-run pipeline at that ratio, and rows may be
/// computed in parallel.
pub fn ratio_sweep(inputs: &SweepInputs<'_>, ratios: &[f64]) -> Result<Vec<SweepRow>> {
    ratios
        .par_iter()
        .map(|&ratio| -> Result<SweepRow> {
            let policy = AugmentPolicy {
                ratio,
                ..inputs.policy.clone()
            };
            let mixed = augment(
                inputs.encoded,
                inputs.pred,
                inputs.sched,
                inputs.sampler,
                &policy,
                inputs.profile,
            )?;
            let (tuned, _) =
                finetune_head(inputs.net, &mixed, inputs.finetune, inputs.finetune_seed)?;
            let report = evaluate(&tuned, inputs.test, inputs.profile)?;
            Ok(SweepRow {
                ratio,
                acc_all: report.overall_accuracy,
                acc_many: report.group_accuracy.many,
                acc_medium: report.group_accuracy.medium,
                acc_few: report.group_accuracy.few,
            })
        })
        .collect()
}

pub fn save_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ratio,acc_all,acc_many,acc_medium,acc_few")?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.ratio,
            r.acc_all,
            cell(r.acc_many),
            cell(r.acc_medium),
            cell(r.acc_few)
        )?;
    }
    w.flush()?;
    Ok(())
}
