//! Labelled feature datasets: synthetic long-tailed generation, class
//! statistics and many/medium/few grouping, and LDMF/CSV persistence.
//!
//! One representation serves raw inputs, encoded features, and generated
//! pseudo-features; a provenance tag on each record tells them apart, which
//! is what lets the fine-tuning stage weight generated samples separately.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::persist::{
    read_f64_vec, read_u16, read_u32, read_u64, read_u8, write_f64_slice, write_u16, write_u32,
    write_u64, write_u8,
};
use crate::numeric::{Matrix, Rng};

pub const LDMF_MAGIC: &[u8; 4] = b"LDMF";
pub const LDMF_VERSION: u16 = 1;

/// Where a feature vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Drawn from the (synthetic) input distribution.
    Raw,
    /// Output of the trained encoder on a raw sample.
    Encoded,
    /// Sampled from the latent diffusion model.
    Generated,
}

impl Provenance {
    pub fn code(self) -> u8 {
        match self {
            Provenance::Raw => 0,
            Provenance::Encoded => 1,
            Provenance::Generated => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Provenance::Raw),
            1 => Ok(Provenance::Encoded),
            2 => Ok(Provenance::Generated),
            other => Err(Error::Format(format!("unknown provenance code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Provenance::Raw => "raw",
            Provenance::Encoded => "encoded",
            Provenance::Generated => "generated",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "raw" => Ok(Provenance::Raw),
            "encoded" => Ok(Provenance::Encoded),
            "generated" => Ok(Provenance::Generated),
            other => Err(Error::Format(format!("unknown provenance name {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub features: Vec<f64>,
    pub label: u32,
    pub provenance: Provenance,
}

/// A labelled vector dataset with a fixed dimension and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    dim: usize,
    num_classes: usize,
    records: Vec<FeatureRecord>,
}

impl FeatureDataset {
    pub fn new(dim: usize, num_classes: usize) -> Self {
        FeatureDataset {
            dim,
            num_classes,
            records: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn push(&mut self, record: FeatureRecord) -> Result<()> {
        if record.features.len() != self.dim {
            return Err(Error::Shape(format!(
                "record has {} features, dataset dim is {}",
                record.features.len(),
                self.dim
            )));
        }
        if record.label as usize >= self.num_classes {
            return Err(Error::Config(format!(
                "label {} out of range for {} classes",
                record.label, self.num_classes
            )));
        }
        self.records.push(record);
        Ok(())
    }

    /// Append every record of `other`; dims and class counts must match.
    pub fn extend_from(&mut self, other: &FeatureDataset) -> Result<()> {
        if other.dim != self.dim || other.num_classes != self.num_classes {
            return Err(Error::Shape(format!(
                "cannot merge dataset dim={} K={} into dim={} K={}",
                other.dim, other.num_classes, self.dim, self.num_classes
            )));
        }
        self.records.extend(other.records.iter().cloned());
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for r in &self.records {
            counts[r.label as usize] += 1;
        }
        counts
    }

    pub fn count_with_provenance(&self, p: Provenance) -> usize {
        self.records.iter().filter(|r| r.provenance == p).count()
    }

    /// Stack all feature vectors into a (len, dim) matrix, preserving order.
    pub fn features_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.records.len(), self.dim);
        for (i, r) in self.records.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&r.features);
        }
        m
    }

    pub fn labels(&self) -> Vec<u32> {
        self.records.iter().map(|r| r.label).collect()
    }
}

/// Per-class counts with the grouping derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Many,
    Medium,
    Few,
}

/// How classes are bucketed into many/medium/few.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GroupingRule {
    /// Absolute training-count thresholds: count > high is many,
    /// low <= count <= high is medium, count < low is few.
    Thresholds { low: usize, high: usize },
    /// Relative thirds by training count: top third many, bottom third few.
    Terciles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    counts: Vec<usize>,
    imbalance_factor: f64,
    groups: Vec<Group>,
}

impl ClassProfile {
    /// Build from per-class training counts. Every class must be populated.
    pub fn new(counts: Vec<usize>, rule: GroupingRule) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Config("class profile needs at least one class".into()));
        }
        let max = *counts.iter().max().unwrap();
        let min = *counts.iter().min().unwrap();
        if min == 0 {
            return Err(Error::Config(
                "class profile has an empty class (0 samples)".into(),
            ));
        }
        let groups = match rule {
            GroupingRule::Thresholds { low, high } => group_classes(&counts, low, high)?,
            GroupingRule::Terciles => group_terciles(&counts),
        };
        Ok(ClassProfile {
            imbalance_factor: max as f64 / min as f64,
            counts,
            groups,
        })
    }

    pub fn from_dataset(ds: &FeatureDataset, rule: GroupingRule) -> Result<Self> {
        ClassProfile::new(ds.class_counts(), rule)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn imbalance_factor(&self) -> f64 {
        self.imbalance_factor
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group_of(&self, class: usize) -> Group {
        self.groups[class]
    }

    pub fn classes_in(&self, group: Group) -> Vec<usize> {
        (0..self.counts.len())
            .filter(|&k| self.groups[k] == group)
            .collect()
    }
}

/// Threshold grouping: count > high is many, low <= count <= high is medium,
/// count < low is few.
pub fn group_classes(counts: &[usize], low: usize, high: usize) -> Result<Vec<Group>> {
    if low >= high {
        return Err(Error::Config(format!(
            "grouping thresholds need low < high, got ({low}, {high})"
        )));
    }
    Ok(counts
        .iter()
        .map(|&n| {
            if n > high {
                Group::Many
            } else if n < low {
                Group::Few
            } else {
                Group::Medium
            }
        })
        .collect())
}

/// Relative grouping: rank classes by count descending (ties broken by class
/// index), top third many, middle third medium, rest few.
pub fn group_terciles(counts: &[usize]) -> Vec<Group> {
    let k = counts.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut groups = vec![Group::Few; k];
    let third = k / 3;
    for (rank, &class) in order.iter().enumerate() {
        groups[class] = if rank < third {
            Group::Many
        } else if rank < 2 * third {
            Group::Medium
        } else {
            Group::Few
        };
    }
    groups
}

/// Exponential long-tail profile: class k gets
/// `round(n_max * IF^(-k / (K-1)))` samples, clamped to at least 1, so the
/// head class has n_max and the tail class has roughly n_max / IF.
pub fn longtail_counts(num_classes: usize, n_max: usize, imbalance_factor: f64) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "longtail profile needs at least 2 classes, got {num_classes}"
        )));
    }
    if n_max < 1 {
        return Err(Error::Config("n_max must be at least 1".into()));
    }
    if !imbalance_factor.is_finite() || imbalance_factor < 1.0 {
        return Err(Error::Config(format!(
            "imbalance factor must be >= 1, got {imbalance_factor}"
        )));
    }
    let denom = (num_classes - 1) as f64;
    Ok((0..num_classes)
        .map(|k| {
            let f = n_max as f64 * imbalance_factor.powf(-(k as f64) / denom);
            (f.round() as usize).max(1)
        })
        .collect())
}

/// Synthetic class-conditional Gaussian mixture: K means sharing one
/// isotropic standard deviation. Stand-in for a real long-tailed image set.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    means: Vec<Vec<f64>>,
    sigma: f64,
}

impl MixtureSpec {
    pub fn new(means: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::Config("mixture needs at least 2 classes".into()));
        }
        let dim = means[0].len();
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::Shape("mixture means have inconsistent dims".into()));
        }
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::Config(format!("sigma must be > 0, got {sigma}")));
        }
        for i in 0..means.len() {
            for j in (i + 1)..means.len() {
                if means[i] == means[j] {
                    return Err(Error::Config(format!("means {i} and {j} coincide")));
                }
            }
        }
        Ok(MixtureSpec { means, sigma })
    }

    /// Means drawn on a sphere of the given radius, which keeps class
    /// separability controllable by the radius/sigma ratio.
    pub fn on_sphere(
        num_classes: usize,
        dim: usize,
        radius: f64,
        sigma: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !radius.is_finite() || radius <= 0.0 {
            return Err(Error::Config(format!("radius must be > 0, got {radius}")));
        }
        let mut means = Vec::with_capacity(num_classes);
        for _ in 0..num_classes {
            let mut v = vec![0.0; dim];
            // Rejection on near-zero norms keeps the normalization stable.
            loop {
                rng.fill_normal(&mut v);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-9 {
                    for x in v.iter_mut() {
                        *x *= radius / norm;
                    }
                    break;
                }
            }
            means.push(v);
        }
        MixtureSpec::new(means, sigma)
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        &self.means[class]
    }
}

/// Draw `counts[k]` samples from class k's Gaussian, grouped by class in
/// ascending label order. Same seed, same dataset, bit for bit.
pub fn generate_mixture(
    spec: &MixtureSpec,
    counts: &[usize],
    rng: &mut Rng,
) -> Result<FeatureDataset> {
    if counts.len() != spec.num_classes() {
        return Err(Error::Shape(format!(
            "{} counts for {} classes",
            counts.len(),
            spec.num_classes()
        )));
    }
    let mut ds = FeatureDataset::new(spec.dim(), spec.num_classes());
    for (k, &n) in counts.iter().enumerate() {
        let mean = spec.mean(k);
        for _ in 0..n {
            let features: Vec<f64> = mean
                .iter()
                .map(|&m| m + spec.sigma() * rng.next_normal())
                .collect();
            ds.push(FeatureRecord {
                features,
                label: k as u32,
                provenance: Provenance::Raw,
            })?;
        }
    }
    Ok(ds)
}

/// Write the LDMF binary format: magic, version u16, dim u32, K u32, record
/// count u64, then per record label u32, provenance u8, dim f64 values.
pub fn save_features(ds: &FeatureDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(LDMF_MAGIC)?;
    write_u16(&mut w, LDMF_VERSION)?;
    write_u32(&mut w, ds.dim as u32)?;
    write_u32(&mut w, ds.num_classes as u32)?;
    write_u64(&mut w, ds.records.len() as u64)?;
    for r in &ds.records {
        write_u32(&mut w, r.label)?;
        write_u8(&mut w, r.provenance.code())?;
        write_f64_slice(&mut w, &r.features)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("truncated file".into())
        } else {
            Error::Io(e)
        }
    })?;
    if &magic != LDMF_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected LDMF",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u16(&mut r)?;
    if version != LDMF_VERSION {
        return Err(Error::Format(format!(
            "unsupported LDMF version {version}, expected {LDMF_VERSION}"
        )));
    }
    let dim = read_u32(&mut r)? as usize;
    let num_classes = read_u32(&mut r)? as usize;
    let count = read_u64(&mut r)? as usize;
    let mut ds = FeatureDataset::new(dim, num_classes);
    for _ in 0..count {
        let label = read_u32(&mut r)?;
        let provenance = Provenance::from_code(read_u8(&mut r)?)?;
        let features = read_f64_vec(&mut r, dim)?;
        ds.push(FeatureRecord {
            features,
            label,
            provenance,
        })?;
    }
    Ok(ds)
}

/// CSV export for plotting and interop. Header: label,provenance,f0..f{d-1}.
pub fn save_csv(ds: &FeatureDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "label,provenance")?;
    for i in 0..ds.dim {
        write!(w, ",f{i}")?;
    }
    writeln!(w)?;
    for r in &ds.records {
        write!(w, "{},{}", r.label, r.provenance.name())?;
        for v in &r.features {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV import. The class count is taken as max(label)+1 unless a larger
/// `num_classes` is supplied.
pub fn load_csv(path: &Path, num_classes: Option<usize>) -> Result<FeatureDataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))??;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() < 2 || fields[0] != "label" || fields[1] != "provenance" {
        return Err(Error::Format(
            "CSV header must start with label,provenance".into(),
        ));
    }
    let dim = fields.len() - 2;
    let mut records = Vec::new();
    let mut max_label = 0u32;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != dim + 2 {
            return Err(Error::Format(format!(
                "CSV line {}: expected {} columns, got {}",
                lineno + 2,
                dim + 2,
                cols.len()
            )));
        }
        let label: u32 = cols[0]
            .parse()
            .map_err(|_| Error::Format(format!("CSV line {}: bad label", lineno + 2)))?;
        max_label = max_label.max(label);
        let provenance = Provenance::from_name(cols[1])?;
        let features = cols[2..]
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| Error::Format(format!("CSV line {}: bad value", lineno + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        records.push(FeatureRecord {
            features,
            label,
            provenance,
        });
    }
    let k = num_classes.unwrap_or((max_label + 1) as usize);
    let mut ds = FeatureDataset::new(dim, k);
    for r in records {
        ds.push(r)?;
    }
    Ok(ds)
}
