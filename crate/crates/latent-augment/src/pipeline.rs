//! Pipeline orchestration: the full three-stage run and each stage as an
//! individually runnable step over a shared artifact directory.
//!
//! The pipeline command is literally the stage functions chained in order,
//! so an end-to-end run and a sequence of stage commands over the same
//! config produce byte-identical artifacts. Per-stage randomness is derived
//! from the global seed by labeled hashing; nothing depends on wall time or
//! scheduling.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::augmentation::{generated_counts, plan_labels};
use crate::config::ExperimentConfig;
use crate::datasets::{
    generate_mixture, load_features, longtail_counts, save_features, ClassProfile, FeatureDataset,
    MixtureSpec,
};
use crate::diffusion::{sample_features, train_ldm, NoisePredictor, SamplerSpec};
use crate::encoder::{encode_dataset, train_stage1, EncoderNet};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate, project_2d, ratio_sweep, save_projection_csv, save_sweep_csv, EvalReport,
    SweepInputs,
};
use crate::finetune::finetune_head;
use crate::numeric::{derive_seed, fnv1a64, Rng};

/// Artifact layout within a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    out: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path) -> Self {
        RunPaths { out: out.to_path_buf() }
    }

    pub fn dir(&self) -> &Path {
        &self.out
    }

    pub fn config(&self) -> PathBuf {
        self.out.join("config.json")
    }
    pub fn raw_train(&self) -> PathBuf {
        self.out.join("raw_train.ldmf")
    }
    pub fn raw_test(&self) -> PathBuf {
        self.out.join("raw_test.ldmf")
    }
    pub fn encoder(&self) -> PathBuf {
        self.out.join("encoder.ldmn")
    }
    pub fn encoded(&self) -> PathBuf {
        self.out.join("encoded.ldmf")
    }
    pub fn stage1_report(&self) -> PathBuf {
        self.out.join("stage1_report.json")
    }
    pub fn predictor(&self) -> PathBuf {
        self.out.join("predictor.ldmn")
    }
    pub fn stage2_report(&self) -> PathBuf {
        self.out.join("stage2_report.json")
    }
    pub fn generated(&self) -> PathBuf {
        self.out.join("generated.ldmf")
    }
    pub fn finetuned(&self) -> PathBuf {
        self.out.join("finetuned.ldmn")
    }
    pub fn finetune_report(&self) -> PathBuf {
        self.out.join("finetune_report.json")
    }
    pub fn eval_baseline(&self) -> PathBuf {
        self.out.join("eval_baseline.json")
    }
    pub fn eval_augmented(&self) -> PathBuf {
        self.out.join("eval_augmented.json")
    }
    pub fn projection(&self) -> PathBuf {
        self.out.join("projection.csv")
    }
    pub fn sweep(&self) -> PathBuf {
        self.out.join("sweep.csv")
    }
    pub fn manifest(&self) -> PathBuf {
        self.out.join("manifest.json")
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub bytes: u64,
    /// FNV-1a of the file contents, hex.
    pub content_hash: String,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub config_fingerprint: String,
    pub tool_version: String,
    pub artifacts: Vec<ArtifactEntry>,
    pub stage_seconds: Vec<(String, f64)>,
    /// Set when the run aborted; artifacts listed are the completed ones.
    pub failed_stage: Option<String>,
}

/// Seed labels, one per stochastic consumer.
pub mod seeds {
    pub const DATASET_MEANS: &str = "dataset/means";
    pub const DATASET_TRAIN: &str = "dataset/train";
    pub const DATASET_TEST: &str = "dataset/test";
    pub const STAGE1: &str = "stage1";
    pub const STAGE2: &str = "stage2";
    pub const GENERATE: &str = "generate";
    pub const STAGE3: &str = "stage3";
}

fn tag_stage(stage: &str, e: Error) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("[stage {stage}] {m}")),
        Error::Config(m) => Error::Config(format!("[stage {stage}] {m}")),
        Error::Policy(m) => Error::Policy(format!("[stage {stage}] {m}")),
        Error::Artifact(m) => Error::Artifact(format!("[stage {stage}] {m}")),
        Error::Format(m) => Error::Format(format!("[stage {stage}] {m}")),
        Error::Numeric(m) => Error::Numeric(format!("[stage {stage}] {m}")),
        Error::Io(e) => Error::Io(e),
    }
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Artifact(format!(
            "missing artifact {} (produced by `stage {produced_by}`)",
            path.display()
        )));
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Format(format!("serialize {}: {e}", path.display())))?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Build the synthetic train/test datasets for a config. Deterministic in
/// the config seed.
pub fn build_datasets(cfg: &ExperimentConfig) -> Result<(FeatureDataset, FeatureDataset)> {
    let d = &cfg.dataset;
    let mut means_rng = Rng::new(derive_seed(cfg.seed, seeds::DATASET_MEANS));
    let spec = MixtureSpec::on_sphere(
        d.num_classes,
        d.dim,
        d.mean_radius,
        d.sigma,
        &mut means_rng,
    )?;
    let counts = longtail_counts(d.num_classes, d.n_max, d.imbalance_factor)?;
    let mut train_rng = Rng::new(derive_seed(cfg.seed, seeds::DATASET_TRAIN));
    let train = generate_mixture(&spec, &counts, &mut train_rng)?;
    let mut test_rng = Rng::new(derive_seed(cfg.seed, seeds::DATASET_TEST));
    let test = generate_mixture(&spec, &vec![d.test_per_class; d.num_classes], &mut test_rng)?;
    Ok((train, test))
}

/// The underlying mixture of a config, exposed for oracle-style analyses
/// (e.g. augmenting from the true class distributions).
pub fn dataset_mixture(cfg: &ExperimentConfig) -> Result<MixtureSpec> {
    let d = &cfg.dataset;
    let mut means_rng = Rng::new(derive_seed(cfg.seed, seeds::DATASET_MEANS));
    MixtureSpec::on_sphere(d.num_classes, d.dim, d.mean_radius, d.sigma, &mut means_rng)
}

fn load_features_checked(
    path: &Path,
    cfg_dim: usize,
    cfg_k: usize,
    produced_by: &str,
) -> Result<FeatureDataset> {
    require(path, produced_by)?;
    let ds = load_features(path)?;
    if ds.dim() != cfg_dim || ds.num_classes() != cfg_k {
        return Err(Error::Artifact(format!(
            "{}: dim/classes ({}, {}) do not match config ({cfg_dim}, {cfg_k})",
            path.display(),
            ds.dim(),
            ds.num_classes()
        )));
    }
    Ok(ds)
}

fn load_encoder_checked(paths: &RunPaths, cfg: &ExperimentConfig) -> Result<EncoderNet> {
    require(&paths.encoder(), "encode")?;
    let net = EncoderNet::load(&paths.encoder())?;
    if net.input_dim() != cfg.dataset.dim
        || net.latent_dim() != cfg.encoder.latent_dim
        || net.num_classes() != cfg.dataset.num_classes
    {
        return Err(Error::Artifact(format!(
            "{}: model dims ({}, {}, {}) do not match config ({}, {}, {})",
            paths.encoder().display(),
            net.input_dim(),
            net.latent_dim(),
            net.num_classes(),
            cfg.dataset.dim,
            cfg.encoder.latent_dim,
            cfg.dataset.num_classes
        )));
    }
    Ok(net)
}

fn load_predictor_checked(paths: &RunPaths, cfg: &ExperimentConfig) -> Result<NoisePredictor> {
    require(&paths.predictor(), "train-diffusion")?;
    let pred = NoisePredictor::load(&paths.predictor())?;
    if pred.latent_dim() != cfg.encoder.latent_dim
        || pred.num_classes() != cfg.dataset.num_classes
    {
        return Err(Error::Artifact(format!(
            "{}: predictor dims ({}, {}) do not match config ({}, {})",
            paths.predictor().display(),
            pred.latent_dim(),
            pred.num_classes(),
            cfg.encoder.latent_dim,
            cfg.dataset.num_classes
        )));
    }
    let sched = cfg.diffusion.schedule()?;
    pred.validate_schedule(&sched)?;
    Ok(pred)
}

fn profile_from_train(paths: &RunPaths, cfg: &ExperimentConfig) -> Result<ClassProfile> {
    let train = load_features_checked(
        &paths.raw_train(),
        cfg.dataset.dim,
        cfg.dataset.num_classes,
        "encode",
    )?;
    ClassProfile::from_dataset(&train, cfg.eval.grouping)
}

/// Stage `encode`: synthesize the datasets, train the stage-1 classifier,
/// and write the encoded feature set.
pub fn stage_encode(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<Vec<PathBuf>> {
    let (train, test) = build_datasets(cfg)?;
    save_features(&train, &paths.raw_train())?;
    save_features(&test, &paths.raw_test())?;
    let (net, report) = train_stage1(&train, &cfg.encoder, derive_seed(cfg.seed, seeds::STAGE1))?;
    let encoded = encode_dataset(&net, &train)?;
    net.save(&paths.encoder())?;
    save_features(&encoded, &paths.encoded())?;
    write_json(&report, &paths.stage1_report())?;
    Ok(vec![
        paths.raw_train(),
        paths.raw_test(),
        paths.encoder(),
        paths.encoded(),
        paths.stage1_report(),
    ])
}

/// Stage `train-diffusion`: fit the class-conditional noise predictor on
/// the encoded features.
pub fn stage_train_diffusion(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<Vec<PathBuf>> {
    let encoded = load_features_checked(
        &paths.encoded(),
        cfg.encoder.latent_dim,
        cfg.dataset.num_classes,
        "encode",
    )?;
    let sched = cfg.diffusion.schedule()?;
    let (pred, report) = train_ldm(
        &encoded,
        &sched,
        &cfg.diffusion,
        derive_seed(cfg.seed, seeds::STAGE2),
    )?;
    pred.save(&paths.predictor())?;
    write_json(&report, &paths.stage2_report())?;
    Ok(vec![paths.predictor(), paths.stage2_report()])
}

/// Stage `generate`: sample pseudo-features according to the augment
/// policy. A zero ratio writes an empty feature file.
pub fn stage_generate(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<Vec<PathBuf>> {
    let pred = load_predictor_checked(paths, cfg)?;
    let profile = profile_from_train(paths, cfg)?;
    let plan = plan_labels(&cfg.augment, &profile)?;
    let generated = if plan.is_empty() {
        FeatureDataset::new(cfg.encoder.latent_dim, cfg.dataset.num_classes)
    } else {
        let sched = cfg.diffusion.schedule()?;
        let spec = SamplerSpec::uniform(
            cfg.diffusion.num_steps,
            cfg.diffusion.reverse_steps,
            cfg.diffusion.eta,
            derive_seed(cfg.seed, seeds::GENERATE),
        )?;
        sample_features(&sched, &pred, &spec, &plan)?
    };
    save_features(&generated, &paths.generated())?;
    Ok(vec![paths.generated()])
}

/// Stage `finetune`: re-fit the classification head on encoded plus
/// generated features with the gamma-weighted loss.
pub fn stage_finetune(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<Vec<PathBuf>> {
    let net = load_encoder_checked(paths, cfg)?;
    let encoded = load_features_checked(
        &paths.encoded(),
        cfg.encoder.latent_dim,
        cfg.dataset.num_classes,
        "encode",
    )?;
    let generated = load_features_checked(
        &paths.generated(),
        cfg.encoder.latent_dim,
        cfg.dataset.num_classes,
        "generate",
    )?;
    let mut mixed = encoded;
    mixed.extend_from(&generated)?;
    let (tuned, report) = finetune_head(
        &net,
        &mixed,
        &cfg.finetune,
        derive_seed(cfg.seed, seeds::STAGE3),
    )?;
    tuned.save(&paths.finetuned())?;
    write_json(&report, &paths.finetune_report())?;
    Ok(vec![paths.finetuned(), paths.finetune_report()])
}

fn stamped(mut report: EvalReport, cfg: &ExperimentConfig) -> EvalReport {
    report.config_fingerprint = cfg.fingerprint();
    report.seed = cfg.seed;
    report
}

/// Stage `eval`: evaluate the stage-1 baseline (always) and the fine-tuned
/// classifier (when present) on the balanced test set, and export the 2D
/// projection of encoded plus generated features.
pub fn stage_eval(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<Vec<PathBuf>> {
    let net = load_encoder_checked(paths, cfg)?;
    let test = load_features_checked(
        &paths.raw_test(),
        cfg.dataset.dim,
        cfg.dataset.num_classes,
        "encode",
    )?;
    let profile = profile_from_train(paths, cfg)?;
    let mut out = Vec::new();

    let baseline = stamped(evaluate(&net, &test, &profile)?, cfg);
    write_json(&baseline, &paths.eval_baseline())?;
    out.push(paths.eval_baseline());

    if paths.finetuned().exists() {
        let tuned = EncoderNet::load(&paths.finetuned())?;
        let augmented = stamped(evaluate(&tuned, &test, &profile)?, cfg);
        write_json(&augmented, &paths.eval_augmented())?;
        out.push(paths.eval_augmented());
    }

    // Fig.-style projection of the latent sets, when enough data exists.
    if paths.encoded().exists() {
        let mut latent = load_features(&paths.encoded())?;
        if paths.generated().exists() {
            latent.extend_from(&load_features(&paths.generated())?)?;
        }
        if latent.len() >= 2 && latent.dim() >= 2 {
            let points = project_2d(&latent)?;
            save_projection_csv(&points, &paths.projection())?;
            out.push(paths.projection());
        }
    }
    Ok(out)
}

/// Stage `sweep`: re-run stage 3 and evaluation across augmentation ratios,
/// sharing the trained stage-1/2 artifacts and all seeds.
pub fn stage_sweep(
    cfg: &ExperimentConfig,
    paths: &RunPaths,
    ratios: &[f64],
) -> Result<Vec<PathBuf>> {
    if ratios.is_empty() {
        return Err(Error::Config("sweep needs at least one ratio".into()));
    }
    let net = load_encoder_checked(paths, cfg)?;
    let pred = load_predictor_checked(paths, cfg)?;
    let encoded = load_features_checked(
        &paths.encoded(),
        cfg.encoder.latent_dim,
        cfg.dataset.num_classes,
        "encode",
    )?;
    let test = load_features_checked(
        &paths.raw_test(),
        cfg.dataset.dim,
        cfg.dataset.num_classes,
        "encode",
    )?;
    let profile = profile_from_train(paths, cfg)?;
    let sched = cfg.diffusion.schedule()?;
    let sampler = SamplerSpec::uniform(
        cfg.diffusion.num_steps,
        cfg.diffusion.reverse_steps,
        cfg.diffusion.eta,
        derive_seed(cfg.seed, seeds::GENERATE),
    )?;
    let inputs = SweepInputs {
        net: &net,
        encoded: &encoded,
        pred: &pred,
        sched: &sched,
        profile: &profile,
        test: &test,
        sampler: &sampler,
        policy: &cfg.augment,
        finetune: &cfg.finetune,
        finetune_seed: derive_seed(cfg.seed, seeds::STAGE3),
    };
    let rows = ratio_sweep(&inputs, ratios)?;
    save_sweep_csv(&rows, &paths.sweep())?;
    Ok(vec![paths.sweep()])
}

pub const STAGE_NAMES: &[&str] = &[
    "encode",
    "train-diffusion",
    "generate",
    "finetune",
    "eval",
    "sweep",
];

/// Run a single named stage. `ratios` only applies to `sweep`.
pub fn run_stage(
    name: &str,
    cfg: &ExperimentConfig,
    out_dir: &Path,
    ratios: Option<&[f64]>,
) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let paths = RunPaths::new(out_dir);
    let start = Instant::now();
    let produced = match name {
        "encode" => stage_encode(cfg, &paths),
        "train-diffusion" => stage_train_diffusion(cfg, &paths),
        "generate" => stage_generate(cfg, &paths),
        "finetune" => stage_finetune(cfg, &paths),
        "eval" => stage_eval(cfg, &paths),
        "sweep" => {
            let default_ratios = [0.0, 0.1, 0.2, 0.4, 0.8];
            stage_sweep(cfg, &paths, ratios.unwrap_or(&default_ratios))
        }
        other => Err(Error::Config(format!(
            "unknown stage {other:?}; expected one of {STAGE_NAMES:?}"
        ))),
    }
    .map_err(|e| tag_stage(name, e))?;
    let manifest = RunManifest {
        config_fingerprint: cfg.fingerprint(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        artifacts: artifact_entries(&produced)?,
        stage_seconds: vec![(name.to_string(), start.elapsed().as_secs_f64())],
        failed_stage: None,
    };
    write_json(&manifest, &paths.manifest())?;
    Ok(manifest)
}

/// Run the full pipeline: encode, train-diffusion, generate, finetune,
/// eval. Every run evaluates both the stage-1 baseline and the fine-tuned
/// classifier. On failure a partial manifest flags the failed stage.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let paths = RunPaths::new(out_dir);
    fs::write(paths.config(), cfg.canonical_json())?;

    let mut produced: Vec<PathBuf> = vec![paths.config()];
    let mut stage_seconds = Vec::new();
    type StageFn = fn(&ExperimentConfig, &RunPaths) -> Result<Vec<PathBuf>>;
    let stages: &[(&str, StageFn)] = &[
        ("encode", stage_encode),
        ("train-diffusion", stage_train_diffusion),
        ("generate", stage_generate),
        ("finetune", stage_finetune),
        ("eval", stage_eval),
    ];
    for (name, stage) in stages {
        let start = Instant::now();
        match stage(cfg, &paths) {
            Ok(mut artifacts) => {
                produced.append(&mut artifacts);
                stage_seconds.push((name.to_string(), start.elapsed().as_secs_f64()));
            }
            Err(e) => {
                let manifest = RunManifest {
                    config_fingerprint: cfg.fingerprint(),
                    tool_version: env!("CARGO_PKG_VERSION").to_string(),
                    artifacts: artifact_entries(&produced)?,
                    stage_seconds,
                    failed_stage: Some(name.to_string()),
                };
                write_json(&manifest, &paths.manifest())?;
                return Err(tag_stage(name, e));
            }
        }
    }

    let manifest = RunManifest {
        config_fingerprint: cfg.fingerprint(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        artifacts: artifact_entries(&produced)?,
        stage_seconds,
        failed_stage: None,
    };
    write_json(&manifest, &paths.manifest())?;
    Ok(manifest)
}

fn artifact_entries(paths: &[PathBuf]) -> Result<Vec<ArtifactEntry>> {
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            Ok(ArtifactEntry {
                name: p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string()),
                bytes: bytes.len() as u64,
                content_hash: format!("{:016x}", fnv1a64(&bytes)),
            })
        })
        .collect()
}

/// Convenience for checks and tests: the per-class generated counts a
/// pipeline's generate stage produced.
pub fn generated_counts_from_dir(paths: &RunPaths) -> Result<Vec<usize>> {
    let generated = load_features(&paths.generated())?;
    Ok(generated_counts(&generated))
}

/// Sanity helper mirroring the stage-3 input: encoded ∪ generated with
/// provenance preserved.
pub fn load_mixed(paths: &RunPaths) -> Result<FeatureDataset> {
    let mut mixed = load_features(&paths.encoded())?;
    mixed.extend_from(&load_features(&paths.generated())?)?;
    Ok(mixed)
}

/// True Bayes-style reference accuracy of the config's mixture: nearest
/// class mean on the balanced test set.
pub fn nearest_mean_accuracy(cfg: &ExperimentConfig) -> Result<f64> {
    let spec = dataset_mixture(cfg)?;
    let (_, test) = build_datasets(cfg)?;
    let mut correct = 0usize;
    for r in test.records() {
        let mut best = (f64::INFINITY, 0usize);
        for k in 0..spec.num_classes() {
            let d: f64 = r
                .features
                .iter()
                .zip(spec.mean(k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        if best.1 == r.label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}
