//! The full three-stage pipeline through the artifact directory: encode,
//! train-diffusion, generate, finetune, eval. Equivalent to
//! `latent-augment pipeline --out <dir>`.
//!
//! Run with: cargo run --release --example full_pipeline

use latent_augment::config::ExperimentConfig;
use latent_augment::evaluation::EvalReport;
use latent_augment::pipeline::{run_pipeline, RunPaths};

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 1;
    cfg.encoder.epochs = 40;
    cfg.diffusion.epochs = 300;
    cfg.finetune.epochs = 40;

    let out = std::env::temp_dir().join("latent-augment-example-pipeline");
    let _ = std::fs::remove_dir_all(&out);
    println!("running pipeline into {} ...", out.display());
    let manifest = run_pipeline(&cfg, &out).unwrap();
    println!("stages:");
    for (stage, secs) in &manifest.stage_seconds {
        println!("  {stage:<16} {secs:6.1}s");
    }
    println!("artifacts: {}", manifest.artifacts.len());
    for a in &manifest.artifacts {
        println!("  {:<22} {:>9} bytes  {}", a.name, a.bytes, a.content_hash);
    }

    let paths = RunPaths::new(&out);
    let load = |p: std::path::PathBuf| -> EvalReport {
        serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
    };
    let baseline = load(paths.eval_baseline());
    let augmented = load(paths.eval_augmented());
    let pct = |v: Option<f64>| v.map(|x| x * 100.0).unwrap_or(f64::NAN);
    println!("\n            all     many   medium   few");
    println!(
        "baseline  {:6.2}  {:6.2}  {:6.2}  {:6.2}",
        baseline.overall_accuracy * 100.0,
        pct(baseline.group_accuracy.many),
        pct(baseline.group_accuracy.medium),
        pct(baseline.group_accuracy.few)
    );
    println!(
        "augmented {:6.2}  {:6.2}  {:6.2}  {:6.2}",
        augmented.overall_accuracy * 100.0,
        pct(augmented.group_accuracy.many),
        pct(augmented.group_accuracy.medium),
        pct(augmented.group_accuracy.few)
    );
    println!(
        "\nfew-group delta: {:+.2} points",
        (pct(augmented.group_accuracy.few) - pct(baseline.group_accuracy.few))
    );
}
