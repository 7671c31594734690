//! Stage 1: train the classifier f(x) = G(E(x)) on long-tailed data with
//! plain cross entropy, extract encoded features, and report the baseline's
//! many/medium/few accuracy gap.
//!
//! Run with: cargo run --release --example train_encoder

use latent_augment::config::ExperimentConfig;
use latent_augment::datasets::ClassProfile;
use latent_augment::encoder::{encode_dataset, train_stage1};
use latent_augment::evaluation::evaluate;
use latent_augment::numeric::derive_seed;
use latent_augment::pipeline::{build_datasets, seeds};

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 3;
    cfg.encoder.epochs = 40;

    let (train, test) = build_datasets(&cfg).unwrap();
    println!(
        "train: {} records over {} classes (counts {:?})",
        train.len(),
        train.num_classes(),
        train.class_counts()
    );

    let (net, report) =
        train_stage1(&train, &cfg.encoder, derive_seed(cfg.seed, seeds::STAGE1)).unwrap();
    println!(
        "trained {} epochs, final train accuracy {:.1}%, loss {:.4} -> {:.4}",
        report.epochs,
        report.final_train_accuracy.unwrap() * 100.0,
        report.losses.first().unwrap(),
        report.losses.last().unwrap()
    );

    let encoded = encode_dataset(&net, &train).unwrap();
    println!(
        "encoded features: {} records in latent dim {}",
        encoded.len(),
        encoded.dim()
    );

    let profile = ClassProfile::from_dataset(&train, cfg.eval.grouping).unwrap();
    let eval = evaluate(&net, &test, &profile).unwrap();
    println!(
        "baseline accuracy: all {:.1}%  many {:.1}%  medium {:.1}%  few {:.1}%",
        eval.overall_accuracy * 100.0,
        eval.group_accuracy.many.unwrap() * 100.0,
        eval.group_accuracy.medium.unwrap() * 100.0,
        eval.group_accuracy.few.unwrap() * 100.0
    );
    println!("note the gap between head and tail groups: that gap is what augmentation targets");
}
