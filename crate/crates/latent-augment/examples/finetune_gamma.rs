//! Stage 3: fine-tune the classification head on encoded plus generated
//! features and study the effect of the generated-term weight gamma.
//!
//! Run with: cargo run --release --example finetune_gamma

use latent_augment::augmentation::augment;
use latent_augment::config::ExperimentConfig;
use latent_augment::datasets::ClassProfile;
use latent_augment::diffusion::{train_ldm, SamplerSpec};
use latent_augment::encoder::{encode_dataset, train_stage1};
use latent_augment::evaluation::evaluate;
use latent_augment::finetune::{finetune_head, FinetuneConfig};
use latent_augment::numeric::derive_seed;
use latent_augment::pipeline::{build_datasets, seeds};

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 2;
    cfg.encoder.epochs = 40;
    cfg.diffusion.epochs = 300;
    cfg.augment.ratio = 0.4;

    let (train, test) = build_datasets(&cfg).unwrap();
    let (net, _) = train_stage1(&train, &cfg.encoder, derive_seed(cfg.seed, seeds::STAGE1)).unwrap();
    let encoded = encode_dataset(&net, &train).unwrap();
    let profile = ClassProfile::from_dataset(&train, cfg.eval.grouping).unwrap();
    let baseline = evaluate(&net, &test, &profile).unwrap();
    println!(
        "stage-1 baseline: all {:.2}%  few {:.2}%",
        baseline.overall_accuracy * 100.0,
        baseline.group_accuracy.few.unwrap() * 100.0
    );

    let sched = cfg.diffusion.schedule().unwrap();
    let (pred, _) = train_ldm(
        &encoded,
        &sched,
        &cfg.diffusion,
        derive_seed(cfg.seed, seeds::STAGE2),
    )
    .unwrap();
    let spec = SamplerSpec::uniform(
        cfg.diffusion.num_steps,
        cfg.diffusion.reverse_steps,
        0.0,
        derive_seed(cfg.seed, seeds::GENERATE),
    )
    .unwrap();
    let mixed = augment(&encoded, &pred, &sched, &spec, &cfg.augment, &profile).unwrap();
    println!(
        "fine-tuning set: {} encoded + {} generated\n",
        mixed.len() - latent_augment::augmentation::generated_counts(&mixed).iter().sum::<usize>(),
        latent_augment::augmentation::generated_counts(&mixed).iter().sum::<usize>()
    );

    println!("gamma | all%   few%   (few delta vs baseline)");
    for gamma in [0.0, 0.01, 0.05, 0.2, 1.0] {
        let ft = FinetuneConfig {
            gamma,
            epochs: 40,
            ..Default::default()
        };
        let (tuned, _) =
            finetune_head(&net, &mixed, &ft, derive_seed(cfg.seed, seeds::STAGE3)).unwrap();
        let eval = evaluate(&tuned, &test, &profile).unwrap();
        println!(
            "{gamma:5} | {:.2}  {:.2}  ({:+.2})",
            eval.overall_accuracy * 100.0,
            eval.group_accuracy.few.unwrap() * 100.0,
            (eval.group_accuracy.few.unwrap() - baseline.group_accuracy.few.unwrap()) * 100.0
        );
    }
}
