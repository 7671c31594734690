//! Sweep the augmentation ratio and tabulate accuracy, reusing one trained
//! encoder and diffusion model across all ratios.
//!
//! Run with: cargo run --release --example ratio_sweep

use latent_augment::config::ExperimentConfig;
use latent_augment::datasets::ClassProfile;
use latent_augment::diffusion::{train_ldm, SamplerSpec};
use latent_augment::encoder::{encode_dataset, train_stage1};
use latent_augment::evaluation::{ratio_sweep, save_sweep_csv, SweepInputs};
use latent_augment::numeric::derive_seed;
use latent_augment::pipeline::{build_datasets, seeds};

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 4;
    cfg.encoder.epochs = 40;
    cfg.diffusion.epochs = 300;
    cfg.finetune.epochs = 40;

    let (train, test) = build_datasets(&cfg).unwrap();
    let (net, _) = train_stage1(&train, &cfg.encoder, derive_seed(cfg.seed, seeds::STAGE1)).unwrap();
    let encoded = encode_dataset(&net, &train).unwrap();
    let profile = ClassProfile::from_dataset(&train, cfg.eval.grouping).unwrap();
    let sched = cfg.diffusion.schedule().unwrap();
    let (pred, _) = train_ldm(
        &encoded,
        &sched,
        &cfg.diffusion,
        derive_seed(cfg.seed, seeds::STAGE2),
    )
    .unwrap();
    let sampler = SamplerSpec::uniform(
        cfg.diffusion.num_steps,
        cfg.diffusion.reverse_steps,
        0.0,
        derive_seed(cfg.seed, seeds::GENERATE),
    )
    .unwrap();

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
    let ratios = [0.0, 0.1, 0.2, 0.4, 0.8, 1.6];
    let rows = ratio_sweep(&inputs, &ratios).unwrap();

    println!("ratio | all%    many%   medium%  few%");
    for r in &rows {
        println!(
            "{:5} | {:6.2}  {:6.2}  {:6.2}  {:6.2}",
            r.ratio,
            r.acc_all * 100.0,
            r.acc_many.unwrap() * 100.0,
            r.acc_medium.unwrap() * 100.0,
            r.acc_few.unwrap() * 100.0
        );
    }

    let out = std::env::temp_dir().join("latent-augment-example-sweep.csv");
    save_sweep_csv(&rows, &out).unwrap();
    println!("\nwrote {}", out.display());
}
