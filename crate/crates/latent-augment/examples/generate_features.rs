//! Stage 2: train the class-conditional noise predictor on encoded features
//! and sample pseudo-features with the deterministic DDIM sampler.
//!
//! Run with: cargo run --release --example generate_features

use latent_augment::config::ExperimentConfig;
use latent_augment::diffusion::{sample_features, train_ldm, SamplerSpec};
use latent_augment::encoder::{encode_dataset, train_stage1};
use latent_augment::numeric::derive_seed;
use latent_augment::pipeline::{build_datasets, seeds};

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 11;
    cfg.dataset.num_classes = 4;
    cfg.dataset.n_max = 200;
    cfg.dataset.imbalance_factor = 20.0;
    cfg.dataset.mean_radius = 4.0;
    cfg.encoder.epochs = 30;
    cfg.diffusion.epochs = 250;

    let (train, _) = build_datasets(&cfg).unwrap();
    let (net, _) = train_stage1(&train, &cfg.encoder, derive_seed(cfg.seed, seeds::STAGE1)).unwrap();
    let encoded = encode_dataset(&net, &train).unwrap();

    let sched = cfg.diffusion.schedule().unwrap();
    println!(
        "schedule: T={}, alpha_bar(T)={:.2e} (terminal state is near-pure noise)",
        sched.num_steps(),
        sched.alpha_bar(sched.num_steps())
    );

    let (pred, report) = train_ldm(
        &encoded,
        &sched,
        &cfg.diffusion,
        derive_seed(cfg.seed, seeds::STAGE2),
    )
    .unwrap();
    println!(
        "trained noise predictor: loss {:.4} -> {:.4} over {} epochs",
        report.losses.first().unwrap(),
        report.losses.last().unwrap(),
        report.epochs
    );

    // 25 pseudo-features per class, deterministic at eta = 0.
    let spec = SamplerSpec::uniform(
        cfg.diffusion.num_steps,
        cfg.diffusion.reverse_steps,
        0.0,
        derive_seed(cfg.seed, seeds::GENERATE),
    )
    .unwrap();
    let labels: Vec<u32> = (0..cfg.dataset.num_classes as u32)
        .flat_map(|k| std::iter::repeat_n(k, 25))
        .collect();
    let generated = sample_features(&sched, &pred, &spec, &labels).unwrap();

    // How close do conditional samples land to their class's encoded centroid?
    let k = encoded.num_classes();
    let dim = encoded.dim();
    let mut centroids = vec![vec![0.0; dim]; k];
    let counts = encoded.class_counts();
    for r in encoded.records() {
        for (c, &v) in centroids[r.label as usize].iter_mut().zip(&r.features) {
            *c += v;
        }
    }
    for (kk, c) in centroids.iter_mut().enumerate() {
        for v in c.iter_mut() {
            *v /= counts[kk] as f64;
        }
    }
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for r in generated.records() {
        let nearest = (0..k)
            .min_by(|&a, &b| {
                let da: f64 = r.features.iter().zip(&centroids[a]).map(|(x, c)| (x - c) * (x - c)).sum();
                let db: f64 = r.features.iter().zip(&centroids[b]).map(|(x, c)| (x - c) * (x - c)).sum();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        totals[r.label as usize] += 1;
        if nearest == r.label as usize {
            hits[r.label as usize] += 1;
        }
    }
    println!(
        "generated {} pseudo-features; share nearest their own class centroid:",
        generated.len()
    );
    for kk in 0..k {
        println!(
            "  class {kk} ({:3} training samples): {:3.0}%",
            counts[kk],
            100.0 * hits[kk] as f64 / totals[kk] as f64
        );
    }
    println!("tail classes generate less cleanly: they gave the model the fewest examples");
}
