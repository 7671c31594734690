//! Project encoded and generated features of a tail class onto their top-2
//! principal components and export plot-ready CSV. A healthy generator's
//! samples overlap the encoded cluster while filling it out.
//!
//! Run with: cargo run --release --example project_features

use latent_augment::augmentation::{augment, AugmentPolicy, AugmentTarget, LabelMode};
use latent_augment::config::ExperimentConfig;
use latent_augment::datasets::{ClassProfile, FeatureDataset, Provenance};
use latent_augment::diffusion::{train_ldm, SamplerSpec};
use latent_augment::encoder::{encode_dataset, train_stage1};
use latent_augment::evaluation::{project_2d, save_projection_csv};
use latent_augment::numeric::derive_seed;
use latent_augment::pipeline::{build_datasets, seeds};

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 6;
    cfg.encoder.epochs = 40;
    cfg.diffusion.epochs = 300;
    // Generate three pseudo-features per encoded feature for the tail.
    cfg.augment = AugmentPolicy {
        target: AugmentTarget::Few,
        ratio: 3.0,
        mode: LabelMode::Proportional,
    };

    let (train, _) = build_datasets(&cfg).unwrap();
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
    let spec = SamplerSpec::uniform(
        cfg.diffusion.num_steps,
        cfg.diffusion.reverse_steps,
        0.0,
        derive_seed(cfg.seed, seeds::GENERATE),
    )
    .unwrap();
    let mixed = augment(&encoded, &pred, &sched, &spec, &cfg.augment, &profile).unwrap();

    // Keep only the last (tail) class, both provenances.
    let tail = (cfg.dataset.num_classes - 1) as u32;
    let mut tail_set = FeatureDataset::new(mixed.dim(), mixed.num_classes());
    for r in mixed.records().iter().filter(|r| r.label == tail) {
        tail_set.push(r.clone()).unwrap();
    }
    let enc = tail_set.count_with_provenance(Provenance::Encoded);
    let gen = tail_set.count_with_provenance(Provenance::Generated);
    println!("tail class {tail}: {enc} encoded + {gen} generated features");

    let points = project_2d(&tail_set).unwrap();
    let out = std::env::temp_dir().join("latent-augment-example-projection.csv");
    save_projection_csv(&points, &out).unwrap();
    println!("wrote {} (columns x,y,label,provenance)", out.display());

    // Quick overlap readout: centroid distance between the two point sets,
    // in units of the encoded cloud's spread.
    let centroid = |prov: Provenance| -> (f64, f64) {
        let pts: Vec<&_> = points.iter().filter(|p| p.provenance == prov).collect();
        let n = pts.len() as f64;
        (
            pts.iter().map(|p| p.x).sum::<f64>() / n,
            pts.iter().map(|p| p.y).sum::<f64>() / n,
        )
    };
    let (ex, ey) = centroid(Provenance::Encoded);
    let (gx, gy) = centroid(Provenance::Generated);
    let spread = {
        let pts: Vec<&_> = points
            .iter()
            .filter(|p| p.provenance == Provenance::Encoded)
            .collect();
        (pts.iter()
            .map(|p| (p.x - ex) * (p.x - ex) + (p.y - ey) * (p.y - ey))
            .sum::<f64>()
            / pts.len() as f64)
            .sqrt()
    };
    let dist = ((ex - gx).powi(2) + (ey - gy).powi(2)).sqrt();
    println!(
        "centroid offset between encoded and generated: {:.2} encoded-spread units",
        dist / spread
    );
}
