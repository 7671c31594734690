//! Build a synthetic long-tailed dataset, inspect its class profile, and
//! export it in both the LDMF binary format and CSV.
//!
//! Run with: cargo run --release --example longtail_dataset

use latent_augment::datasets::{
    generate_mixture, load_features, longtail_counts, save_csv, save_features, ClassProfile,
    GroupingRule, MixtureSpec,
};
use latent_augment::numeric::Rng;

fn main() {
    let num_classes = 10;
    let dim = 16;
    let counts = longtail_counts(num_classes, 500, 100.0).unwrap();
    println!("long-tail counts (n_max=500, IF=100): {counts:?}");

    let rng = Rng::new(7);
    let spec = MixtureSpec::on_sphere(num_classes, dim, 3.2, 1.0, &mut rng.substream("means"))
        .unwrap();
    let train = generate_mixture(&spec, &counts, &mut rng.substream("train")).unwrap();
    println!("dataset: {} records, dim {}", train.len(), train.dim());

    let profile = ClassProfile::from_dataset(&train, GroupingRule::Thresholds {
        low: 20,
        high: 100,
    })
    .unwrap();
    println!("imbalance factor: {:.1}", profile.imbalance_factor());
    for (k, (&n, &g)) in profile.counts().iter().zip(profile.groups()).enumerate() {
        println!("  class {k}: {n:4} samples -> {g:?}");
    }

    let out = std::env::temp_dir().join("latent-augment-example");
    std::fs::create_dir_all(&out).unwrap();
    let ldmf = out.join("longtail.ldmf");
    let csv = out.join("longtail.csv");
    save_features(&train, &ldmf).unwrap();
    save_csv(&train, &csv).unwrap();

    // Round trip is bit-exact.
    let back = load_features(&ldmf).unwrap();
    assert_eq!(back, train);
    println!("wrote {} and {}", ldmf.display(), csv.display());
}
