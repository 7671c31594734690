//! Augmentation policies: which classes get pseudo-features and how many,
//! across targets (all/many/medium/few) and label modes.
//!
//! Run with: cargo run --release --example augment_policies

use latent_augment::augmentation::{plan_labels, AugmentPolicy, AugmentTarget, LabelMode};
use latent_augment::datasets::{longtail_counts, ClassProfile, GroupingRule};

fn histogram(labels: &[u32], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l as usize] += 1;
    }
    counts
}

fn main() {
    let counts = longtail_counts(10, 500, 100.0).unwrap();
    let profile =
        ClassProfile::new(counts.clone(), GroupingRule::Thresholds { low: 20, high: 100 })
            .unwrap();
    println!("training counts: {counts:?}");
    println!("groups:          {:?}\n", profile.groups());

    println!("proportional mode, ratio 0.4:");
    for target in [
        AugmentTarget::All,
        AugmentTarget::Many,
        AugmentTarget::Medium,
        AugmentTarget::Few,
    ] {
        let policy = AugmentPolicy {
            target: target.clone(),
            ratio: 0.4,
            mode: LabelMode::Proportional,
        };
        let plan = plan_labels(&policy, &profile).unwrap();
        println!(
            "  {:?}: {} samples, per class {:?}",
            target,
            plan.len(),
            histogram(&plan, 10)
        );
    }

    println!("\nbalanced mode flattens totals (target all):");
    for ratio in [0.5, 1.0, 2.0] {
        let policy = AugmentPolicy {
            target: AugmentTarget::All,
            ratio,
            mode: LabelMode::Balanced,
        };
        let plan = plan_labels(&policy, &profile).unwrap();
        let gen = histogram(&plan, 10);
        let totals: Vec<usize> = counts.iter().zip(&gen).map(|(a, b)| a + b).collect();
        println!("  ratio {ratio}: totals {totals:?}");
    }

    println!("\ncustom target, explicit classes 8 and 9:");
    let policy = AugmentPolicy {
        target: AugmentTarget::Custom(vec![8, 9]),
        ratio: 2.0,
        mode: LabelMode::Proportional,
    };
    let plan = plan_labels(&policy, &profile).unwrap();
    println!("  {:?}", histogram(&plan, 10));
}
