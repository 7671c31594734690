//! End-to-end tests of the `latent-augment` binary: exit codes, stage
//! chaining, and artifact handling.


use std::process::{Command, Output};

use latent_augment::config::ExperimentConfig;
use latent_augment::datasets::{save_features, FeatureDataset, FeatureRecord, Provenance};
use latent_augment::encoder::EncoderNet;
use latent_augment::numeric::{Activation, Layer, Matrix, Mlp};
use latent_augment::pipeline::RunPaths;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latent-augment"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small_config_json() -> String {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 77;
    cfg.dataset.num_classes = 4;
    cfg.dataset.dim = 6;
    cfg.dataset.n_max = 50;
    cfg.dataset.imbalance_factor = 10.0;
    cfg.dataset.mean_radius = 3.0;
    cfg.dataset.test_per_class = 25;
    cfg.encoder.hidden = vec![16];
    cfg.encoder.latent_dim = 4;
    cfg.encoder.epochs = 6;
    cfg.diffusion.num_steps = 60;
    cfg.diffusion.reverse_steps = 15;
    cfg.diffusion.epochs = 8;
    cfg.diffusion.shape.hidden = vec![24];
    cfg.diffusion.shape.time_embed_dim = 8;
    cfg.diffusion.shape.class_embed_dim = 4;
    cfg.finetune.epochs = 5;
    cfg.eval.grouping = latent_augment::datasets::GroupingRule::Terciles;
    String::from_utf8(cfg.canonical_json()).unwrap()
}

#[test]
fn print_default_config_is_valid_json() {
    let out = run(&["print-default-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = ExperimentConfig::from_json(&text).unwrap();
    assert_eq!(cfg.diffusion.num_steps, 1000);
}

#[test]
fn pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, small_config_json()).unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    for out in [&out_a, &out_b] {
        let result = run(&[
            "pipeline",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(
            result.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&result.stderr)
        );
    }
    let a = RunPaths::new(&out_a);
    let b = RunPaths::new(&out_b);
    for (pa, pb) in [
        (a.eval_baseline(), b.eval_baseline()),
        (a.eval_augmented(), b.eval_augmented()),
        (a.finetune_report(), b.finetune_report()),
        (a.finetuned(), b.finetuned()),
    ] {
        assert_eq!(
            std::fs::read(&pa).unwrap(),
            std::fs::read(&pb).unwrap(),
            "{} differs between reruns",
            pa.display()
        );
    }
    // The manifest lists a healthy artifact set.
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.manifest()).unwrap()).unwrap();
    assert!(manifest["failed_stage"].is_null());
    assert!(manifest["artifacts"].as_array().unwrap().len() >= 7);
}

#[test]
fn pipeline_equals_chained_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, small_config_json()).unwrap();
    let out_pipe = dir.path().join("pipe");
    let out_stages = dir.path().join("stages");

    let result = run(&[
        "pipeline",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_pipe.to_str().unwrap(),
    ]);
    assert!(result.status.success());

    for stage in ["encode", "train-diffusion", "generate", "finetune", "eval"] {
        let result = run(&[
            "stage",
            stage,
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out_stages.to_str().unwrap(),
        ]);
        assert!(
            result.status.success(),
            "stage {stage} failed: {}",
            String::from_utf8_lossy(&result.stderr)
        );
    }

    let a = RunPaths::new(&out_pipe);
    let b = RunPaths::new(&out_stages);
    for (pa, pb) in [
        (a.raw_train(), b.raw_train()),
        (a.encoded(), b.encoded()),
        (a.generated(), b.generated()),
        (a.encoder(), b.encoder()),
        (a.predictor(), b.predictor()),
        (a.finetuned(), b.finetuned()),
        (a.eval_baseline(), b.eval_baseline()),
        (a.eval_augmented(), b.eval_augmented()),
    ] {
        assert_eq!(
            std::fs::read(&pa).unwrap(),
            std::fs::read(&pb).unwrap(),
            "{} differs between pipeline and chained stages",
            pa.display()
        );
    }
}

#[test]
fn sweep_rows_match_individual_pipelines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, small_config_json()).unwrap();
    let base = dir.path().join("base");
    let result = run(&[
        "pipeline",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        base.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let result = run(&[
        "stage",
        "sweep",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        base.to_str().unwrap(),
        "--ratios",
        "0,0.5",
    ]);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let sweep_text = std::fs::read_to_string(RunPaths::new(&base).sweep()).unwrap();
    let rows: Vec<Vec<&str>> = sweep_text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 2);

    // An individually-run pipeline at ratio 0.5 must reproduce the sweep row.
    let cfg = ExperimentConfig::from_json(&small_config_json()).unwrap();
    let mut cfg_half = cfg.clone();
    cfg_half.augment.ratio = 0.5;
    let half_json = String::from_utf8(cfg_half.canonical_json()).unwrap();
    let half_path = dir.path().join("half.json");
    std::fs::write(&half_path, half_json).unwrap();
    let half_out = dir.path().join("half");
    let result = run(&[
        "pipeline",
        "--config",
        half_path.to_str().unwrap(),
        "--out",
        half_out.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    let report: serde_json::Value = serde_json::from_slice(
        &std::fs::read(RunPaths::new(&half_out).eval_augmented()).unwrap(),
    )
    .unwrap();
    let pipeline_acc = report["overall_accuracy"].as_f64().unwrap();
    let sweep_acc: f64 = rows[1][1].parse().unwrap();
    assert!(
        (pipeline_acc - sweep_acc).abs() < 1e-12,
        "sweep {sweep_acc} vs pipeline {pipeline_acc}"
    );

    // The ratio-0 row equals the baseline fine-tune (pipeline at ratio 0).
    let mut cfg_zero = cfg.clone();
    cfg_zero.augment.ratio = 0.0;
    let zero_path = dir.path().join("zero.json");
    std::fs::write(&zero_path, cfg_zero.canonical_json()).unwrap();
    let zero_out = dir.path().join("zero");
    assert!(run(&[
        "pipeline",
        "--config",
        zero_path.to_str().unwrap(),
        "--out",
        zero_out.to_str().unwrap(),
    ])
    .status
    .success());
    let report: serde_json::Value = serde_json::from_slice(
        &std::fs::read(RunPaths::new(&zero_out).eval_augmented()).unwrap(),
    )
    .unwrap();
    let zero_acc = report["overall_accuracy"].as_f64().unwrap();
    let sweep_zero: f64 = rows[0][1].parse().unwrap();
    assert!(
        (zero_acc - sweep_zero).abs() < 1e-12,
        "sweep ratio-0 {sweep_zero} vs baseline fine-tune {zero_acc}"
    );
}

#[test]
fn exit_codes_for_failure_classes() {
    let dir = tempfile::tempdir().unwrap();

    // Unknown config key: 2.
    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{ "seed": 1, "bogus": true }"#).unwrap();
    let out = run(&[
        "pipeline",
        "--config",
        bad_cfg.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Missing upstream artifact: 3.
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, small_config_json()).unwrap();
    let out = run(&[
        "stage",
        "generate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().join("empty").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("predictor.ldmn"), "{stderr}");

    // Numeric blow-up: 4.
    let mut nan_cfg = ExperimentConfig::from_json(&small_config_json()).unwrap();
    nan_cfg.encoder.lr = 1e160;
    nan_cfg.encoder.epochs = 40;
    let nan_path = dir.path().join("nan.json");
    std::fs::write(&nan_path, nan_cfg.canonical_json()).unwrap();
    let out = run(&[
        "pipeline",
        "--config",
        nan_path.to_str().unwrap(),
        "--out",
        dir.path().join("nan").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));

    // --ratios outside sweep: 2.
    let out = run(&[
        "stage",
        "encode",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().join("y").to_str().unwrap(),
        "--ratios",
        "0,1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_override_changes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, small_config_json()).unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert!(run(&[
        "stage",
        "encode",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ])
    .status
    .success());
    assert!(run(&[
        "stage",
        "encode",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
        "--seed",
        "1234",
    ])
    .status
    .success());
    assert_ne!(
        std::fs::read(RunPaths::new(&out_a).raw_train()).unwrap(),
        std::fs::read(RunPaths::new(&out_b).raw_train()).unwrap()
    );
}

#[test]
fn thread_cap_env_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, small_config_json()).unwrap();
    let out_dir = dir.path().join("threads1");
    let output = bin()
        .args([
            "pipeline",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .env("LATENT_AUGMENT_THREADS", "1")
        .output()
        .unwrap();
    assert!(output.status.success());

    // Same artifacts regardless of the thread cap.
    let out_many = dir.path().join("threads4");
    let output = bin()
        .args([
            "pipeline",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out_many.to_str().unwrap(),
        ])
        .env("LATENT_AUGMENT_THREADS", "4")
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(
        std::fs::read(RunPaths::new(&out_dir).generated()).unwrap(),
        std::fs::read(RunPaths::new(&out_many).generated()).unwrap()
    );

    // Invalid value is a config error.
    let output = bin()
        .args(["print-default-config"])
        .env("LATENT_AUGMENT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

/// Hand-computed confusion-matrix oracle through the CLI eval stage.
///
/// Identity trunk, identity head on dim 2 / K 2: prediction is
/// argmax(x0, x1). Four test records give a confusion matrix of all ones.
#[test]
fn eval_stage_reproduces_hand_computed_confusion() {
    let dir = tempfile::tempdir().unwrap();
    let paths = RunPaths::new(dir.path());

    // Config consistent with the hand-built artifacts.
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 5;
    cfg.dataset.num_classes = 2;
    cfg.dataset.dim = 2;
    cfg.encoder.hidden = vec![];
    cfg.encoder.latent_dim = 2;
    cfg.eval.grouping = latent_augment::datasets::GroupingRule::Terciles;
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.canonical_json()).unwrap();

    // Identity classifier.
    let trunk = Mlp::from_layers(vec![Layer {
        weight: Matrix::identity(2),
        bias: vec![0.0; 2],
        activation: Activation::Identity,
    }])
    .unwrap();
    let head = Mlp::from_layers(vec![Layer {
        weight: Matrix::identity(2),
        bias: vec![0.0; 2],
        activation: Activation::Identity,
    }])
    .unwrap();
    EncoderNet::new(trunk, head)
        .unwrap()
        .save(&paths.encoder())
        .unwrap();

    // Training set only feeds the class profile.
    let mut train = FeatureDataset::new(2, 2);
    for (features, label) in [(vec![1.0, 0.0], 0u32), (vec![0.0, 1.0], 1u32)] {
        train
            .push(FeatureRecord {
                features,
                label,
                provenance: Provenance::Raw,
            })
            .unwrap();
    }
    save_features(&train, &paths.raw_train()).unwrap();

    // Hand-worked predictions: (2,1)->0 ok, (0,3)->1 wrong, (1,2)->1 ok,
    // (5,0)->0 wrong.
    let mut test = FeatureDataset::new(2, 2);
    for (features, label) in [
        (vec![2.0, 1.0], 0u32),
        (vec![0.0, 3.0], 0u32),
        (vec![1.0, 2.0], 1u32),
        (vec![5.0, 0.0], 1u32),
    ] {
        test.push(FeatureRecord {
            features,
            label,
            provenance: Provenance::Raw,
        })
        .unwrap();
    }
    save_features(&test, &paths.raw_test()).unwrap();

    let out = run(&[
        "stage",
        "eval",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(paths.eval_baseline()).unwrap()).unwrap();
    assert_eq!(report["confusion"][0][0], 1);
    assert_eq!(report["confusion"][0][1], 1);
    assert_eq!(report["confusion"][1][0], 1);
    assert_eq!(report["confusion"][1][1], 1);
    assert_eq!(report["overall_accuracy"].as_f64().unwrap(), 0.5);
}

#[test]
fn encode_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, small_config_json()).unwrap();
    let out_dir = dir.path().join("run");
    for _ in 0..2 {
        assert!(run(&[
            "stage",
            "encode",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .status
        .success());
    }
    let paths = RunPaths::new(&out_dir);
    let first = std::fs::read(paths.encoded()).unwrap();
    assert!(run(&[
        "stage",
        "encode",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ])
    .status
    .success());
    assert_eq!(first, std::fs::read(paths.encoded()).unwrap());
}
