mod common;

use std::fs;

use attrgan::annotations::{aggregate, compare_groups, qc_filter, read_records};
use attrgan::attributes::{Attribute, AttributeOracle, PlaneOracle};
use attrgan::autodiff::Tensor;
use attrgan::gan::{FusionMode, LossKind, RunStatus};
use attrgan::harness::{
    discretize, generate_dataset, run_experiment, DatasetSpec, ExperimentConfig, ImagePool,
    RunSummary, SynthesisSpec,
};
use attrgan::Error;
use common::{rng, tiny_experiment};

#[test]
fn labels_are_stratified() {
    let d = generate_dataset(&DatasetSpec::ring8(), 8000, &mut rng(1)).unwrap();
    let mut counts = [0usize; 8];
    d.labels.iter().for_each(|&l| counts[l] += 1);
    assert_eq!(counts, [1000; 8]);
    let g = generate_dataset(&DatasetSpec::grid25(), 2500, &mut rng(1)).unwrap();
    let mut counts = [0usize; 25];
    g.labels.iter().for_each(|&l| counts[l] += 1);
    assert!(counts.iter().all(|&c| c == 100));
}

#[test]
fn datasets_are_determined_by_the_seed() {
    for spec in [DatasetSpec::ring8(), DatasetSpec::grid25(), DatasetSpec::images8()] {
        let a = generate_dataset(&spec, 300, &mut rng(5)).unwrap();
        let b = generate_dataset(&spec, 300, &mut rng(5)).unwrap();
        let c = generate_dataset(&spec, 300, &mut rng(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, c.samples);
    }
}

#[test]
fn samples_stay_near_their_mode() {
    for spec in [DatasetSpec::ring8(), DatasetSpec::grid25()] {
        let d = generate_dataset(&spec, 8000, &mut rng(2)).unwrap();
        let centers = spec.centers();
        let limit = 5.0 * spec.sigma();
        let near = (0..d.len())
            .filter(|&i| {
                let c = &centers[d.labels[i]];
                d.samples.row(i).iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() <= limit
            })
            .count();
        assert!(near as f64 >= 0.999 * d.len() as f64, "{near}");
    }
}

#[test]
fn dataset_round_trips_through_json() {
    let d = generate_dataset(&DatasetSpec::images8(), 40, &mut rng(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.json");
    d.save(&p).unwrap();
    assert_eq!(attrgan::harness::Dataset::load(&p).unwrap(), d);
}

#[test]
fn zero_noise_ratings_reproduce_the_discretized_oracle() {
    let spec = DatasetSpec::ring8();
    let oracle: AttributeOracle = spec.oracle().unwrap();
    let samples = spec.sample_domain(120, &mut rng(4)).unwrap();
    let pool = ImagePool {
        ids: (0..120).map(|i| format!("x{i}")).collect(),
        samples: samples.clone(),
        is_real: (0..120).map(|i| i % 2 == 0).collect(),
    };
    let syn = attrgan::harness::synthesize_annotations(
        &pool,
        &oracle,
        &SynthesisSpec { noise_sd: 0.0, ..SynthesisSpec::default() },
        &mut rng(5),
    )
    .unwrap();
    let qc = qc_filter(&syn.records, &Default::default()).unwrap();
    let agg = aggregate(&qc.accepted, 10).unwrap();
    assert_eq!(agg.images.len(), 120);
    for s in &agg.images {
        let i: usize = s.image_id[1..].parse().unwrap();
        let want = discretize(&oracle.eval(samples.row(i)).unwrap());
        assert_eq!(s.scores, want);
    }
    assert!(matches!(PlaneOracle::new(vec![]), Err(Error::Config { .. })));
}

#[test]
fn matrix_writes_one_trace_per_run_and_resumes() {
    let config = tiny_experiment(&[LossKind::WganGp], &[FusionMode::None, FusionMode::RandomNoise], &[1, 2, 3]);
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&config, dir.path()).unwrap();
    let traces = fs::read_dir(dir.path().join("traces")).unwrap().count();
    assert_eq!(traces, 6);
    assert_eq!(report.runs.len(), 6);
    assert!(report.runs.iter().all(|r| r.status == RunStatus::Success));
    assert_eq!(report.table.len(), 2);
    for r in &report.runs {
        assert_eq!(r.independence.is_some(), r.fusion == FusionMode::RandomNoise);
        let lines = fs::read_to_string(dir.path().join("traces").join(format!("{}.jsonl", r.id))).unwrap();
        assert_eq!(lines.lines().count(), 4);
    }
    assert!(dir.path().join("report.md").exists());

    // a finished experiment returns its stored report unchanged
    let before = fs::read(dir.path().join("report.json")).unwrap();
    let again = run_experiment(&config, dir.path()).unwrap();
    assert_eq!(serde_json::to_string(&again).unwrap(), serde_json::to_string(&report).unwrap());

    // a lost run is retrained and the rest reused
    fs::remove_file(dir.path().join("report.json")).unwrap();
    fs::remove_file(dir.path().join("runs").join("wgan_gp-baseline-s2.json")).unwrap();
    run_experiment(&config, dir.path()).unwrap();
    assert_eq!(fs::read(dir.path().join("report.json")).unwrap(), before);

    let other = ExperimentConfig { data_seed: 9, ..config };
    match run_experiment(&other, dir.path()) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "out"),
        r => panic!("expected a config error, got {r:?}"),
    }
}

#[test]
fn statistics_block_matches_the_standalone_pipeline() {
    let config = tiny_experiment(&[LossKind::Lsgan], &[FusionMode::None], &[1]);
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&config, dir.path()).unwrap();
    let stats = report.statistics.expect("statistics block");
    assert_eq!(stats.generated_by, "lsgan-baseline-s1");
    let records = read_records(dir.path().join("annotations.csv")).unwrap();
    let qc = qc_filter(&records, &config.report.qc).unwrap();
    assert_eq!(qc.rejections.len(), stats.tainted_assignments);
    let agg = aggregate(&qc.accepted, config.report.annotators).unwrap();
    let standalone = compare_groups(&agg.images).unwrap();
    assert_eq!(standalone, stats.annotations.comparisons);
    for row in &standalone {
        let z = attrgan::annotations::welch_z_test(
            &attrgan::annotations::GroupStats { mean: row.mean_real, sd: row.sd_real, count: 100 },
            &attrgan::annotations::GroupStats { mean: row.mean_fake, sd: row.sd_fake, count: 100 },
        );
        if let (Ok(t), Some(z_lib)) = (z, row.z) {
            assert!((t.z - z_lib).abs() < 1e-12);
        }
    }
    // real samples sit on the modes; an untrained generator does not
    assert!(stats.realism_dominance.z > 0.0 && stats.realism_dominance.p < 0.05);
    let realism = stats.oracle.iter().find(|c| c.attribute == Attribute::Realism).unwrap();
    assert!(realism.mean_real > 4.0);
}

#[test]
fn identical_configs_give_identical_bytes() {
    let config = tiny_experiment(&[LossKind::Dcgan], &[FusionMode::AttributeNet], &[4]);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&config, a.path()).unwrap();
    run_experiment(&config, b.path()).unwrap();
    for f in ["report.json", "report.md", "annotations.csv", "attribute_net.json", "traces/dcgan-attribute_net-s4.jsonl"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn configs_and_summaries_round_trip() {
    let config = tiny_experiment(&LossKind::ALL, &FusionMode::ALL, &[1, 2]);
    let text = serde_json::to_string(&config).unwrap();
    let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back.content_hash().unwrap(), config.content_hash().unwrap());
    assert_eq!(back.run_ids().len(), 18);
    // missing fields fall back to defaults
    let sparse: ExperimentConfig = serde_json::from_str(r#"{"seeds": [7]}"#).unwrap();
    assert_eq!(sparse.seeds, vec![7]);
    assert_eq!(sparse.train_samples, ExperimentConfig::default().train_samples);
    let summary = RunSummary {
        id: "x".into(),
        loss: LossKind::WganGp,
        fusion: FusionMode::None,
        seed: 1,
        config_hash: "h".into(),
        status: RunStatus::Diverged { iteration: 3, detail: "loss".into() },
        metrics: None,
        coverage: None,
        final_d_train: Some(0.5),
        final_d_test: None,
        independence: None,
    };
    let back: RunSummary = serde_json::from_str(&serde_json::to_string(&summary).unwrap()).unwrap();
    assert_eq!(back, summary);
    let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(serde_json::from_str::<Tensor>(&serde_json::to_string(&t).unwrap()).unwrap(), t);
}

#[test]
fn invalid_experiment_configs_name_their_field() {
    let mut c = tiny_experiment(&[LossKind::WganGp], &[FusionMode::None], &[1]);
    c.seeds.clear();
    assert!(matches!(c.validate(), Err(Error::Config { ref field, .. }) if field == "seeds"));
    let mut c = tiny_experiment(&[LossKind::WganGp], &[FusionMode::None], &[1]);
    c.annotated_images = 10_000;
    assert!(matches!(c.validate(), Err(Error::Config { ref field, .. }) if field == "annotated_images"));
}
