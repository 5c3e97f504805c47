mod common;

use attrgan::attributes::AttributeNet;
use attrgan::autodiff::{Graph, HasParams, Tensor};
use attrgan::gan::{
    gradient_penalty, independence_test, interpolate, train, FusionMode, LossKind, RunStatus, Trainer,
    TrainingConfig,
};
use attrgan::harness::{generate_dataset, DatasetSpec};
use common::{normal_tensor, rng, TanhCritic};
use rand::Rng;

fn tiny(loss: LossKind, fusion: FusionMode) -> TrainingConfig {
    TrainingConfig {
        fusion,
        iterations: 20,
        batch_size: 16,
        trace_every: 5,
        eval_samples: 64,
        ..TrainingConfig::desk(loss)
    }
}

fn ring(n: usize) -> Tensor {
    generate_dataset(&DatasetSpec::ring8(), n, &mut rng(3)).unwrap().samples
}

#[test]
fn penalty_matches_analytic_jacobian() {
    let critic = TanhCritic::fixed();
    let mut r = rng(8);
    let real = normal_tensor(&mut r, &[16, 2]);
    let fake = normal_tensor(&mut r, &[16, 2]);
    let eps: Vec<f64> = (0..16).map(|_| r.random::<f64>()).collect();
    let mut g = Graph::new();
    let p = gradient_penalty(&mut g, |g, x| critic.forward(g, x), &real, &fake, &eps, 1e-4, 64).unwrap();
    let exact = critic.exact_penalty(&interpolate(&real, &fake, &eps).unwrap());
    assert!((g.value(p).item() - exact).abs() <= 1e-5, "{} vs {exact}", g.value(p).item());
}

#[test]
fn unit_slope_linear_critic_has_no_penalty() {
    let w = [0.6, -0.8];
    let mut r = rng(9);
    let real = normal_tensor(&mut r, &[32, 2]);
    let fake = normal_tensor(&mut r, &[32, 2]);
    let eps: Vec<f64> = (0..32).map(|_| r.random::<f64>()).collect();
    for h in [1e-2, 1e-3, 1e-4] {
        let mut g = Graph::new();
        let p = gradient_penalty(
            &mut g,
            |g, x| {
                let wv = g.constant(Tensor::new(vec![2, 1], w.to_vec())?);
                let y = g.matmul(x, wv)?;
                Ok(g.add_scalar(y, 0.25))
            },
            &real,
            &fake,
            &eps,
            h,
            64,
        )
        .unwrap();
        assert!(g.value(p).item() <= 1e-8, "h={h}: {}", g.value(p).item());
    }
}

#[test]
fn runs_are_reproducible_from_the_seed() {
    let data = ring(400);
    let (tr, te) = (data.slice_rows(0, 300).unwrap(), data.slice_rows(300, 100).unwrap());
    let a = train(tiny(LossKind::WganGp, FusionMode::RandomNoise), &tr, &te, None, None, |_| Ok(())).unwrap();
    let b = train(tiny(LossKind::WganGp, FusionMode::RandomNoise), &tr, &te, None, None, |_| Ok(())).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trainer.generator, b.trainer.generator);
    let mut c = tiny(LossKind::WganGp, FusionMode::RandomNoise);
    c.seed = 1;
    let c = train(c, &tr, &te, None, None, |_| Ok(())).unwrap();
    assert_ne!(a.trainer.generator, c.trainer.generator);
}

#[test]
fn baseline_equals_frozen_pass_through_head() {
    let data = ring(200);
    let net = AttributeNet::zeros(2, &[4]).unwrap();
    let mut plain = Trainer::new(tiny(LossKind::WganGp, FusionMode::None), 2, None).unwrap();
    let mut fused_cfg = tiny(LossKind::WganGp, FusionMode::AttributeNet);
    fused_cfg.freeze_head = true;
    let mut fused = Trainer::new(fused_cfg, 2, Some(net)).unwrap();
    plain.step(&data).unwrap();
    fused.step(&data).unwrap();
    assert_eq!(plain.generator, fused.generator);
    assert_eq!(plain.discriminator.base, fused.discriminator.base);
}

#[test]
fn attribute_net_is_untouched_by_gan_training() {
    let data = ring(300);
    let mut r = rng(4);
    let x = normal_tensor(&mut r, &[64, 2]);
    let y = normal_tensor(&mut r, &[64, 8]);
    let schedule = attrgan::attributes::AttributeSchedule { max_epochs: 3, ..Default::default() };
    let net = AttributeNet::train(&x, &y, &x, &y, &schedule, &mut r).unwrap();
    let before: Vec<Tensor> = net.net.params().iter().map(|p| p.value.clone()).collect();
    let out = train(tiny(LossKind::WganGp, FusionMode::AttributeNet), &data, &data, Some(net), None, |_| Ok(())).unwrap();
    let after: Vec<Tensor> = out.trainer.attribute_net.unwrap().net.params().iter().map(|p| p.value.clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn every_objective_trains_with_every_fusion() {
    let data = ring(300);
    let net = AttributeNet::zeros(2, &[4]).unwrap();
    for loss in LossKind::ALL {
        for fusion in FusionMode::ALL {
            let out = train(tiny(loss, fusion), &data, &data, Some(net.clone()), None, |_| Ok(())).unwrap();
            assert_eq!(out.status, RunStatus::Success, "{loss:?} {fusion:?}");
            assert_eq!(out.trace.len(), 4);
        }
    }
}

#[test]
fn random_noise_input_is_independent_of_samples() {
    let mut t = Trainer::new(tiny(LossKind::WganGp, FusionMode::RandomNoise), 2, None).unwrap();
    let samples = t.sample(400).unwrap();
    let attrs = t.attribute_input(&samples).unwrap().unwrap();
    let test = independence_test(&samples, &attrs, 4, 199, &mut rng(1)).unwrap();
    assert!(test.p_value > 0.05, "p = {}", test.p_value);
}

#[test]
fn dependence_is_detected() {
    // the attribute input copies the sample, so the test must reject
    let mut r = rng(2);
    let samples = normal_tensor(&mut r, &[400, 2]);
    let attrs = Tensor::from_rows(
        &samples.to_rows().iter().map(|x| vec![x[0], x[1], x[0] + x[1], 0.0, 1.0, -x[0], x[1], 2.0]).collect::<Vec<_>>(),
    )
    .unwrap();
    let test = independence_test(&samples, &attrs, 4, 99, &mut r).unwrap();
    assert!(test.p_value <= 0.01);
}

#[test]
fn invalid_lambda_is_a_config_error() {
    let c = TrainingConfig { lambda: -1.0, ..TrainingConfig::default() };
    let err = Trainer::new(c, 2, None).unwrap_err();
    assert!(err.to_string().contains("lambda"));
}
