mod common;

use attrgan::attributes::{
    ring_centers, Attribute, AttributeNet, AttributeOracle, AttributeSchedule, PlaneOracle, StopReason,
    ATTRIBUTE_COUNT, SCORE_MAX, SCORE_MIN,
};
use attrgan::autodiff::Tensor;
use attrgan::harness::DatasetSpec;
use common::rng;
use proptest::prelude::*;
use rand::Rng;

fn ring() -> AttributeOracle {
    AttributeOracle::Plane(PlaneOracle::new(ring_centers(8, 2.0)).unwrap())
}

fn uniform_inputs(n: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::new(vec![n, 2], (0..2 * n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn targets(x: &Tensor, f: impl Fn(&[f64], usize) -> f64) -> Tensor {
    let data = (0..x.rows()).flat_map(|r| (0..ATTRIBUTE_COUNT).map(|k| f(x.row(r), k)).collect::<Vec<_>>()).collect();
    Tensor::new(vec![x.rows(), ATTRIBUTE_COUNT], data).unwrap()
}

#[test]
fn frozen_training_stops_after_patience() {
    let x = uniform_inputs(64, 1);
    let y = targets(&x, |_, _| 3.0);
    let schedule = AttributeSchedule { frozen: true, ..AttributeSchedule::default() };
    let net = AttributeNet::train(&x, &y, &x, &y, &schedule, &mut rng(2)).unwrap();
    assert_eq!(net.epochs_run, 20);
    assert_eq!(net.stop_reason, Some(StopReason::Plateau));
    assert_eq!(net.val_history.len(), 21);
}

#[test]
fn learns_a_constant_target() {
    let x = uniform_inputs(400, 3);
    let y = targets(&x, |_, k| 1.0 + 0.5 * k as f64);
    let (vx, vy) = (uniform_inputs(200, 4), targets(&uniform_inputs(200, 4), |_, k| 1.0 + 0.5 * k as f64));
    let net = AttributeNet::train(&x, &y, &vx, &vy, &AttributeSchedule::default(), &mut rng(5)).unwrap();
    let rmse = net.rmse(&vx, &vy).unwrap();
    assert!(rmse.mean < 0.05, "{rmse:?}");
}

#[test]
fn learns_a_linear_target() {
    let f = |p: &[f64], k: usize| 3.0 + (k as f64 * 0.7).cos() * p[0] + (k as f64 * 0.3).sin() * p[1];
    let x = uniform_inputs(800, 6);
    let vx = uniform_inputs(200, 7);
    let net = AttributeNet::train(&x, &targets(&x, f), &vx, &targets(&vx, f), &AttributeSchedule::default(), &mut rng(8))
        .unwrap();
    let rmse = net.rmse(&vx, &targets(&vx, f)).unwrap();
    assert!(rmse.mean < 0.1, "{rmse:?}");
}

#[test]
fn saved_net_predicts_identically() {
    let x = uniform_inputs(50, 9);
    let y = targets(&x, |p, _| p[0]);
    let schedule = AttributeSchedule { max_epochs: 3, ..AttributeSchedule::default() };
    let net = AttributeNet::train(&x, &y, &x, &y, &schedule, &mut rng(10)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    net.save(&path).unwrap();
    let back = AttributeNet::load(&path).unwrap();
    assert_eq!(back, net);
    let rows = x.to_rows();
    assert_eq!(back.predict(&rows).unwrap().raw, net.predict(&rows).unwrap().raw);
}

#[test]
fn mode_centers_are_fully_realistic() {
    let o = ring();
    for c in ring_centers(8, 2.0) {
        let v = o.eval(&c).unwrap();
        assert_eq!(v.get(Attribute::Realism), 5.0);
        assert_eq!(v.get(Attribute::Weirdness), 1.0);
        assert_eq!(v.get(Attribute::Object), 5.0);
    }
    let origin = o.eval(&[0.0, 0.0]).unwrap();
    assert_eq!(origin.get(Attribute::Realism), 1.0);
}

#[test]
fn out_of_domain_inputs_are_flagged() {
    let (_, clamped) = ring().eval_checked(&[100.0, 0.0]).unwrap();
    assert!(clamped);
    assert!(ring().eval(&[f64::NAN, 0.0]).is_err());
    assert!(ring().eval(&[0.0]).is_err());
}

fn lipschitz_holds(o: &AttributeOracle, a: &[f64], b: &[f64]) -> bool {
    let va = o.eval(a).unwrap();
    let vb = o.eval(b).unwrap();
    let dist = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    Attribute::ALL.iter().all(|&k| (va.get(k) - vb.get(k)).abs() <= o.lipschitz() * dist + 1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn plane_scores_stay_in_range_and_lipschitz(a in proptest::array::uniform2(-3.5..3.5f64), b in proptest::array::uniform2(-3.5..3.5f64)) {
        let o = ring();
        let v = o.eval(&a).unwrap();
        prop_assert!(v.0.iter().all(|s| (SCORE_MIN..=SCORE_MAX).contains(s)));
        prop_assert!(lipschitz_holds(&o, &a, &b));
    }

    #[test]
    fn image_scores_stay_in_range_and_lipschitz(a in proptest::collection::vec(-1.0..1.0f64, 64), b in proptest::collection::vec(-1.0..1.0f64, 64)) {
        let o = DatasetSpec::images8().oracle().unwrap();
        let v = o.eval(&a).unwrap();
        prop_assert!(v.0.iter().all(|s| (SCORE_MIN..=SCORE_MAX).contains(s)));
        prop_assert!(lipschitz_holds(&o, &a, &b));
    }
}
