use proptest::prelude::*;
use relight_core::nn::{Init, LrSchedule, Optimizer, ParamStore, Tensor};
use relight_core::Error;

fn scalar_store(w0: f64) -> ParamStore {
    let mut s = ParamStore::new();
    s.add("w", &[1], Init::Zeros, 0);
    s.values_mut()[0].data_mut()[0] = w0;
    s
}

/// Independent scalar Adam recurrence.
fn reference_adam(w0: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.5f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps as i32 {
        let g = 2.0 * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        out.push(w);
    }
    out
}

#[test]
fn adam_on_quadratic_matches_reference_recurrence() {
    let reference = reference_adam(1.0, 0.01, 300);
    let mut store = scalar_store(1.0);
    let mut opt = Optimizer::adam(&store);
    for want in &reference {
        let w = store.values()[0].data()[0];
        let g = Tensor::new(vec![1], vec![2.0 * w]).unwrap();
        opt.step(&mut store, &[g], 0.01).unwrap();
        assert!((store.values()[0].data()[0] - want).abs() < 1e-12);
    }
    // with β1 = 0.5 the recurrence reaches |w| < 1e-2 between steps 250 and 300
    assert!(reference[299].abs() < 1e-2);
    assert_eq!(opt.step_count(), 300);
}

#[test]
fn zero_gradient_leaves_parameters() {
    let mut store = scalar_store(0.7);
    let mut opt = Optimizer::adam(&store);
    opt.step(&mut store, &[Tensor::new(vec![1], vec![1.0]).unwrap()], 0.01)
        .unwrap();
    let after_one = store.values()[0].data()[0];
    let m1 = opt.moments(0).0[0];
    opt.step(&mut store, &[Tensor::zeros(&[1])], 0.01).unwrap();
    let (m2, _) = opt.moments(0);
    assert!(m2[0].abs() < m1.abs());
    // the decayed first moment still moves the weight; a fresh optimizer does not
    let mut fresh_store = scalar_store(0.7);
    let mut fresh = Optimizer::radam(&fresh_store);
    fresh.step(&mut fresh_store, &[Tensor::zeros(&[1])], 0.01).unwrap();
    assert_eq!(fresh_store.values()[0].data()[0], 0.7);
    assert!(after_one < 0.7);
}

#[test]
fn radam_first_step_is_momentum_sgd() {
    let mut store = scalar_store(1.0);
    let mut opt = Optimizer::radam(&store);
    assert!(opt.rectification(1).1.is_none());
    opt.step(&mut store, &[Tensor::new(vec![1], vec![3.0]).unwrap()], 0.1)
        .unwrap();
    // m̂ = g at step 1, so w = 1 − lr·g
    assert!((store.values()[0].data()[0] - 0.7).abs() < 1e-15);
    let (rho, r) = opt.rectification(10);
    assert!(rho > 5.0 && r.is_some());
}

#[test]
fn non_finite_gradient_names_parameter() {
    let mut store = scalar_store(1.0);
    let mut opt = Optimizer::adam(&store);
    let err = opt
        .step(&mut store, &[Tensor::new(vec![1], vec![f64::NAN]).unwrap()], 0.1)
        .unwrap_err();
    assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
    assert_eq!(store.values()[0].data()[0], 1.0);
    assert_eq!(opt.step_count(), 0);
}

#[test]
fn schedule_examples() {
    let s = LrSchedule::default();
    assert!((s.lr_at(0.0) - 1e-3).abs() < 1e-15);
    assert!((s.lr_at(10.0) - 5.5e-4).abs() < 1e-15);
    assert!((s.lr_at(20.0) - 1e-3).abs() < 1e-15);
}

proptest! {
    #[test]
    fn schedule_within_bounds(epoch in 0.0f64..1e4) {
        let lr = LrSchedule::default().lr_at(epoch);
        prop_assert!((1e-4..=1e-3).contains(&lr));
    }
}
