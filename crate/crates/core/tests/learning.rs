mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use rfpuf::devicegen::{sample_fleet, ParamSpec};
use rfpuf::neural::{
    apply_compensator, build_training_set, train_classifier, train_compensator, Algorithm, MlpModel, StopReason,
    TrainParams,
};
use rfpuf::pipeline::{extract_loopback_fleet, LinkConfig, Purpose};
use rfpuf::rxchain::RxProfile;
use rfpuf::seed::rng_from_seed;

/// Max over parameters of |analytic − numeric| / max(|analytic|, |numeric|),
/// skipping pairs where both are below `floor`.
fn gradient_check(model: &MlpModel, z: &Array2<f64>, labels: &[usize], eps: f64, floor: f64) -> f64 {
    let analytic = model.loss_and_gradient(z.view(), labels, true).unwrap().gradient.unwrap();
    let p0 = model.params();
    let mut m = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] = p0[i] + eps;
        m.set_params(&p).unwrap();
        let up = m.loss_and_gradient(z.view(), labels, false).unwrap().loss;
        p[i] = p0[i] - eps;
        m.set_params(&p).unwrap();
        let down = m.loss_and_gradient(z.view(), labels, false).unwrap().loss;
        let numeric = (up - down) / (2.0 * eps);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale > floor {
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    worst
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = rng_from_seed(4);
    let model = MlpModel::init(5, 7, 4, 11);
    let z = Array2::from_shape_fn((30, 5), |_| rng.sample::<f64, _>(StandardNormal));
    let labels: Vec<usize> = (0..30).map(|i| i % 4).collect();
    let err = gradient_check(&model, &z, &labels, 1e-6, 1e-4);
    assert!(err < 1e-6, "relative error {err}");
}

/// Ten well separated Gaussian clusters in five dimensions.
fn clusters(per_class: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let centres: Vec<[f64; 5]> = (0..10)
        .map(|_| std::array::from_fn(|_| rng.random_range(-10.0..10.0)))
        .collect();
    let n = 10 * per_class;
    let labels: Vec<usize> = (0..n).map(|i| i / per_class).collect();
    let x = Array2::from_shape_fn((n, 5), |(i, j)| centres[labels[i]][j] + 0.1 * rng.sample::<f64, _>(StandardNormal));
    (x, labels)
}

#[test]
fn scg_fits_ten_separable_classes() {
    let (x, labels) = clusters(20, 2);
    let hp = TrainParams {
        hidden: 20,
        max_epochs: 2000,
        target_error: 1e-3,
        ..TrainParams::default()
    };
    let (model, report) = train_classifier(x.view(), &labels, &hp, 1).unwrap();
    assert_eq!(report.stop, StopReason::TargetError, "{report:?}");
    assert!(report.loss <= 1e-3 && report.epochs <= 2000);
    let pred = model.predict_batch(x.view()).unwrap();
    assert!(pred.iter().zip(&labels).all(|((p, _), l)| p == l));
}

#[test]
fn momentum_descent_agrees_on_separable_data() {
    let (x, labels) = clusters(10, 3);
    let hp = TrainParams {
        hidden: 20,
        max_epochs: 3000,
        target_error: 1e-2,
        algorithm: Algorithm::GradientDescentMomentum,
        ..TrainParams::default()
    };
    let (model, _) = train_classifier(x.view(), &labels, &hp, 1).unwrap();
    let pred = model.predict_batch(x.view()).unwrap();
    assert!(pred.iter().zip(&labels).all(|((p, _), l)| p == l));
}

#[test]
fn training_rows_are_device_major() {
    let fleet = sample_fleet(3, &ParamSpec::table_one(), 5).unwrap();
    let link = LinkConfig::default();
    let (x, labels) = build_training_set(&fleet, 2, &link, 9).unwrap();
    assert_eq!(x.nrows(), 6);
    assert_eq!(labels, vec![0, 0, 1, 1, 2, 2]);
    let (x2, _) = build_training_set(&fleet, 2, &link, 9).unwrap();
    assert_eq!(x, x2);
}

#[test]
fn zero_variance_fleet_rows_only_differ_by_noise() {
    let spec = ParamSpec::table_one().zero_variance();
    let fleet = sample_fleet(3, &spec, 5).unwrap();
    let link = LinkConfig {
        spec,
        ..LinkConfig::default()
    };
    let (x, _) = build_training_set(&fleet, 2, &link, 9).unwrap();
    // identical devices and a fixed 15 dB channel: only estimator jitter,
    // small against the device-to-device spread of a real fleet
    let table = ParamSpec::table_one();
    let sd = [
        table.lo_offset_ppm.std_dev,
        table.iq_gain_imbalance_db.std_dev,
        table.iq_phase_imbalance_deg.std_dev,
    ];
    for j in 0..3 {
        let col: Vec<f64> = x.column(j).to_vec();
        let spread = col.iter().cloned().fold(f64::MIN, f64::max) - col.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 0.1 * sd[j], "feature {j} spread {spread}");
    }
}

#[test]
fn trained_model_recognizes_its_training_rows() {
    let fleet = sample_fleet(5, &ParamSpec::table_one(), 8).unwrap();
    let (x, labels) = build_training_set(&fleet, 5, &LinkConfig::default(), 3).unwrap();
    let (model, _) = train_classifier(x.view(), &labels, &TrainParams::default(), 2).unwrap();
    let (p, c) = model.predict_row(&x.row(0).to_vec()).unwrap();
    assert_eq!(p, labels[0]);
    assert!(c > 1.0 / 5.0);
}

fn loopback(rx: &RxProfile, purpose: Purpose) -> (Vec<rfpuf::rxchain::FeatureVector>, Vec<rfpuf::rxchain::FeatureVector>) {
    let fleet = sample_fleet(20, &ParamSpec::table_one(), 14).unwrap();
    let (a, b) = extract_loopback_fleet(&fleet, rx, &LinkConfig::default(), 6, purpose, 0..3);
    (a.rows, b.rows)
}

#[test]
fn compensator_learns_a_receiver_lo_bias() {
    let rx = RxProfile {
        lo_offset_ppm: 2.0,
        ..RxProfile::ideal()
    };
    let (ideal, other) = loopback(&rx, Purpose::Loopback);
    let comp = train_compensator(&ideal, &other).unwrap();
    assert!((comp.scale[0] - 1.0).abs() < 0.01, "{comp:?}");
    assert!((comp.offset[0] + 2.0).abs() < 0.05, "{comp:?}");
}

#[test]
fn compensation_removes_most_of_the_bias_on_held_out_pairs() {
    let rx = RxProfile {
        lo_offset_ppm: 2.0,
        iq_gain_imbalance_db: 0.8,
        iq_phase_imbalance_deg: -4.0,
    };
    let (ideal, other) = loopback(&rx, Purpose::Loopback);
    let comp = train_compensator(&ideal, &other).unwrap();
    let (ideal, other) = loopback(&rx, Purpose::Holdout);
    let n = ideal.len() as f64;
    let bias = |j: usize, f: &dyn Fn(&rfpuf::rxchain::FeatureVector) -> rfpuf::rxchain::FeatureVector| {
        (ideal.iter().zip(&other).map(|(a, b)| f(b).to_array()[j] - a.to_array()[j]).sum::<f64>() / n).abs()
    };
    let before = bias(0, &|b| *b);
    let after = bias(0, &|b| apply_compensator(&comp, b));
    assert!(after < 0.1 * before, "{after} vs {before}");
    // The receiver's IQ imbalance acts on a signal still rotating at the
    // carrier offset, so it mostly shows up as image noise, not as a bias.
    for j in 1..3 {
        let after = bias(j, &|b| apply_compensator(&comp, b));
        assert!(after <= bias(j, &|b| *b) + 0.02, "feature {j}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probabilities_are_a_distribution(seed in any::<u64>(), rows in 1usize..20) {
        let model = MlpModel::init(4, 6, 5, seed);
        let mut rng = rng_from_seed(seed);
        let x = Array2::from_shape_fn((rows, 4), |_| 10.0 * rng.sample::<f64, _>(StandardNormal));
        let p = model.predict_proba(x.view()).unwrap();
        for r in p.rows() {
            prop_assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn row_order_does_not_change_the_model(seed in 0u64..1000) {
        let (x, labels) = clusters(3, seed);
        let hp = TrainParams { hidden: 6, max_epochs: 30, ..TrainParams::default() };
        let (a, _) = train_classifier(x.view(), &labels, &hp, 1).unwrap();
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.reverse();
        idx.rotate_left((seed % 7) as usize);
        let xs = Array2::from_shape_fn(x.dim(), |(i, j)| x[[idx[i], j]]);
        let ls: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (b, _) = train_classifier(xs.view(), &ls, &hp, 1).unwrap();
        prop_assert_eq!(a.params(), b.params());
    }
}
