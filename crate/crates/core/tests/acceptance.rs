//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stderr (visible without `--nocapture`) and then asserts.
//!
//! Run with `cargo test --release --test acceptance`.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use rfpuf::devicegen::{sample_fleet, ParamSpec};
use rfpuf::harness::{run_experiment, ExperimentConfig, ExperimentKind, ExperimentResult};
use rfpuf::neural::{train_classifier, MlpModel, StopReason, TrainParams};
use rfpuf::pipeline::LinkConfig;
use rfpuf::pufmetrics::{
    compute_distances, evaluate_geo_means, exact_identifiability, far_frr_curve, far_frr_from_attempts, Attempt,
    IDENTIFIABILITY_SAMPLES,
};
use rfpuf::randomness::nist;
use rfpuf::rxchain::{receive_and_extract, FeatureVector, RxConfig, RxProfile, FEATURE_COUNT};
use rfpuf::seed::rng_from_seed;

fn verdict(n: usize, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_text(text).unwrap()
}

fn run(kind: ExperimentKind, text: &str) -> ExperimentResult {
    run_experiment(kind, &config(text)).unwrap()
}

fn rate(r: &ExperimentResult, want: &[(&str, &str)]) -> f64 {
    r.point(want).unwrap_or_else(|| panic!("no point {want:?}")).median_rate()
}

fn fmt(v: f64) -> String {
    format!("{v:.3e}")
}

/// The 200-transmitter point, timed. Fleets are nested, so this is also the
/// 200 point of the full sweep.
fn desk_scale() -> &'static (ExperimentResult, Duration) {
    static CELL: OnceLock<(ExperimentResult, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let r = run(ExperimentKind::Fig6a, "n_tx = 200\nn_eval_frames = 2000\nreplicates = 3");
        (r, t.elapsed())
    })
}

#[test]
fn criterion_1_desk_scale_accuracy() {
    let (r, took) = desk_scale();
    let p = r.point(&[("n_tx", "200")]).unwrap();
    let frames: Vec<usize> = p.runs.iter().flatten().map(|d| d.frames).collect();
    let err = p.median_rate();
    let pass = err <= 1e-2 && frames.len() == 3 && frames.iter().all(|&f| f >= 2000) && took.as_secs() <= 30 * 60;
    verdict(
        1,
        pass,
        &format!("median error {} (<= 1e-2), eval frames {frames:?}, {:.0} s", fmt(err), took.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn criterion_2_trends() {
    let sweep = run(ExperimentKind::Fig6a, "n_tx = 10,50,1000\nreplicates = 3");
    let mut by_n: Vec<f64> = ["10", "50"].iter().map(|n| rate(&sweep, &[("n_tx", n)])).collect();
    by_n.push(rate(&desk_scale().0, &[("n_tx", "200")]));
    by_n.push(rate(&sweep, &[("n_tx", "1000")]));
    let monotone = by_n.windows(2).all(|w| w[1] >= w[0]);

    let hidden = run(ExperimentKind::Fig6b, "n_hidden = 50,100\nreplicates = 3");
    let (h50, h100) = (rate(&hidden, &[("n_hidden", "50")]), rate(&hidden, &[("n_hidden", "100")]));
    let plateau = h50 <= 2.0 * h100 && h100 <= 2.0 * h50;

    let iters = run(ExperimentKind::Fig6c, "n_train_iterations = 10\nreplicates = 3");
    let fresh = rate(&iters, &[("challenge", "fresh"), ("n_train_iterations", "10")]);
    let fixed = rate(&iters, &[("challenge", "fixed"), ("n_train_iterations", "10")]);
    let vs_fixed = fresh <= 2.0 * fixed;

    let snr = run(ExperimentKind::Fig6d, "n_tx = 100\nebn0_sigma_db = 2,6,10\nreplicates = 3");
    let arm = |s: &str, rrc: &str| rate(&snr, &[("ebn0_sigma_db", s), ("rrc", rrc)]);
    let pairs: Vec<(f64, f64)> = ["2", "6", "10"].iter().map(|s| (arm(s, "true"), arm(s, "false"))).collect();
    let rrc_helps = pairs.iter().all(|(a, b)| a < b);
    let decade = (1e-2..=1e-1).contains(&pairs[2].1);

    let checks = [
        ("n_tx non-decreasing", monotone, format!("{:?}", by_n.iter().map(|v| fmt(*v)).collect::<Vec<_>>())),
        ("hidden 50 within 2x of 100", plateau, format!("{} vs {}", fmt(h50), fmt(h100))),
        ("fresh <= 2x fixed", vs_fixed, format!("{} vs {}", fmt(fresh), fmt(fixed))),
        ("rrc < no rrc", rrc_helps, format!("{:?}", pairs.iter().map(|(a, b)| (fmt(*a), fmt(*b))).collect::<Vec<_>>())),
        ("no rrc at 10 dB in [1e-2, 1e-1]", decade, fmt(pairs[2].1)),
    ];
    let pass = checks.iter().all(|c| c.1);
    let detail: Vec<String> = checks
        .iter()
        .map(|(name, ok, d)| format!("[{name}: {} {d}]", if *ok { "ok" } else { "no" }))
        .collect();
    verdict(2, pass, &detail.join(" "));
    assert!(pass);
}

#[test]
fn criterion_3_identifiability() {
    let r = run(ExperimentKind::Fig6ef, "n_tx = 100\nevals_per_device = 50\nreplicates = 3");
    assert_eq!(r.distances.len(), 3);
    let ident: Vec<f64> = r.distances.iter().map(|d| d.identifiability).collect();
    let ratio: Vec<f64> = r.distances.iter().map(|d| d.median_inter() / d.median_intra()).collect();
    let med = common::median(ident.clone());
    let pass = med >= 0.99 && ratio.iter().all(|&q| q >= 3.0);
    verdict(
        3,
        pass,
        &format!("identifiability {ident:.4?} median {med:.4} (>= 0.99), median inter/intra {ratio:.1?} (>= 3)"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_receiver_compensation() {
    let r = run(ExperimentKind::Fig10, "n_tx = 100\nreplicates = 3");
    let m = |mode: &str| rate(&r, &[("n_tx", "100"), ("rx_mode", mode)]);
    let (ideal, raw, comp) = (m("ideal"), m("nonideal"), m("compensated"));
    let pass = comp <= raw / 10.0 && comp <= 5.0 * ideal;
    verdict(
        4,
        pass,
        &format!("ideal {} nonideal {} compensated {} (<= nonideal/10 and <= 5x ideal)", fmt(ideal), fmt(raw), fmt(comp)),
    );
    assert!(pass);
}

#[test]
fn criterion_5_estimators() {
    let spec = ParamSpec::table_one();
    let fleet = sample_fleet(100, &spec, 55).unwrap();
    let mut errs = [Vec::new(), Vec::new(), Vec::new()];
    for (i, t) in fleet.iter().enumerate() {
        let frame = common::noisy_frame(t, 30_000, 15.0, 1000 + i as u64);
        let fv = receive_and_extract(frame, &RxProfile::ideal(), &RxConfig::default()).unwrap();
        errs[0].push((fv.est_freq_offset_ppm - t.lo_offset_ppm).abs());
        errs[1].push((fv.est_gain_imbalance_db - t.iq_gain_imbalance_db).abs());
        errs[2].push((fv.est_phase_imbalance_deg - t.iq_phase_imbalance_deg).abs());
    }
    let med: Vec<f64> = errs.into_iter().map(common::median).collect();
    let pass = med[0] <= 0.2 && med[1] <= 0.1 && med[2] <= 0.5;
    verdict(
        5,
        pass,
        &format!("median |error|: {:.2e} ppm (0.2), {:.2e} dB (0.1), {:.2e} deg (0.5)", med[0], med[1], med[2]),
    );
    assert!(pass);
}

fn gradient_error(model: &MlpModel, z: &Array2<f64>, labels: &[usize]) -> f64 {
    let (eps, floor) = (1e-6, 1e-4);
    let analytic = model.loss_and_gradient(z.view(), labels, true).unwrap().gradient.unwrap();
    let p0 = model.params();
    let mut m = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        let mut loss = |v: f64| {
            p[i] = v;
            m.set_params(&p).unwrap();
            m.loss_and_gradient(z.view(), labels, false).unwrap().loss
        };
        let numeric = (loss(p0[i] + eps) - loss(p0[i] - eps)) / (2.0 * eps);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale > floor {
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    worst
}

#[test]
fn criterion_6_learning_engine() {
    let mut rng = rng_from_seed(4);
    let model = MlpModel::init(5, 7, 4, 11);
    let z = Array2::from_shape_fn((30, 5), |_| rng.sample::<f64, _>(StandardNormal));
    let labels: Vec<usize> = (0..30).map(|i| i % 4).collect();
    let grad = gradient_error(&model, &z, &labels);

    let centres: Vec<[f64; 5]> = (0..10).map(|_| std::array::from_fn(|_| rng.random_range(-10.0..10.0))).collect();
    let y: Vec<usize> = (0..200).map(|i| i / 20).collect();
    let x = Array2::from_shape_fn((200, 5), |(i, j)| centres[y[i]][j] + 0.1 * rng.sample::<f64, _>(StandardNormal));
    let hp = TrainParams {
        hidden: 20,
        max_epochs: 2000,
        target_error: 1e-3,
        ..TrainParams::default()
    };
    let (_, rep) = train_classifier(x.view(), &y, &hp, 1).unwrap();
    let pass = grad < 1e-6 && rep.stop == StopReason::TargetError && rep.loss <= 1e-3 && rep.epochs <= 2000;
    verdict(
        6,
        pass,
        &format!("gradient relative error {grad:.2e} (< 1e-6), SCG loss {:.2e} after {} epochs", rep.loss, rep.epochs),
    );
    assert!(pass);
}

fn bits(s: &str) -> Vec<u8> {
    s.bytes().map(|c| c - b'0').collect()
}

const PI100: &str = "1100100100001111110110101010001000100001011010001100001000110100110001001100011001100010100010111000";
const L128: &str = "11001100000101010110110001001100111000000000001001001101010100010001001111010110100000001101011111001100111001101101100010110010";

/// Published walk-through p-values, to the six places given.
fn worked_examples() -> Vec<(&'static str, f64, f64)> {
    let p = |o: nist::Outcome| o.p_value().unwrap();
    let (s1, s2) = nist::serial(&bits("0011011101"), 3);
    vec![
        ("frequency", p(nist::frequency(&bits("1011010101"))), 0.527089),
        ("frequency pi", p(nist::frequency(&bits(PI100))), 0.109599),
        ("block", p(nist::block_frequency(&bits("0110011010"), 3)), 0.801252),
        ("block pi", p(nist::block_frequency(&bits(PI100), 10)), 0.706438),
        ("runs", p(nist::runs(&bits("1001101011"))), 0.147232),
        ("runs pi", p(nist::runs(&bits(PI100))), 0.500798),
        ("longest run", nist::longest_run_counts(&bits(L128)).unwrap().2, 0.180598),
        ("dft", nist::dft_counts(&bits("1001010011")).unwrap().1, 0.468160),
        ("dft pi", nist::dft_counts(&bits(PI100)).unwrap().1, 0.646355),
        ("serial 1", p(s1), 0.808792),
        ("serial 2", p(s2), 0.670320),
        ("apen", p(nist::approximate_entropy(&bits("0100110101"), 3)), 0.261961),
        ("apen pi", p(nist::approximate_entropy(&bits(PI100), 2)), 0.235301),
        ("cusum", p(nist::cumulative_sums(&bits("1011010111"), false)), 0.411585),
        ("cusum pi forward", p(nist::cumulative_sums(&bits(PI100), false)), 0.219194),
        ("cusum pi reverse", p(nist::cumulative_sums(&bits(PI100), true)), 0.114866),
    ]
}

#[test]
fn criterion_7_randomness() {
    let r = run(ExperimentKind::Fig7, "nist_devices = 1000");
    let (puf, _) = r.nist.as_ref().unwrap();
    let rates: Vec<(&str, Option<f64>)> = puf.tests.iter().map(|t| (t.name, t.pass_rate())).collect();
    let all = rates.iter().all(|(_, r)| r.is_some_and(|r| r >= 0.9));
    let freq = puf.get("Frequency").and_then(|t| t.pass_rate()).unwrap_or(0.0);
    let bad: Vec<&str> = worked_examples()
        .into_iter()
        .filter(|(_, got, want)| (got - want).abs() >= 5e-7)
        .map(|(name, _, _)| name)
        .collect();
    let pass = all && freq >= 0.95 && bad.is_empty();
    let shown: Vec<String> = rates
        .iter()
        .map(|(n, r)| format!("{n}={}", r.map(|v| format!("{v:.3}")).unwrap_or("skipped".into())))
        .collect();
    verdict(
        7,
        pass,
        &format!("{} records; {}; worked examples off: {bad:?}", puf.records, shown.join(" ")),
    );
    assert!(pass);
}

#[test]
fn criterion_8_metric_brute_force() {
    // distances on ten devices against every pair
    let link = LinkConfig::default();
    let fleet = sample_fleet(10, &link.spec, 3).unwrap();
    let d = compute_distances(&fleet, 5, &link, 4).unwrap();
    let g = evaluate_geo_means(&fleet, 5, &link, 4).unwrap();
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for a in 0..10 {
        for b in a..10 {
            for i in 0..5 {
                for j in 0..5 {
                    let v = (g[a][i] - g[b][j]).abs();
                    if a == b && i < j {
                        intra.push(v);
                    } else if a != b && i == j {
                        inter.push(v);
                    }
                }
            }
        }
    }
    let sorted = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v
    };
    let hits: usize = intra.iter().map(|x| inter.iter().filter(|y| x < *y).count()).sum();
    let exact = hits as f64 / (intra.len() * inter.len()) as f64;
    let sd = (exact * (1.0 - exact) / IDENTIFIABILITY_SAMPLES as f64).sqrt();
    let dist_ok = sorted(d.d_intra.clone()) == sorted(intra)
        && sorted(d.d_inter.clone()) == sorted(inter)
        && (exact_identifiability(&d.d_intra, &d.d_inter) - exact).abs() < 1e-12
        && (d.identifiability - exact).abs() <= 3.0 * sd.max(1e-6);

    // sampled FAR against every wrong claim; FRR exactly
    let n_classes = 8;
    let model = MlpModel::init(FEATURE_COUNT, 6, n_classes, 5);
    let mut rng = rng_from_seed(6);
    let rows: Vec<FeatureVector> = (0..3000)
        .map(|_| FeatureVector::from_array(std::array::from_fn(|_| rng.random_range(-3.0..3.0))))
        .collect();
    let truth: Vec<usize> = (0..rows.len()).map(|_| rng.random_range(0..n_classes)).collect();
    let thresholds: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0).collect();
    let curve = far_frr_curve(&model, (&rows, &truth), (&rows, &truth), &thresholds, 9).unwrap();
    let pred = model.predict_batch(rfpuf::neural::feature_matrix(&rows).view()).unwrap();
    let mut far_ok = true;
    for p in &curve.points {
        let accepted: usize = pred
            .iter()
            .zip(&truth)
            .filter(|((c, conf), t)| c != *t && *conf >= p.threshold)
            .count();
        let far = accepted as f64 / (rows.len() * (n_classes - 1)) as f64;
        let sd = (far * (1.0 - far) / rows.len() as f64).sqrt();
        let frr = pred.iter().zip(&truth).filter(|((c, conf), t)| c != *t || *conf < p.threshold).count() as f64
            / rows.len() as f64;
        far_ok &= (p.far - far).abs() <= 3.0 * sd + 1e-12 && p.frr == frr;
    }

    // monotone on every curve: the one above and random attempt sets
    let mut monotone = curve.points.windows(2).all(|w| w[1].far <= w[0].far && w[1].frr >= w[0].frr);
    for _ in 0..200 {
        let mut attempts = |n: usize| -> Vec<Attempt> {
            (0..n)
                .map(|_| Attempt {
                    predicted: rng.random_range(0..5),
                    confidence: rng.random_range(0.0..=1.0),
                    claimed: rng.random_range(0..5),
                })
                .collect()
        };
        let (g, i) = (attempts(40), attempts(40));
        let c = far_frr_from_attempts(&g, &i, &thresholds).unwrap();
        monotone &= c.points.windows(2).all(|w| w[1].far <= w[0].far && w[1].frr >= w[0].frr);
    }
    let pass = dist_ok && far_ok && monotone;
    verdict(
        8,
        pass,
        &format!("distances {dist_ok}, FAR/FRR vs enumeration {far_ok}, monotone {monotone}"),
    );
    assert!(pass);
}

const SMALL: &str = "\
n_tx = 6
replicates = 2
frame_bits = 16384
n_eval_frames = 60
n_train_iterations = 3
evals_per_device = 4
nist_fleets = 2
nist_devices = 700
master_seed = 77
";

fn csv_bytes(kind: ExperimentKind, threads: usize) -> Vec<String> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let r = pool.install(|| run(kind, SMALL));
    r.tables.iter().map(|t| t.to_csv_string(&r.config)).collect()
}

#[test]
fn criterion_9_determinism() {
    let kinds = [
        ExperimentKind::Fig6a,
        ExperimentKind::Fig6b,
        ExperimentKind::Fig6c,
        ExperimentKind::Fig6d,
        ExperimentKind::Fig6ef,
        ExperimentKind::Fig7,
        ExperimentKind::Fig10,
    ];
    let mut differing = Vec::new();
    for kind in kinds {
        let one = csv_bytes(kind, 1);
        if one != csv_bytes(kind, 1) || one != csv_bytes(kind, 4) {
            differing.push(kind.name());
        }
    }
    let pass = differing.is_empty();
    verdict(9, pass, &format!("{} kinds rerun at 1 and 4 threads, differing: {differing:?}", kinds.len()));
    assert!(pass);
}
