//! PUF quality metrics: normalized-ppm distances, identifiability, false
//! detection, FAR/FRR and challenge-response space size.

use std::fmt::Write as _;

use log::warn;
use num_bigint::BigUint;
use rand::Rng;
use rayon::prelude::*;

use crate::devicegen::{Param, ParamSpec, TxProfile};
use crate::error::{Error, Result};
use crate::neural::{feature_matrix, MlpModel};
use crate::pipeline::{extract_fleet, LinkConfig, Purpose};
use crate::rxchain::{FeatureVector, RxProfile, DEVICE_FEATURES};
use crate::seed::{derive_rng, Stream};

/// Sampled `(intra, inter)` pairs used for the identifiability estimate.
pub const IDENTIFIABILITY_SAMPLES: usize = 100_000;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Nominal value and standard deviation for each device feature, `None` when
/// the feature has no process-spread reference.
///
/// Frequency, gain and phase map onto their transmitter parameter entries.
/// Ring compression and EVM have no such entry: their frame-to-frame spread is
/// set by channel noise, not by the device, so they are left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScales {
    pub entries: [Option<(f64, f64)>; DEVICE_FEATURES],
}

impl FeatureScales {
    pub fn from_spec(spec: &ParamSpec) -> Self {
        let e = |p: &Param| Some((p.mean, p.std_dev));
        FeatureScales {
            entries: [
                e(&spec.lo_offset_ppm),
                e(&spec.iq_gain_imbalance_db),
                e(&spec.iq_phase_imbalance_deg),
                None,
                None,
            ],
        }
    }

    /// Entries that contribute to the geometric mean (σ > 0).
    pub fn active(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.entries.iter().enumerate().filter_map(|(i, e)| match e {
            Some((m, s)) if *s > 0.0 => Some((i, *m, *s)),
            _ => None,
        })
    }
}

/// `|x − nominal| / 6σ · 10⁶` for each referenced device feature, reduced by a
/// geometric mean. Features with σ = 0 are skipped with a warning; if none
/// remain the result is 0.
pub fn geo_mean_ppm_scaled(fv: &FeatureVector, scales: &FeatureScales) -> f64 {
    let x = fv.device_features();
    if scales.entries.iter().flatten().any(|(_, s)| *s == 0.0) {
        warn!("zero-range feature excluded from the geometric mean");
    }
    let mut sum_ln = 0.0;
    let mut k = 0usize;
    for (i, nominal, sd) in scales.active() {
        let ppm = (x[i] - nominal).abs() / (6.0 * sd) * 1e6;
        sum_ln += ppm.ln();
        k += 1;
    }
    if k == 0 {
        return 0.0;
    }
    (sum_ln / k as f64).exp()
}

pub fn geo_mean_ppm(fv: &FeatureVector, spec: &ParamSpec) -> f64 {
    geo_mean_ppm_scaled(fv, &FeatureScales::from_spec(spec))
}

/// Distance distributions between evaluations of the same device and of
/// different devices answering the same challenge.
#[derive(Debug, Clone, PartialEq)]
pub struct PufDistances {
    pub d_intra: Vec<f64>,
    pub d_inter: Vec<f64>,
    pub worst_case_d_intra: f64,
    pub worst_case_d_inter: f64,
    pub identifiability: f64,
}

impl PufDistances {
    pub fn median_intra(&self) -> f64 {
        median(&self.d_intra)
    }

    pub fn median_inter(&self) -> f64 {
        median(&self.d_inter)
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Intra pairs: every `(e, e')` of one device. Inter pairs: devices `d < d'`
/// at the same evaluation index `e`. `g[d][e]` is the geo-mean of device `d`
/// at evaluation `e`.
pub fn distances_from_geo(g: &[Vec<f64>], seed: u64) -> Result<PufDistances> {
    let k = g.first().map_or(0, Vec::len);
    if g.len() < 2 || k < 2 || g.iter().any(|r| r.len() != k) {
        return Err(Error::InsufficientData(
            "need at least 2 devices with the same number (>= 2) of evaluations".into(),
        ));
    }
    let mut d_intra = Vec::with_capacity(g.len() * k * (k - 1) / 2);
    for row in g {
        for a in 0..k {
            for b in a + 1..k {
                d_intra.push((row[a] - row[b]).abs());
            }
        }
    }
    let mut d_inter = Vec::with_capacity(k * g.len() * (g.len() - 1) / 2);
    for e in 0..k {
        for a in 0..g.len() {
            for b in a + 1..g.len() {
                d_inter.push((g[a][e] - g[b][e]).abs());
            }
        }
    }
    let mut rng = derive_rng(seed, 0, Stream::Sampling);
    let hits = (0..IDENTIFIABILITY_SAMPLES)
        .filter(|_| {
            let i = d_intra[rng.random_range(0..d_intra.len())];
            let j = d_inter[rng.random_range(0..d_inter.len())];
            i < j
        })
        .count();
    Ok(PufDistances {
        worst_case_d_intra: d_intra.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        worst_case_d_inter: d_inter.iter().copied().fold(f64::INFINITY, f64::min),
        identifiability: hits as f64 / IDENTIFIABILITY_SAMPLES as f64,
        d_intra,
        d_inter,
    })
}

/// `P(intra < inter)` over all `(intra, inter)` combinations, by sorting.
pub fn exact_identifiability(d_intra: &[f64], d_inter: &[f64]) -> f64 {
    if d_intra.is_empty() || d_inter.is_empty() {
        return f64::NAN;
    }
    let mut inter = d_inter.to_vec();
    inter.sort_by(f64::total_cmp);
    let greater: usize = d_intra
        .iter()
        .map(|&x| inter.len() - inter.partition_point(|&y| y <= x))
        .sum();
    greater as f64 / (d_intra.len() as f64 * inter.len() as f64)
}

/// Per-device geo-mean values for `k` evaluations of each device (ideal
/// receiver). Rejected frames are an error here: the pairing needs every cell.
pub fn evaluate_geo_means(fleet: &[TxProfile], k: usize, link: &LinkConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    let batch = extract_fleet(fleet, &RxProfile::ideal(), link, seed, Purpose::Distance, 0..k);
    if batch.rejected > 0 {
        return Err(Error::ExcessiveRejection {
            rejected: batch.rejected,
            total: batch.total(),
            limit: 0.0,
        });
    }
    let scales = FeatureScales::from_spec(&link.spec);
    Ok(batch
        .rows
        .chunks(k)
        .map(|c| c.iter().map(|fv| geo_mean_ppm_scaled(fv, &scales)).collect())
        .collect())
}

pub fn compute_distances(fleet: &[TxProfile], k: usize, link: &LinkConfig, seed: u64) -> Result<PufDistances> {
    if k < 2 {
        return Err(Error::InsufficientData("need at least 2 evaluations per device".into()));
    }
    let g = evaluate_geo_means(fleet, k, link, seed)?;
    distances_from_geo(&g, seed)
}

/// Proportion with a Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportion {
    pub successes: usize,
    pub total: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn wilson(successes: usize, total: usize) -> Proportion {
    let n = total as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Proportion {
        successes,
        total,
        rate: p,
        ci_low: if successes == 0 { 0.0 } else { (centre - half).max(0.0) },
        ci_high: if successes == total { 1.0 } else { (centre + half).min(1.0) },
    }
}

/// Misclassification fraction from predicted and true labels.
pub fn false_detection_from_predictions(pred: &[usize], truth: &[usize]) -> Result<Proportion> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InsufficientData("empty evaluation set".into()));
    }
    let wrong = pred.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wilson(wrong, pred.len()))
}

/// Misclassification fraction of `model` on a held-out set.
pub fn false_detection_probability(model: &MlpModel, rows: &[FeatureVector], labels: &[usize]) -> Result<Proportion> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("empty evaluation set".into()));
    }
    let pred: Vec<usize> = model
        .predict_batch(feature_matrix(rows).view())?
        .into_iter()
        .map(|(c, _)| c)
        .collect();
    false_detection_from_predictions(&pred, labels)
}

/// One verification attempt: the classifier's output and the claimed identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attempt {
    pub predicted: usize,
    pub confidence: f64,
    pub claimed: usize,
}

impl Attempt {
    fn accepted(&self, tau: f64) -> bool {
        self.predicted == self.claimed && self.confidence >= tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarFrrPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarFrrCurve {
    pub points: Vec<FarFrrPoint>,
    /// `(threshold, rate)` where FAR and FRR cross, linearly interpolated.
    pub eer: Option<(f64, f64)>,
}

/// FRR: genuine attempts rejected. FAR: impostor attempts accepted.
pub fn far_frr_from_attempts(genuine: &[Attempt], impostor: &[Attempt], thresholds: &[f64]) -> Result<FarFrrCurve> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::InsufficientData("genuine and impostor sets must be non-empty".into()));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) || thresholds.iter().any(|t| t.is_nan()) {
        return Err(Error::invalid("thresholds must be strictly ascending"));
    }
    let points: Vec<FarFrrPoint> = thresholds
        .iter()
        .map(|&tau| FarFrrPoint {
            threshold: tau,
            far: impostor.iter().filter(|a| a.accepted(tau)).count() as f64 / impostor.len() as f64,
            frr: genuine.iter().filter(|a| !a.accepted(tau)).count() as f64 / genuine.len() as f64,
        })
        .collect();
    Ok(FarFrrCurve {
        eer: equal_error_rate(&points),
        points,
    })
}

fn equal_error_rate(points: &[FarFrrPoint]) -> Option<(f64, f64)> {
    let d = |p: &FarFrrPoint| p.far - p.frr;
    let first = points.first()?;
    if d(first) == 0.0 {
        return Some((first.threshold, first.far));
    }
    points.windows(2).find_map(|w| {
        let (d0, d1) = (d(&w[0]), d(&w[1]));
        if d1 == 0.0 {
            return Some((w[1].threshold, w[1].far));
        }
        if (d0 > 0.0) != (d1 > 0.0) {
            let t = d0 / (d0 - d1);
            let tau = w[0].threshold + t * (w[1].threshold - w[0].threshold);
            let rate = w[0].far + t * (w[1].far - w[0].far);
            return Some((tau, rate));
        }
        None
    })
}

/// Claimed identities for impostor attempts: a uniformly drawn wrong id.
pub fn impostor_claims(truth: &[usize], n_classes: usize, seed: u64) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return Err(Error::invalid("impostor claims need at least two classes"));
    }
    let mut rng = derive_rng(seed, 0, Stream::Claims);
    Ok(truth
        .iter()
        .map(|&t| (t + 1 + rng.random_range(0..n_classes - 1)) % n_classes)
        .collect())
}

/// Genuine attempts claim the true id; impostor attempts claim a random other
/// id, drawn per row from `seed`.
pub fn far_frr_curve(
    model: &MlpModel,
    genuine: (&[FeatureVector], &[usize]),
    impostor: (&[FeatureVector], &[usize]),
    thresholds: &[f64],
    seed: u64,
) -> Result<FarFrrCurve> {
    let predict = |rows: &[FeatureVector]| -> Result<Vec<(usize, f64)>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        model.predict_batch(feature_matrix(rows).view())
    };
    let g: Vec<Attempt> = predict(genuine.0)?
        .into_iter()
        .zip(genuine.1)
        .map(|((p, c), &t)| Attempt {
            predicted: p,
            confidence: c,
            claimed: t,
        })
        .collect();
    let claims = impostor_claims(impostor.1, model.output_dim, seed)?;
    let i: Vec<Attempt> = predict(impostor.0)?
        .into_iter()
        .zip(claims)
        .map(|((p, c), claimed)| Attempt {
            predicted: p,
            confidence: c,
            claimed,
        })
        .collect();
    far_frr_from_attempts(&g, &i, thresholds)
}

/// `2^(bits·m)` challenge-response pairs.
pub fn crp_count(m: u32, bits_per_feature: u32) -> Result<BigUint> {
    if m == 0 || bits_per_feature == 0 {
        return Err(Error::invalid("m and bits_per_feature must be >= 1"));
    }
    Ok(BigUint::from(1u8) << (m as u64 * bits_per_feature as u64))
}

/// log₂ of the probability of guessing a response: `−bits·m`.
pub fn guess_probability_log2(m: u32, bits_per_feature: u32) -> f64 {
    -(m as f64 * bits_per_feature as f64)
}

pub fn crp_count_log10(m: u32, bits_per_feature: u32) -> f64 {
    m as f64 * bits_per_feature as f64 * std::f64::consts::LOG10_2
}

/// Summary text block with the headline metrics.
pub fn summary_text(dist: Option<&PufDistances>, detection: Option<&Proportion>, curve: Option<&FarFrrCurve>) -> String {
    let mut s = String::new();
    if let Some(d) = dist {
        let _ = writeln!(s, "intra_pairs = {}", d.d_intra.len());
        let _ = writeln!(s, "inter_pairs = {}", d.d_inter.len());
        let _ = writeln!(s, "median_d_intra_ppm = {:.6e}", d.median_intra());
        let _ = writeln!(s, "median_d_inter_ppm = {:.6e}", d.median_inter());
        let _ = writeln!(s, "worst_case_d_intra_ppm = {:.6e}", d.worst_case_d_intra);
        let _ = writeln!(s, "worst_case_d_inter_ppm = {:.6e}", d.worst_case_d_inter);
        let _ = writeln!(s, "identifiability = {:.6}", d.identifiability);
    }
    if let Some(p) = detection {
        let _ = writeln!(s, "false_detection = {:.6e}", p.rate);
        let _ = writeln!(s, "false_detection_ci95 = {:.6e} {:.6e}", p.ci_low, p.ci_high);
        let _ = writeln!(s, "evaluations = {}", p.total);
    }
    if let Some(c) = curve {
        match c.eer {
            Some((t, r)) => {
                let _ = writeln!(s, "eer = {r:.6e}");
                let _ = writeln!(s, "eer_threshold = {t:.6}");
            }
            None => {
                let _ = writeln!(s, "eer = none");
            }
        }
    }
    s
}

/// Geo-mean values for a batch of rows, in parallel.
pub fn geo_means(rows: &[FeatureVector], spec: &ParamSpec) -> Vec<f64> {
    let scales = FeatureScales::from_spec(spec);
    rows.par_iter().map(|fv| geo_mean_ppm_scaled(fv, &scales)).collect()
}
