//! Receiver DSP: optional receiver impairments, AGC, matched filtering, blind
//! carrier recovery and extraction of the feature vector.
//!
//! Symbol timing is known (transmit and receive clocks are phase aligned), so
//! no timing recovery is performed and the carrier correction is referenced
//! to sample 0 of the frame.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::devicegen::{Param, ParamSpec};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::txchain::{
    apply_iq_imbalance, apply_lo_offset, rotate, rrc_taps, FrameConfig, IqFrame, PulseShape,
};

/// Minimum symbol count for the blind frequency estimator.
pub const MIN_ESTIMATION_SYMBOLS: usize = 4096;
/// Minimum decisions per ring for the compression and IQ estimates.
pub const MIN_RING_SYMBOLS: usize = 100;
/// Required peak-to-median ratio of the fourth-power spectrum.
pub const MIN_SPECTRAL_PEAK_DB: f64 = 6.0;

const PHASE_BLOCK: usize = 256;
const FINE_PASSES: usize = 2;
const IQ_PASSES: usize = 2;
const EM_PASSES: usize = 6;
const EM_TOLERANCE: f64 = 1e-6;
/// Floor on the EVM when converting to an SNR, keeps the feature finite.
const EVM_FLOOR: f64 = 1e-10;

/// Number of device features.
pub const DEVICE_FEATURES: usize = 5;
pub const FEATURE_COUNT: usize = 8;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "est_freq_offset_ppm",
    "est_gain_imbalance_db",
    "est_phase_imbalance_deg",
    "est_ring_compression",
    "est_residual_evm",
    "est_agc_gain_db",
    "est_freq_drift_hz",
    "est_snr_db",
];

/// Receiver-side impairments. All zeros is the ideal receiver.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RxProfile {
    pub lo_offset_ppm: f64,
    pub iq_gain_imbalance_db: f64,
    pub iq_phase_imbalance_deg: f64,
}

impl RxProfile {
    pub fn ideal() -> Self {
        RxProfile::default()
    }

    pub fn is_ideal(&self) -> bool {
        *self == RxProfile::ideal()
    }

    /// Draws a receiver with the same truncated-normal statistics as a transmitter.
    pub fn sample(spec: &ParamSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from_seed(seed);
        let draw = |p: &Param, rng: &mut _| p.sample(rng);
        Ok(RxProfile {
            lo_offset_ppm: draw(&spec.lo_offset_ppm, &mut rng),
            iq_gain_imbalance_db: draw(&spec.iq_gain_imbalance_db, &mut rng),
            iq_phase_imbalance_deg: draw(&spec.iq_phase_imbalance_deg, &mut rng),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if [self.lo_offset_ppm, self.iq_gain_imbalance_db, self.iq_phase_imbalance_deg]
            .iter()
            .all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(Error::invalid(format!("non-finite receiver profile {self:?}")))
        }
    }
}

/// Extracted features: five device features followed by three channel features.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector {
    pub est_freq_offset_ppm: f64,
    pub est_gain_imbalance_db: f64,
    pub est_phase_imbalance_deg: f64,
    pub est_ring_compression: f64,
    pub est_residual_evm: f64,
    pub est_agc_gain_db: f64,
    pub est_freq_drift_hz: f64,
    pub est_snr_db: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.est_freq_offset_ppm,
            self.est_gain_imbalance_db,
            self.est_phase_imbalance_deg,
            self.est_ring_compression,
            self.est_residual_evm,
            self.est_agc_gain_db,
            self.est_freq_drift_hz,
            self.est_snr_db,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            est_freq_offset_ppm: a[0],
            est_gain_imbalance_db: a[1],
            est_phase_imbalance_deg: a[2],
            est_ring_compression: a[3],
            est_residual_evm: a[4],
            est_agc_gain_db: a[5],
            est_freq_drift_hz: a[6],
            est_snr_db: a[7],
        }
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        let a: [f64; FEATURE_COUNT] = s.try_into().map_err(|_| Error::DimensionMismatch {
            expected: FEATURE_COUNT,
            got: s.len(),
        })?;
        Ok(Self::from_array(a))
    }

    pub fn device_features(&self) -> [f64; DEVICE_FEATURES] {
        let a = self.to_array();
        [a[0], a[1], a[2], a[3], a[4]]
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && self.est_ring_compression > 0.0
            && self.est_ring_compression <= 1.5
            && self.est_residual_evm >= 0.0
    }
}

/// Receiver configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RxConfig {
    pub frame: FrameConfig,
    /// Apply the receive RRC; `false` samples the raw waveform at symbol centres.
    pub matched_filter: bool,
}

impl Default for RxConfig {
    fn default() -> Self {
        RxConfig {
            frame: FrameConfig::default(),
            matched_filter: true,
        }
    }
}

/// IQ-derived device features of a corrected symbol sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqFeatures {
    pub gain_db: f64,
    pub phase_deg: f64,
    pub ring_compression: f64,
    pub evm: f64,
    pub snr_db: f64,
}

/// Normalizes the frame to unit RMS. Returns the applied gain in dB.
pub fn agc(mut frame: IqFrame) -> Result<(IqFrame, f64)> {
    let r = frame.rms();
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::EstimationFailure(
            "AGC input has zero or non-finite power".into(),
        ));
    }
    let inv = 1.0 / r;
    frame.samples.iter_mut().for_each(|s| *s *= inv);
    Ok((frame, -20.0 * r.log10()))
}

fn check_pulse(frame: &IqFrame, pulse: &PulseShape) -> Result<()> {
    pulse.validate()?;
    if frame.matched {
        return Err(Error::invalid("frame is already matched-filtered"));
    }
    match frame.pulse {
        Some(p) if p != *pulse => Err(Error::invalid(format!(
            "matched filter {pulse:?} does not match transmit pulse {p:?}"
        ))),
        _ => Ok(()),
    }
}

/// Full-rate receive RRC. `None` bypasses the filter and returns the input.
/// The symbol-centre index is advanced by the filter's group delay.
pub fn matched_filter(frame: IqFrame, pulse: Option<PulseShape>) -> Result<IqFrame> {
    let Some(pulse) = pulse else {
        return Ok(frame);
    };
    check_pulse(&frame, &pulse)?;
    let taps = rrc_taps(frame.samples_per_symbol, pulse.rolloff, pulse.span_symbols)?;
    let n = frame.samples.len();
    let mut out = vec![Complex64::default(); n + taps.len() - 1];
    for (i, x) in frame.samples.iter().enumerate() {
        for (o, h) in out[i..i + taps.len()].iter_mut().zip(&taps) {
            *o += x * h;
        }
    }
    Ok(IqFrame {
        samples: out,
        first_symbol_index: frame.first_symbol_index + (taps.len() - 1) / 2,
        matched: true,
        pulse: Some(pulse),
        ..frame
    })
}

/// Matched-filter output evaluated only at the symbol centres.
fn matched_symbols(frame: &IqFrame, taps: Option<&[f64]>) -> Vec<Complex64> {
    let Some(taps) = taps else {
        return frame.symbol_samples();
    };
    let half = (taps.len() - 1) / 2;
    let x = &frame.samples;
    frame
        .symbol_indices()
        .map(|c| {
            // y[c + half] = Σ_t h[t]·x[c + half − t]; taps are symmetric.
            let lo = (c + half + 1).saturating_sub(taps.len());
            let hi = (c + half).min(x.len().saturating_sub(1));
            let mut acc = Complex64::default();
            if lo <= hi {
                for (k, xv) in x[lo..=hi].iter().enumerate() {
                    acc += xv * taps[c + half - (lo + k)];
                }
            }
            acc
        })
        .collect()
}

fn nearest_level(x: f64) -> f64 {
    const S: f64 = 3.162_277_660_168_379_5;
    let idx = ((x * S + 3.0) / 2.0).round().clamp(0.0, 3.0);
    (idx * 2.0 - 3.0) / S
}

/// Minimum-distance 16-QAM decision.
pub fn decide(z: Complex64) -> Complex64 {
    Complex64::new(nearest_level(z.re), nearest_level(z.im))
}

fn normalize_power(symbols: &[Complex64]) -> Vec<Complex64> {
    let p = symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / symbols.len().max(1) as f64;
    let inv = if p > 0.0 { 1.0 / p.sqrt() } else { 1.0 };
    symbols.iter().map(|s| s * inv).collect()
}

thread_local! {
    static FFT_CACHE: RefCell<(FftPlanner<f64>, HashMap<usize, Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn forward_fft(len: usize) -> Arc<dyn Fft<f64>> {
    FFT_CACHE.with(|c| {
        let mut c = c.borrow_mut();
        let (planner, cache) = &mut *c;
        cache
            .entry(len)
            .or_insert_with(|| planner.plan_fft_forward(len))
            .clone()
    })
}

/// Coarse estimate from the fourth-power spectral line, in Hz.
fn coarse_frequency(symbols: &[Complex64], symbol_rate: f64) -> Result<f64> {
    let len = symbols.len().next_power_of_two() * 4;
    let mut buf: Vec<Complex64> = symbols.iter().map(|s| (s * s) * (s * s)).collect();
    buf.resize(len, Complex64::default());
    forward_fft(len).process(&mut buf);
    let mag: Vec<f64> = buf.iter().map(|c| c.norm()).collect();
    let (k, peak) = mag
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |best, (i, &m)| if m > best.1 { (i, m) } else { best });
    let mut sorted = mag.clone();
    let mid = sorted.len() / 2;
    let (_, median, _) = sorted.select_nth_unstable_by(mid, f64::total_cmp);
    let median = *median;
    if !(median > 0.0) || 20.0 * (peak / median).log10() < MIN_SPECTRAL_PEAK_DB {
        return Err(Error::EstimationFailure(
            "no dominant fourth-power spectral line".into(),
        ));
    }
    let a = mag[(k + len - 1) % len];
    let c = mag[(k + 1) % len];
    let denom = a - 2.0 * peak + c;
    let delta = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    let mut bin = k as f64 + delta.clamp(-0.5, 0.5);
    if bin > len as f64 / 2.0 {
        bin -= len as f64;
    }
    Ok(bin * symbol_rate / len as f64 / 4.0)
}

fn unwrap(phases: &mut [f64], period: f64) {
    for i in 1..phases.len() {
        let d = phases[i] - phases[i - 1];
        phases[i] -= period * (d / period).round();
    }
}

/// Least-squares slope and intercept of `y` against `x`.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Per-block phase slope of `symbols` de-rotated by `freq`. `fourth` selects
/// the non-data-aided fourth-power phase; otherwise decisions are used.
/// Returns the residual frequency (Hz) and phase intercept (rad).
fn phase_slope(symbols: &[Complex64], symbol_rate: f64, freq: f64, phase0: f64, fourth: bool) -> (f64, f64) {
    let w = 2.0 * PI * freq / symbol_rate;
    let block = PHASE_BLOCK.min(symbols.len() / 8).max(16);
    let nblocks = symbols.len() / block;
    let mut t = Vec::with_capacity(nblocks);
    let mut ph = Vec::with_capacity(nblocks);
    for b in 0..nblocks {
        let mut acc = Complex64::default();
        let start = b * block;
        let rot0 = Complex64::from_polar(1.0, -(w * start as f64 + phase0));
        let step = Complex64::from_polar(1.0, -w);
        let mut r = rot0;
        for s in &symbols[start..start + block] {
            let z = s * r;
            if fourth {
                acc -= (z * z) * (z * z);
            } else {
                acc += z * decide(z).conj();
            }
            r *= step;
        }
        t.push((start as f64 + (block as f64 - 1.0) / 2.0) / symbol_rate);
        ph.push(acc.arg());
    }
    unwrap(&mut ph, 2.0 * PI);
    if fourth {
        ph.iter_mut().for_each(|p| *p /= 4.0);
    }
    let (slope, intercept) = linear_fit(&t, &ph);
    (slope / (2.0 * PI), intercept)
}

/// Fine frequency refinement starting from `coarse`.
fn fine_frequency(symbols: &[Complex64], symbol_rate: f64, coarse: f64) -> f64 {
    let sym = normalize_power(symbols);
    let (df, mut p0) = phase_slope(&sym, symbol_rate, coarse, 0.0, true);
    let mut f = coarse + df;
    for _ in 0..FINE_PASSES {
        let (df, dp) = phase_slope(&sym, symbol_rate, f, p0, false);
        f += df;
        p0 += dp;
    }
    f
}

fn estimate_symbols(symbols: &[Complex64], symbol_rate: f64) -> Result<f64> {
    if symbols.len() < MIN_ESTIMATION_SYMBOLS {
        return Err(Error::InsufficientData(format!(
            "{} symbols, frequency estimation needs {MIN_ESTIMATION_SYMBOLS}",
            symbols.len()
        )));
    }
    let coarse = coarse_frequency(symbols, symbol_rate)?;
    Ok(fine_frequency(symbols, symbol_rate, coarse))
}

fn symbol_taps(frame: &IqFrame) -> Result<Option<Vec<f64>>> {
    match (frame.pulse, frame.matched) {
        (Some(p), false) => Ok(Some(rrc_taps(frame.samples_per_symbol, p.rolloff, p.span_symbols)?)),
        _ => Ok(None),
    }
}

/// Blind carrier-offset estimate in Hz on the symbol-rate samples of `frame`.
/// A shaped frame that has not been matched is filtered first.
pub fn estimate_frequency_offset(frame: &IqFrame) -> Result<f64> {
    let taps = symbol_taps(frame)?;
    let symbols = matched_symbols(frame, taps.as_deref());
    estimate_symbols(&symbols, frame.symbol_rate_hz)
}

/// `coarse` is the starting frequency for both halves; `None` estimates it.
fn drift_symbols(symbols: &[Complex64], symbol_rate: f64, coarse: Option<f64>) -> Result<f64> {
    let half = symbols.len() / 2;
    if half < 8 * 16 {
        return Err(Error::InsufficientData("frame too short for drift estimate".into()));
    }
    let coarse = match coarse {
        Some(c) => c,
        None => coarse_frequency(symbols, symbol_rate)?,
    };
    let a = fine_frequency(&symbols[..half], symbol_rate, coarse);
    let b = fine_frequency(&symbols[half..2 * half], symbol_rate, coarse);
    Ok(b - a)
}

/// Difference of the second- and first-half frequency estimates, in Hz.
pub fn estimate_frequency_drift(frame: &IqFrame) -> Result<f64> {
    let taps = symbol_taps(frame)?;
    let symbols = matched_symbols(frame, taps.as_deref());
    drift_symbols(&symbols, frame.symbol_rate_hz, None)
}

type Mat2 = [[f64; 2]; 2];

fn inv2(m: &Mat2) -> Option<Mat2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

fn apply2(m: &Mat2, z: Complex64) -> Complex64 {
    Complex64::new(m[0][0] * z.re + m[0][1] * z.im, m[1][0] * z.re + m[1][1] * z.im)
}

/// Model matrix `k·Rot(θ)·[[1, −g·sinφ], [0, g·cosφ]]`.
fn model_matrix(k: f64, theta: f64, g: f64, phi: f64) -> Mat2 {
    let (st, ct) = theta.sin_cos();
    let u = [[1.0, -g * phi.sin()], [0.0, g * phi.cos()]];
    let r = [[ct, -st], [st, ct]];
    let mut m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = k * (r[i][0] * u[0][j] + r[i][1] * u[1][j]);
        }
    }
    m
}

/// Moment inversion of the IQ model: `φ = atan(−C/B)`,
/// `g = sqrt(B / (cos²φ·(A − B·tan²φ)))`.
pub fn moment_iq_estimate(symbols: &[Complex64]) -> Result<(f64, f64)> {
    let n = symbols.len() as f64;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for s in symbols {
        a += s.re * s.re;
        b += s.im * s.im;
        c += s.re * s.im;
    }
    let (a, b, c) = (a / n, b / n, c / n);
    if !(b > 0.0) {
        return Err(Error::EstimationFailure("degenerate quadrature branch".into()));
    }
    let phi = (-c / b).atan();
    let denom = phi.cos().powi(2) * (a - b * phi.tan().powi(2));
    if !(denom > 0.0) {
        return Err(Error::EstimationFailure("moment inversion is not positive".into()));
    }
    Ok(((b / denom).sqrt(), phi))
}

/// `(Σ y dᵀ)(Σ d dᵀ)⁻¹` from accumulated second moments.
fn solve_fit(yd: &Mat2, dd: &Mat2) -> Result<Mat2> {
    let ddi = inv2(dd).ok_or_else(|| Error::EstimationFailure("degenerate decisions".into()))?;
    let mut fit = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            fit[i][j] = yd[i][0] * ddi[0][j] + yd[i][1] * ddi[1][j];
        }
    }
    Ok(fit)
}

/// Splits a fitted distortion into `(k, θ, g, φ)` of [`model_matrix`].
fn factor_fit(fit: &Mat2) -> Result<(f64, f64, f64, f64)> {
    let k = fit[0][0].hypot(fit[1][0]);
    if !(k > 0.0) {
        return Err(Error::EstimationFailure("degenerate in-phase column".into()));
    }
    let theta = fit[1][0].atan2(fit[0][0]);
    let (st, ct) = theta.sin_cos();
    // U = Rot(−θ)·fit / k
    let u01 = (ct * fit[0][1] + st * fit[1][1]) / k;
    let u11 = (-st * fit[0][1] + ct * fit[1][1]) / k;
    Ok((k, theta, u01.hypot(u11), (-u01).atan2(u11)))
}

fn constellation() -> [[f64; 2]; 16] {
    const S: f64 = 3.162_277_660_168_379_5;
    let lv = [-3.0 / S, -1.0 / S, 1.0 / S, 3.0 / S];
    std::array::from_fn(|i| [lv[i % 4], lv[i / 4]])
}

/// One expectation-maximization step for `y = M·d + n` with `d` uniform over
/// the constellation and circular Gaussian `n` of variance `var`. Returns the
/// updated `M` and noise variance.
fn em_step(y: &[Complex64], m: &Mat2, var: f64) -> Result<(Mat2, f64)> {
    let pts = constellation();
    let img: Vec<[f64; 2]> = pts
        .iter()
        .map(|d| [m[0][0] * d[0] + m[0][1] * d[1], m[1][0] * d[0] + m[1][1] * d[1]])
        .collect();
    let mut yd = [[0.0; 2]; 2];
    let mut dd = [[0.0; 2]; 2];
    let mut yy = 0.0;
    let mut dist = [0.0; 16];
    for s in y {
        let (yr, yi) = (s.re, s.im);
        let mut best = f64::INFINITY;
        for (k, p) in img.iter().enumerate() {
            let d = (yr - p[0]).powi(2) + (yi - p[1]).powi(2);
            dist[k] = d;
            best = best.min(d);
        }
        let (mut w_sum, mut ed, mut edd) = (0.0, [0.0; 2], [[0.0; 2]; 2]);
        for (k, d) in pts.iter().enumerate() {
            let e = (dist[k] - best) / var;
            if e > 40.0 {
                continue;
            }
            let w = (-e).exp();
            w_sum += w;
            ed[0] += w * d[0];
            ed[1] += w * d[1];
            for i in 0..2 {
                for j in 0..2 {
                    edd[i][j] += w * d[i] * d[j];
                }
            }
        }
        let yv = [yr, yi];
        for i in 0..2 {
            for j in 0..2 {
                yd[i][j] += yv[i] * ed[j] / w_sum;
                dd[i][j] += edd[i][j] / w_sum;
            }
        }
        yy += yr * yr + yi * yi;
    }
    let fit = solve_fit(&yd, &dd)?;
    // E|y − M d|² = |y|² − 2·tr(Mᵀ Σ y E[d]ᵀ) + tr(Mᵀ M Σ E[d dᵀ])
    let mut cross = 0.0;
    let mut quad = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            cross += fit[i][j] * yd[i][j];
            let mtm: f64 = (0..2).map(|r| fit[r][i] * fit[r][j]).sum();
            quad += mtm * dd[i][j];
        }
    }
    let var = ((yy - 2.0 * cross + quad) / y.len() as f64).max(1e-12);
    Ok((fit, var))
}

/// Estimates the IQ imbalance, ring compression and EVM of a frequency-corrected
/// symbol sequence. The moment estimate seeds a decision-directed least-squares
/// fit of the 2×2 distortion, which is then refined by expectation-maximization
/// over soft decisions; rotation and scale are factored out of the result.
pub fn extract_iq_features(symbols: &[Complex64]) -> Result<IqFeatures> {
    if symbols.is_empty() {
        return Err(Error::InsufficientData("no symbols".into()));
    }
    let y = normalize_power(symbols);
    let (g, phi) = moment_iq_estimate(&y)?;
    let mut m = model_matrix(1.0, 0.0, g, phi);
    for _ in 0..IQ_PASSES {
        let minv = inv2(&m).ok_or_else(|| Error::EstimationFailure("singular IQ model".into()))?;
        let mut yd = [[0.0; 2]; 2];
        let mut dd = [[0.0; 2]; 2];
        for s in &y {
            let d = decide(apply2(&minv, *s));
            let (dv, yv) = ([d.re, d.im], [s.re, s.im]);
            for i in 0..2 {
                for j in 0..2 {
                    yd[i][j] += yv[i] * dv[j];
                    dd[i][j] += dv[i] * dv[j];
                }
            }
        }
        let (k, theta, g, phi) = factor_fit(&solve_fit(&yd, &dd)?)?;
        m = model_matrix(k, theta, g, phi);
    }
    let minv = inv2(&m).ok_or_else(|| Error::EstimationFailure("singular IQ model".into()))?;
    let mut var = y.iter().map(|s| (s - apply2(&m, decide(apply2(&minv, *s)))).norm_sqr()).sum::<f64>() / y.len() as f64;
    var = var.max(1e-12);
    for _ in 0..EM_PASSES {
        let (fit, v) = em_step(&y, &m, var)?;
        let (k, theta, g, phi) = factor_fit(&fit)?;
        let next = model_matrix(k, theta, g, phi);
        let change = (0..4).map(|i| (next[i / 2][i % 2] - m[i / 2][i % 2]).abs()).fold(0.0, f64::max);
        m = next;
        var = v;
        if change < EM_TOLERANCE {
            break;
        }
    }
    let (_, _, g, phi) = factor_fit(&m)?;
    let minv = inv2(&m).ok_or_else(|| Error::EstimationFailure("singular IQ model".into()))?;
    let inner_r = 2f64.sqrt() / 10f64.sqrt();
    let (mut inner, mut n_inner, mut outer, mut n_outer) = (0.0, 0usize, 0.0, 0usize);
    let mut err2 = 0.0;
    for s in &y {
        let z = apply2(&minv, *s);
        let d = decide(z);
        err2 += (z - d).norm_sqr();
        let r = d.norm();
        if (r - inner_r).abs() < 1e-9 {
            inner += z.norm();
            n_inner += 1;
        } else if (r - 3.0 * inner_r).abs() < 1e-9 {
            outer += z.norm();
            n_outer += 1;
        }
    }
    if n_inner < MIN_RING_SYMBOLS || n_outer < MIN_RING_SYMBOLS {
        return Err(Error::InsufficientData(format!(
            "ring populations inner={n_inner} outer={n_outer}, need {MIN_RING_SYMBOLS}"
        )));
    }
    let ring = ((outer / n_outer as f64) / (inner / n_inner as f64) / 3.0).clamp(f64::MIN_POSITIVE, 1.5);
    let evm = (err2 / y.len() as f64).sqrt();
    Ok(IqFeatures {
        gain_db: 20.0 * g.log10(),
        phase_deg: phi.to_degrees(),
        ring_compression: ring,
        evm,
        snr_db: -20.0 * evm.max(EVM_FLOOR).log10(),
    })
}

/// Applies the receiver's own impairments: LO rotation, then IQ imbalance.
pub fn inject_rx_impairments(frame: IqFrame, rx: &RxProfile, carrier_hz: f64) -> IqFrame {
    let frame = apply_lo_offset(frame, rx.lo_offset_ppm, carrier_hz);
    apply_iq_imbalance(frame, rx.iq_gain_imbalance_db, rx.iq_phase_imbalance_deg)
}

/// Full receive chain: rx impairments → AGC → matched filter → frequency
/// estimate → correction → drift → symbol decimation → IQ features.
///
/// The offset is estimated on the matched symbols, then removed from the
/// full-rate signal before the matched filter is applied again, so the
/// filter is not mismatched by a large residual carrier.
pub fn receive_and_extract(frame: IqFrame, rx: &RxProfile, cfg: &RxConfig) -> Result<FeatureVector> {
    frame.validate()?;
    rx.validate()?;
    let frame = inject_rx_impairments(frame, rx, cfg.frame.carrier_frequency_hz);
    let (mut frame, agc_db) = agc(frame)?;
    let taps = if cfg.matched_filter {
        let pulse = cfg.frame.pulse();
        check_pulse(&frame, &pulse)?;
        Some(rrc_taps(frame.samples_per_symbol, pulse.rolloff, pulse.span_symbols)?)
    } else {
        None
    };
    let rs = frame.symbol_rate_hz;
    let first = matched_symbols(&frame, taps.as_deref());
    let offset = estimate_symbols(&first, rs)?;
    rotate(&mut frame.samples, -offset, frame.sample_rate_hz);
    let symbols = matched_symbols(&frame, taps.as_deref());
    let drift = drift_symbols(&symbols, rs, Some(0.0))?;
    let iq = extract_iq_features(&symbols)?;
    let fv = FeatureVector {
        est_freq_offset_ppm: offset / cfg.frame.carrier_frequency_hz * 1e6,
        est_gain_imbalance_db: iq.gain_db,
        est_phase_imbalance_deg: iq.phase_deg,
        est_ring_compression: iq.ring_compression,
        est_residual_evm: iq.evm,
        est_agc_gain_db: agc_db,
        est_freq_drift_hz: drift,
        est_snr_db: iq.snr_db,
    };
    if !fv.is_valid() {
        return Err(Error::EstimationFailure(format!("invalid feature vector {fv:?}")));
    }
    Ok(fv)
}

/// Writes a feature matrix as CSV with a `device_id` label column.
pub fn write_features_csv<W: Write>(out: &mut W, rows: &[FeatureVector], labels: &[usize]) -> Result<()> {
    if rows.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    writeln!(out, "{},device_id", FEATURE_NAMES.join(","))?;
    for (r, l) in rows.iter().zip(labels) {
        let cells: Vec<String> = r.to_array().iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{},{l}", cells.join(","))?;
    }
    Ok(())
}

pub fn save_features_csv(path: &Path, rows: &[FeatureVector], labels: &[usize]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_features_csv(&mut f, rows, labels)?;
    f.flush()?;
    Ok(())
}
