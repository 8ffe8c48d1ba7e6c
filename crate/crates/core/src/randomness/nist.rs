//! Eight statistical tests from NIST SP 800-22: frequency, block frequency,
//! runs, longest run of ones, discrete Fourier transform, approximate
//! entropy, serial and cumulative sums.

use num_complex::Complex64;
use rustfft::FftPlanner;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// Default significance level.
pub const ALPHA: f64 = 0.01;
/// Minimum record length accepted by the batch runner.
pub const MIN_RECORD_BITS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    PValue(f64),
    Skipped,
}

impl Outcome {
    pub fn p_value(&self) -> Option<f64> {
        match self {
            Outcome::PValue(p) => Some(*p),
            Outcome::Skipped => None,
        }
    }
}

/// Upper regularized incomplete gamma `Q(a, x)`.
fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(a, x).clamp(0.0, 1.0)
}

fn clamp_p(p: f64) -> Outcome {
    Outcome::PValue(if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) })
}

fn check_bits(bits: &[u8]) -> Result<()> {
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::invalid("bit values must be 0 or 1"));
    }
    Ok(())
}

/// Monobit frequency test.
pub fn frequency(bits: &[u8]) -> Outcome {
    if bits.is_empty() {
        return Outcome::Skipped;
    }
    let n = bits.len() as f64;
    let s: i64 = bits.iter().map(|&b| 2 * b as i64 - 1).sum();
    clamp_p(erfc(s.unsigned_abs() as f64 / n.sqrt() / std::f64::consts::SQRT_2))
}

/// Frequency within blocks of `m` bits.
pub fn block_frequency(bits: &[u8], m: usize) -> Outcome {
    if m == 0 || bits.len() < m {
        return Outcome::Skipped;
    }
    let blocks = bits.len() / m;
    let chi: f64 = bits
        .chunks_exact(m)
        .take(blocks)
        .map(|b| {
            let pi = b.iter().map(|&x| x as f64).sum::<f64>() / m as f64;
            (pi - 0.5).powi(2)
        })
        .sum::<f64>()
        * 4.0
        * m as f64;
    clamp_p(igamc(blocks as f64 / 2.0, chi / 2.0))
}

/// Runs test. Fails outright when the frequency prerequisite is violated.
pub fn runs(bits: &[u8]) -> Outcome {
    if bits.len() < 2 {
        return Outcome::Skipped;
    }
    let n = bits.len() as f64;
    let pi = bits.iter().map(|&b| b as f64).sum::<f64>() / n;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return Outcome::PValue(0.0);
    }
    let v = 1 + bits.windows(2).filter(|w| w[0] != w[1]).count();
    let num = (v as f64 - 2.0 * n * pi * (1.0 - pi)).abs();
    clamp_p(erfc(num / (2.0 * (2.0 * n).sqrt() * pi * (1.0 - pi))))
}

/// Block size, class boundaries and class probabilities for the longest-run
/// test at a given sequence length.
fn longest_run_table(n: usize) -> Option<(usize, usize, &'static [f64])> {
    const P8: [f64; 4] = [0.2148, 0.3672, 0.2305, 0.1875];
    const P128: [f64; 6] = [0.1174, 0.2430, 0.2493, 0.1752, 0.1027, 0.1124];
    const P10K: [f64; 7] = [0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727];
    if n < 128 {
        None
    } else if n < 6272 {
        Some((8, 1, &P8))
    } else if n < 750_000 {
        Some((128, 4, &P128))
    } else {
        Some((10_000, 10, &P10K))
    }
}

/// Longest run of ones in a block. Returns the class counts as well.
pub fn longest_run_counts(bits: &[u8]) -> Option<(Vec<usize>, f64, f64)> {
    let (m, low, pis) = longest_run_table(bits.len())?;
    let k = pis.len() - 1;
    let blocks = bits.len() / m;
    let mut nu = vec![0usize; pis.len()];
    for b in bits.chunks_exact(m).take(blocks) {
        let (mut run, mut best) = (0usize, 0usize);
        for &x in b {
            run = if x == 1 { run + 1 } else { 0 };
            best = best.max(run);
        }
        let class = best.clamp(low, low + k) - low;
        nu[class] += 1;
    }
    let nb = blocks as f64;
    let chi: f64 = nu
        .iter()
        .zip(pis)
        .map(|(&v, &p)| (v as f64 - nb * p).powi(2) / (nb * p))
        .sum();
    Some((nu, chi, igamc(k as f64 / 2.0, chi / 2.0)))
}

pub fn longest_run(bits: &[u8]) -> Outcome {
    match longest_run_counts(bits) {
        Some((_, _, p)) => clamp_p(p),
        None => Outcome::Skipped,
    }
}

/// Spectral test. Returns `(N1, p)` where `N1` counts peaks below threshold.
pub fn dft_counts(bits: &[u8]) -> Option<(usize, f64)> {
    let n = bits.len();
    if n < 2 {
        return None;
    }
    let mut buf: Vec<Complex64> = bits
        .iter()
        .map(|&b| Complex64::new(2.0 * b as f64 - 1.0, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let nf = n as f64;
    let t = ((1.0f64 / 0.05).ln() * nf).sqrt();
    let n0 = 0.95 * nf / 2.0;
    let n1 = buf[..n / 2].iter().filter(|c| c.norm() < t).count();
    let d = (n1 as f64 - n0) / (nf * 0.95 * 0.05 / 4.0).sqrt();
    Some((n1, erfc(d.abs() / std::f64::consts::SQRT_2)))
}

pub fn dft(bits: &[u8]) -> Outcome {
    match dft_counts(bits) {
        Some((_, p)) => clamp_p(p),
        None => Outcome::Skipped,
    }
}

/// Counts of every overlapping `m`-bit pattern, wrapping around the end.
fn pattern_counts(bits: &[u8], m: usize) -> Vec<u64> {
    let mut counts = vec![0u64; 1 << m];
    if m == 0 {
        counts[0] = bits.len() as u64;
        return counts;
    }
    let n = bits.len();
    let mask = (1usize << m) - 1;
    let mut v = 0usize;
    for i in 0..m - 1 {
        v = (v << 1) | bits[i % n] as usize;
    }
    for i in 0..n {
        v = ((v << 1) | bits[(i + m - 1) % n] as usize) & mask;
        counts[v] += 1;
    }
    counts
}

fn psi_squared(bits: &[u8], m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let n = bits.len() as f64;
    let sum: f64 = pattern_counts(bits, m).iter().map(|&c| (c as f64).powi(2)).sum();
    (1u64 << m) as f64 / n * sum - n
}

/// Serial test; returns both p-values.
pub fn serial(bits: &[u8], m: usize) -> (Outcome, Outcome) {
    if m < 2 || m > 24 || bits.len() < m {
        return (Outcome::Skipped, Outcome::Skipped);
    }
    let (a, b, c) = (psi_squared(bits, m), psi_squared(bits, m - 1), psi_squared(bits, m - 2));
    let d1 = a - b;
    let d2 = a - 2.0 * b + c;
    let p1 = igamc(2f64.powi(m as i32 - 2), d1 / 2.0);
    let p2 = igamc(2f64.powi(m as i32 - 3), d2 / 2.0);
    (clamp_p(p1), clamp_p(p2))
}

/// Approximate entropy with block length `m`.
pub fn approximate_entropy(bits: &[u8], m: usize) -> Outcome {
    if m == 0 || m > 24 || bits.len() < m + 1 {
        return Outcome::Skipped;
    }
    let n = bits.len() as f64;
    let phi = |m: usize| -> f64 {
        pattern_counts(bits, m)
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum()
    };
    let apen = phi(m) - phi(m + 1);
    let chi = 2.0 * n * (std::f64::consts::LN_2 - apen);
    clamp_p(igamc(2f64.powi(m as i32 - 1), chi / 2.0))
}

/// Cumulative sums, forward (`reverse = false`) or backward.
pub fn cumulative_sums(bits: &[u8], reverse: bool) -> Outcome {
    if bits.is_empty() {
        return Outcome::Skipped;
    }
    let n = bits.len() as f64;
    let step = |b: u8| 2 * b as i64 - 1;
    let (mut s, mut z) = (0i64, 0i64);
    let mut visit = |b: u8| {
        s += step(b);
        z = z.max(s.abs());
    };
    if reverse {
        bits.iter().rev().for_each(|&b| visit(b));
    } else {
        bits.iter().for_each(|&b| visit(b));
    }
    let z = z as f64;
    let norm = Normal::standard();
    let phi = |x: f64| norm.cdf(x);
    let sq = n.sqrt();
    let mut sum1 = 0.0;
    let lo = ((-n / z + 1.0) / 4.0).floor() as i64;
    let hi = ((n / z - 1.0) / 4.0).floor() as i64;
    for k in lo..=hi {
        let k = k as f64;
        sum1 += phi((4.0 * k + 1.0) * z / sq) - phi((4.0 * k - 1.0) * z / sq);
    }
    let mut sum2 = 0.0;
    let lo2 = ((-n / z - 3.0) / 4.0).floor() as i64;
    for k in lo2..=hi {
        let k = k as f64;
        sum2 += phi((4.0 * k + 3.0) * z / sq) - phi((4.0 * k + 1.0) * z / sq);
    }
    clamp_p(1.0 - sum1 + sum2)
}

/// Names of the reported rows, in table order.
pub const TEST_NAMES: [&str; 10] = [
    "Frequency",
    "BlockFrequency",
    "CumulativeSumsForward",
    "CumulativeSumsReverse",
    "Runs",
    "LongestRun",
    "FFT",
    "ApproximateEntropy",
    "Serial1",
    "Serial2",
];

/// Parameters chosen from the record length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestParams {
    pub block_frequency_m: usize,
    pub apen_m: usize,
    pub serial_m: usize,
}

impl TestParams {
    /// Block frequency: `M ≥ 20`, `M > 0.01·n`, fewer than 100 blocks.
    /// Approximate entropy: `m ≤ ⌊log₂ n⌋ − 6`. Serial: `m ≤ ⌊log₂ n⌋ − 3`.
    pub fn for_length(n: usize) -> Self {
        let log2 = (usize::BITS - 1 - n.max(1).leading_zeros()) as usize;
        TestParams {
            block_frequency_m: 20.max(n / 100 + 1).max(n.div_ceil(99)),
            apen_m: log2.saturating_sub(6).min(10),
            serial_m: log2.saturating_sub(3).min(16),
        }
    }
}

/// The ten p-values of one record, in [`TEST_NAMES`] order.
pub fn run_all(bits: &[u8], params: &TestParams) -> Result<[Outcome; 10]> {
    check_bits(bits)?;
    let n = bits.len();
    let gate = |ok: bool, o: Outcome| if ok { o } else { Outcome::Skipped };
    let (s1, s2) = serial(bits, params.serial_m);
    Ok([
        gate(n >= 100, frequency(bits)),
        gate(n >= 100, block_frequency(bits, params.block_frequency_m)),
        gate(n >= 100, cumulative_sums(bits, false)),
        gate(n >= 100, cumulative_sums(bits, true)),
        gate(n >= 100, runs(bits)),
        longest_run(bits),
        gate(n >= 1000, dft(bits)),
        gate(params.apen_m >= 2, approximate_entropy(bits, params.apen_m)),
        gate(params.serial_m >= 3, s1),
        gate(params.serial_m >= 3, s2),
    ])
}

/// Pass statistics of one test over many records.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSummary {
    pub name: &'static str,
    pub passed: usize,
    pub evaluated: usize,
    pub skipped: usize,
}

impl TestSummary {
    /// `None` when every record was skipped.
    pub fn pass_rate(&self) -> Option<f64> {
        (self.evaluated > 0).then(|| self.passed as f64 / self.evaluated as f64)
    }
}
