//! Transmit chain: challenge bits → 16-QAM → RRC shaping → I-Q imbalance →
//! PA compression → LO offset.
//!
//! Everything is simulated at complex baseband; the carrier itself is never
//! synthesized and the LO error appears as a complex rotation.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;

use crate::devicegen::TxProfile;
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

pub const BITS_PER_SYMBOL: usize = 4;

/// Default challenge length.
pub const DEFAULT_FRAME_BITS: usize = 30_000;

/// Rapp smoothness factor.
pub const RAPP_SMOOTHNESS: f64 = 2.0;

/// Input amplitude at the 1 dB compression point of the Rapp model with p = 2,
/// as a fraction of the saturation amplitude: `(10^(2p/20) - 1)^(1/2p)`.
/// A back-off of `b` dB w.r.t. saturation is `b + 20·log10(0.8745)` ≈ `b - 1.16` dB
/// w.r.t. the 1 dB compression point.
pub const RAPP_P1DB_OVER_VSAT: f64 = 0.874_518_782_862_442_8;

/// Challenge bit-stream. Length is a multiple of four.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitStream {
    bits: Vec<u8>,
}

impl BitStream {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() || bits.len() % BITS_PER_SYMBOL != 0 {
            return Err(Error::invalid(format!(
                "bit-stream length {} is not a positive multiple of {BITS_PER_SYMBOL}",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("bit values must be 0 or 1"));
        }
        Ok(BitStream { bits })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Frame-level transmit/receive parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameConfig {
    pub samples_per_symbol: usize,
    pub rolloff: f64,
    pub span_symbols: usize,
    pub symbol_rate_hz: f64,
    pub carrier_frequency_hz: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            samples_per_symbol: 8,
            rolloff: 0.35,
            span_symbols: 10,
            symbol_rate_hz: 1.0e6,
            carrier_frequency_hz: 2.412e9,
        }
    }
}

impl FrameConfig {
    pub fn sample_rate_hz(&self) -> f64 {
        self.symbol_rate_hz * self.samples_per_symbol as f64
    }

    pub fn pulse(&self) -> PulseShape {
        PulseShape {
            rolloff: self.rolloff,
            span_symbols: self.span_symbols,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_symbol < 4 {
            return Err(Error::invalid("samples_per_symbol must be >= 4"));
        }
        self.pulse().validate()?;
        if !(self.symbol_rate_hz > 0.0 && self.symbol_rate_hz.is_finite()) {
            return Err(Error::invalid("symbol_rate_hz must be finite and > 0"));
        }
        if !(self.carrier_frequency_hz > 0.0 && self.carrier_frequency_hz.is_finite()) {
            return Err(Error::invalid("carrier_frequency_hz must be finite and > 0"));
        }
        Ok(())
    }
}

/// Root-raised-cosine pulse parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShape {
    pub rolloff: f64,
    pub span_symbols: usize,
}

impl PulseShape {
    pub fn validate(&self) -> Result<()> {
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::invalid(format!("rolloff {} outside (0, 1]", self.rolloff)));
        }
        if self.span_symbols == 0 || self.span_symbols % 2 != 0 {
            return Err(Error::invalid(format!(
                "span {} must be even and positive",
                self.span_symbols
            )));
        }
        Ok(())
    }
}

/// Complex-baseband frame with its timing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
    pub symbol_rate_hz: f64,
    pub samples_per_symbol: usize,
    /// Number of data symbols carried.
    pub symbol_count: usize,
    /// Sample index of the first symbol centre (accumulated filter group delay).
    pub first_symbol_index: usize,
    /// Transmit pulse, if the frame was shaped.
    pub pulse: Option<PulseShape>,
    /// Whether a receive matched filter has been applied.
    pub matched: bool,
}

impl IqFrame {
    /// Sample indices of the symbol centres.
    pub fn symbol_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.symbol_count).map(move |n| self.first_symbol_index + n * self.samples_per_symbol)
    }

    /// Samples taken at the symbol centres.
    pub fn symbol_samples(&self) -> Vec<Complex64> {
        self.symbol_indices()
            .map(|i| self.samples.get(i).copied().unwrap_or_default())
            .collect()
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_symbol < 4 {
            return Err(Error::invalid("samples_per_symbol must be >= 4"));
        }
        let expected = self.symbol_rate_hz * self.samples_per_symbol as f64;
        if (self.sample_rate_hz - expected).abs() > 1e-9 * expected {
            return Err(Error::invalid("sample_rate_hz != symbol_rate_hz * samples_per_symbol"));
        }
        if self.samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::invalid("frame contains non-finite samples"));
        }
        Ok(())
    }
}

pub(crate) fn rms(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Multiplies sample `k` by `exp(j·2π·freq·k/fs)`, phase referenced to sample 0.
pub(crate) fn rotate(samples: &mut [Complex64], freq_hz: f64, sample_rate_hz: f64) {
    if freq_hz == 0.0 || samples.is_empty() {
        return;
    }
    const BLOCK: usize = 1024;
    let w = 2.0 * PI * freq_hz / sample_rate_hz;
    let table: Vec<Complex64> = (0..BLOCK.min(samples.len()))
        .map(|i| Complex64::from_polar(1.0, w * i as f64))
        .collect();
    for (b, chunk) in samples.chunks_mut(BLOCK).enumerate() {
        let base = Complex64::from_polar(1.0, w * (b * BLOCK) as f64);
        for (s, t) in chunk.iter_mut().zip(&table) {
            *s *= base * t;
        }
    }
}

/// Uniformly distributed pseudo-random challenge bits.
pub fn generate_prbs(length_bits: usize, seed: u64) -> Result<BitStream> {
    if length_bits < BITS_PER_SYMBOL || length_bits % BITS_PER_SYMBOL != 0 {
        return Err(Error::invalid(format!(
            "PRBS length {length_bits} must be >= 4 and divisible by 4"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut bits = Vec::with_capacity(length_bits);
    while bits.len() < length_bits {
        let word: u64 = rng.random();
        let take = (length_bits - bits.len()).min(64);
        bits.extend((0..take).map(|i| ((word >> i) & 1) as u8));
    }
    BitStream::new(bits)
}

/// Gray-coded amplitude for a bit pair: 00→−3, 01→−1, 11→+1, 10→+3.
fn gray_level(b0: u8, b1: u8) -> f64 {
    match (b0, b1) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        _ => 3.0,
    }
}

/// Unit-average-power 16-QAM. The first two bits of each nibble pick the I
/// level, the last two the Q level.
pub fn map_16qam(bits: &BitStream) -> Result<Vec<Complex64>> {
    let scale = 1.0 / 10f64.sqrt();
    Ok(bits
        .bits()
        .chunks_exact(BITS_PER_SYMBOL)
        .map(|c| Complex64::new(gray_level(c[0], c[1]) * scale, gray_level(c[2], c[3]) * scale))
        .collect())
}

/// The 16 ideal constellation points (unit average power).
pub fn constellation_16qam() -> [Complex64; 16] {
    let scale = 1.0 / 10f64.sqrt();
    let levels = [-3.0, -1.0, 1.0, 3.0];
    let mut pts = [Complex64::default(); 16];
    for (i, &a) in levels.iter().enumerate() {
        for (j, &b) in levels.iter().enumerate() {
            pts[i * 4 + j] = Complex64::new(a * scale, b * scale);
        }
    }
    pts
}

/// Unit-energy root-raised-cosine taps, `span·sps + 1` long, symmetric.
pub fn rrc_taps(samples_per_symbol: usize, rolloff: f64, span_symbols: usize) -> Result<Vec<f64>> {
    PulseShape {
        rolloff,
        span_symbols,
    }
    .validate()?;
    if samples_per_symbol == 0 {
        return Err(Error::invalid("samples_per_symbol must be > 0"));
    }
    let half = (span_symbols * samples_per_symbol / 2) as isize;
    let beta = rolloff;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|i| {
            let t = i as f64 / samples_per_symbol as f64;
            if t == 0.0 {
                1.0 - beta + 4.0 * beta / PI
            } else if (t.abs() - 1.0 / (4.0 * beta)).abs() < 1e-9 {
                beta / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * beta)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * beta)).cos())
            } else {
                ((PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos())
                    / (PI * t * (1.0 - (4.0 * beta * t).powi(2)))
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let norm = energy.sqrt();
    taps.iter_mut().for_each(|h| *h /= norm);
    Ok(taps)
}

/// Upsamples by zero insertion and convolves with the RRC taps (full
/// convolution). The first symbol centre lands at `span·sps/2`.
pub fn pulse_shape(symbols: &[Complex64], cfg: &FrameConfig) -> Result<IqFrame> {
    cfg.validate()?;
    if symbols.is_empty() {
        return Err(Error::invalid("no symbols to shape"));
    }
    let sps = cfg.samples_per_symbol;
    let taps = rrc_taps(sps, cfg.rolloff, cfg.span_symbols)?;
    let len = (symbols.len() - 1) * sps + taps.len();
    let mut out = vec![Complex64::default(); len];
    for (n, s) in symbols.iter().enumerate() {
        let base = n * sps;
        for (o, h) in out[base..base + taps.len()].iter_mut().zip(&taps) {
            *o += s * h;
        }
    }
    Ok(IqFrame {
        samples: out,
        sample_rate_hz: cfg.sample_rate_hz(),
        symbol_rate_hz: cfg.symbol_rate_hz,
        samples_per_symbol: sps,
        symbol_count: symbols.len(),
        first_symbol_index: (taps.len() - 1) / 2,
        pulse: Some(cfg.pulse()),
        matched: false,
    })
}

/// Q-branch I-Q imbalance: `s = I + j·g·e^{jφ}·Q`, i.e.
/// `I' = I − g·Q·sinφ`, `Q' = g·Q·cosφ`.
pub fn apply_iq_imbalance(mut frame: IqFrame, gain_db: f64, phase_deg: f64) -> IqFrame {
    if gain_db == 0.0 && phase_deg == 0.0 {
        return frame;
    }
    let g = 10f64.powf(gain_db / 20.0);
    let (sin_phi, cos_phi) = phase_deg.to_radians().sin_cos();
    let (gs, gc) = (g * sin_phi, g * cos_phi);
    for s in frame.samples.iter_mut() {
        let (i, q) = (s.re, s.im);
        *s = Complex64::new(i - gs * q, gc * q);
    }
    frame
}

/// Rapp AM/AM (p = 2), phase preserved: `v' = v / (1 + (v/v_sat)^4)^(1/4)`
/// with `v_sat = rms(frame)·10^(backoff/20)`.
pub fn apply_pa_nonlinearity(mut frame: IqFrame, backoff_db: f64) -> IqFrame {
    let v_sat = frame.rms() * 10f64.powf(backoff_db / 20.0);
    if v_sat <= 0.0 || !v_sat.is_finite() {
        return frame;
    }
    let inv_sat_sq = 1.0 / (v_sat * v_sat);
    for s in frame.samples.iter_mut() {
        let r2 = s.norm_sqr() * inv_sat_sq;
        *s /= (1.0 + r2 * r2).sqrt().sqrt();
    }
    frame
}

/// Rapp AM/AM on a single amplitude.
pub fn rapp_am_am(v: f64, v_sat: f64) -> f64 {
    let p2 = 2.0 * RAPP_SMOOTHNESS;
    v / (1.0 + (v / v_sat).powf(p2)).powf(1.0 / p2)
}

pub fn lo_offset_hz(offset_ppm: f64, carrier_hz: f64) -> f64 {
    offset_ppm * 1e-6 * carrier_hz
}

/// Rotates the frame by the LO error `offset_ppm·1e-6·carrier_hz`.
pub fn apply_lo_offset(mut frame: IqFrame, offset_ppm: f64, carrier_hz: f64) -> IqFrame {
    let df = lo_offset_hz(offset_ppm, carrier_hz);
    rotate(&mut frame.samples, df, frame.sample_rate_hz);
    frame
}

/// Map → shape → I-Q imbalance → PA → LO offset.
pub fn transmit(bits: &BitStream, tx: &TxProfile, cfg: &FrameConfig) -> Result<IqFrame> {
    let symbols = map_16qam(bits)?;
    let frame = pulse_shape(&symbols, cfg)?;
    let frame = apply_iq_imbalance(frame, tx.iq_gain_imbalance_db, tx.iq_phase_imbalance_deg);
    let frame = apply_pa_nonlinearity(frame, tx.pa_backoff_db);
    Ok(apply_lo_offset(frame, tx.lo_offset_ppm, cfg.carrier_frequency_hz))
}

fn dump_paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("iq"), base.with_extension("hdr"))
}

/// Writes `<base>.iq` (little-endian interleaved f64 I/Q pairs) and
/// `<base>.hdr` (key = value text with rates and counts).
pub fn write_frame_dump(frame: &IqFrame, base: &Path) -> Result<()> {
    let (iq_path, hdr_path) = dump_paths(base);
    let mut bytes = Vec::with_capacity(frame.samples.len() * 16);
    for s in &frame.samples {
        bytes.extend_from_slice(&s.re.to_le_bytes());
        bytes.extend_from_slice(&s.im.to_le_bytes());
    }
    std::fs::File::create(&iq_path)?.write_all(&bytes)?;
    let mut hdr = String::new();
    let _ = writeln!(hdr, "format = f64le_interleaved_iq");
    let _ = writeln!(hdr, "sample_rate_hz = {:.16e}", frame.sample_rate_hz);
    let _ = writeln!(hdr, "symbol_rate_hz = {:.16e}", frame.symbol_rate_hz);
    let _ = writeln!(hdr, "samples_per_symbol = {}", frame.samples_per_symbol);
    let _ = writeln!(hdr, "sample_count = {}", frame.samples.len());
    let _ = writeln!(hdr, "symbol_count = {}", frame.symbol_count);
    let _ = writeln!(hdr, "first_symbol_index = {}", frame.first_symbol_index);
    if let Some(p) = frame.pulse {
        let _ = writeln!(hdr, "rolloff = {:.16e}", p.rolloff);
        let _ = writeln!(hdr, "span_symbols = {}", p.span_symbols);
    }
    let _ = writeln!(hdr, "matched = {}", frame.matched);
    std::fs::write(hdr_path, hdr)?;
    Ok(())
}

pub fn read_frame_dump(base: &Path) -> Result<IqFrame> {
    let (iq_path, hdr_path) = dump_paths(base);
    if !hdr_path.exists() {
        return Err(Error::MissingFile(hdr_path));
    }
    let hdr = std::fs::read_to_string(&hdr_path)?;
    let get = |key: &str| -> Option<&str> {
        hdr.lines().find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    };
    let ctx = hdr_path.display().to_string();
    let num = |key: &str| -> Result<f64> {
        get(key)
            .ok_or_else(|| Error::parse(&ctx, format!("missing {key}")))?
            .parse::<f64>()
            .map_err(|e| Error::parse(&ctx, format!("{key}: {e}")))
    };
    let int = |key: &str| -> Result<usize> {
        get(key)
            .ok_or_else(|| Error::parse(&ctx, format!("missing {key}")))?
            .parse::<usize>()
            .map_err(|e| Error::parse(&ctx, format!("{key}: {e}")))
    };
    let mut bytes = Vec::new();
    std::fs::File::open(&iq_path)?.read_to_end(&mut bytes)?;
    let count = int("sample_count")?;
    if bytes.len() != count * 16 {
        return Err(Error::parse(&ctx, "sample_count does not match payload size"));
    }
    let samples = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    let pulse = match get("rolloff") {
        Some(_) => Some(PulseShape {
            rolloff: num("rolloff")?,
            span_symbols: int("span_symbols")?,
        }),
        None => None,
    };
    Ok(IqFrame {
        samples,
        sample_rate_hz: num("sample_rate_hz")?,
        symbol_rate_hz: num("symbol_rate_hz")?,
        samples_per_symbol: int("samples_per_symbol")?,
        symbol_count: int("symbol_count")?,
        first_symbol_index: int("first_symbol_index")?,
        pulse,
        matched: get("matched") == Some("true"),
    })
}
