//! Flat channel: attenuation, Doppler rotation and AWGN, in that order.

use rand_distr::{Distribution, StandardNormal};

use crate::devicegen::ChannelRealization;
use crate::error::Result;
use crate::seed::rng_from_seed;
use crate::txchain::{rotate, IqFrame, BITS_PER_SYMBOL};

/// Complex noise variance for a given Eb/N0:
/// `σ² = P_sig / (10^(EbN0/10) · bits_per_symbol / samples_per_symbol)`.
pub fn noise_variance(signal_power: f64, eb_n0_db: f64, samples_per_symbol: usize) -> f64 {
    if eb_n0_db == f64::INFINITY {
        return 0.0;
    }
    let eb_n0 = 10f64.powf(eb_n0_db / 10.0);
    signal_power / (eb_n0 * BITS_PER_SYMBOL as f64 / samples_per_symbol as f64)
}

/// Per-sample SNR in dB implied by an Eb/N0.
pub fn implied_snr_db(eb_n0_db: f64, samples_per_symbol: usize) -> f64 {
    eb_n0_db + 10.0 * (BITS_PER_SYMBOL as f64 / samples_per_symbol as f64).log10()
}

/// `eb_n0_db = +∞` disables the noise stage.
pub fn apply_channel(mut frame: IqFrame, ch: &ChannelRealization, seed: u64) -> Result<IqFrame> {
    ch.validate()?;
    frame.validate()?;
    if ch.gain_db != 0.0 {
        let g = 10f64.powf(ch.gain_db / 20.0);
        frame.samples.iter_mut().for_each(|s| *s *= g);
    }
    rotate(&mut frame.samples, ch.doppler_hz, frame.sample_rate_hz);
    let p_sig = frame.rms().powi(2);
    let var = noise_variance(p_sig, ch.eb_n0_db, frame.samples_per_symbol);
    if var > 0.0 {
        let sd = (var / 2.0).sqrt();
        let mut rng = rng_from_seed(seed);
        for s in frame.samples.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            s.re += sd * re;
            s.im += sd * im;
        }
    }
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txchain::{generate_prbs, map_16qam, pulse_shape, FrameConfig};
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn frame(bits: usize, seed: u64) -> IqFrame {
        let sym = map_16qam(&generate_prbs(bits, seed).unwrap()).unwrap();
        pulse_shape(&sym, &FrameConfig::default()).unwrap()
    }

    #[test]
    fn clean_channel_is_identity() {
        let f = frame(400, 1);
        let out = apply_channel(f.clone(), &ChannelRealization::clean(), 9).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn snr_matches_implied_value() {
        let f = frame(30_000, 2);
        let ch = ChannelRealization {
            eb_n0_db: 15.0,
            doppler_hz: 0.0,
            gain_db: 0.0,
        };
        let out = apply_channel(f.clone(), &ch, 3).unwrap();
        let (mut ps, mut pn) = (0.0, 0.0);
        for (o, c) in out.samples.iter().zip(&f.samples) {
            ps += c.norm_sqr();
            pn += (o - c).norm_sqr();
        }
        let snr = 10.0 * (ps / pn).log10();
        assert!((snr - implied_snr_db(15.0, 8)).abs() < 0.3, "{snr}");
        assert!((implied_snr_db(15.0, 8) - 11.9897).abs() < 1e-3);
    }

    #[test]
    fn noise_is_circular() {
        let f = frame(30_000, 2);
        let ch = ChannelRealization {
            eb_n0_db: 5.0,
            doppler_hz: 0.0,
            gain_db: 0.0,
        };
        let out = apply_channel(f.clone(), &ch, 5).unwrap();
        let mut m2 = Complex64::default();
        let mut p = 0.0;
        for (o, c) in out.samples.iter().zip(&f.samples) {
            let n = o - c;
            m2 += n * n;
            p += n.norm_sqr();
        }
        assert!(m2.norm() / p < 0.01);
    }

    #[test]
    fn doppler_phase_over_thirty_ms() {
        let fs = 8e6;
        let n = (0.03 * fs) as usize + 1;
        let f = IqFrame {
            samples: vec![Complex64::new(1.0, 0.0); n],
            sample_rate_hz: fs,
            symbol_rate_hz: 1e6,
            samples_per_symbol: 8,
            symbol_count: n / 8,
            first_symbol_index: 0,
            pulse: None,
            matched: false,
        };
        let ch = ChannelRealization {
            eb_n0_db: f64::INFINITY,
            doppler_hz: 1.0,
            gain_db: 0.0,
        };
        let out = apply_channel(f, &ch, 0).unwrap();
        let drift = (out.samples[n - 1] * out.samples[0].conj()).arg();
        assert!((drift - 2.0 * PI * 0.03).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_finite_realization() {
        let ch = ChannelRealization {
            eb_n0_db: 10.0,
            doppler_hz: f64::NAN,
            gain_db: 0.0,
        };
        assert!(apply_channel(frame(40, 1), &ch, 0).is_err());
    }
}
