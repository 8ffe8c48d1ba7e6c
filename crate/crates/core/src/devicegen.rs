//! Transmitter fleet and channel sampling.
//!
//! A fleet is the "manufactured" population of transmitters: each device draws
//! its LO offset, I-Q gain/phase imbalance and PA back-off independently from a
//! normal distribution truncated to `mean ± 3σ`. Channel conditions are drawn
//! per frame from the same kind of distribution.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::{derive_rng, rng_from_seed, Stream};

/// Truncation half-width in standard deviations.
pub const TRUNCATION_SIGMAS: f64 = 3.0;

/// Mean and standard deviation of one process or channel parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Param {
    pub mean: f64,
    pub std_dev: f64,
}

impl Param {
    pub const fn new(mean: f64, std_dev: f64) -> Self {
        Param { mean, std_dev }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.mean.is_finite() || !self.std_dev.is_finite() {
            return Err(Error::invalid(format!("{name}: non-finite mean or std_dev")));
        }
        if self.std_dev < 0.0 {
            return Err(Error::invalid(format!("{name}: negative std_dev")));
        }
        Ok(())
    }

    /// Draws from N(mean, std_dev²) restricted to `mean ± 3·std_dev` by
    /// rejection, so the retained shape is still a (truncated) bell curve.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= TRUNCATION_SIGMAS {
                return self.mean + self.std_dev * z;
            }
        }
    }
}

/// Statistical description of the transmitter population and the channel.
///
/// Units: LO offset in ppm of the carrier, gain imbalance and back-off in dB,
/// phase imbalance in degrees, Eb/N0 in dB, Doppler in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub carrier_frequency_hz: f64,
    pub lo_offset_ppm: Param,
    pub iq_gain_imbalance_db: Param,
    pub iq_phase_imbalance_deg: Param,
    pub pa_backoff_db: Param,
    pub eb_n0_db: Param,
    pub doppler_hz: Param,
    /// Uniform range of the per-frame channel attenuation, `(low, high)` in dB.
    pub channel_gain_range_db: (f64, f64),
}

impl Default for ParamSpec {
    fn default() -> Self {
        Self::table_one()
    }
}

impl ParamSpec {
    /// 802.11b-style population: 2.412 GHz carrier, LO σ = 8.3 ppm (20.1 kHz),
    /// I-Q imbalance 0 dB / 0° with σ 1 dB / 5°, PA back-off 30 ± 1 dB,
    /// Eb/N0 15 ± 2 dB, Doppler 0 ± 1 Hz.
    pub fn table_one() -> Self {
        ParamSpec {
            carrier_frequency_hz: 2.412e9,
            lo_offset_ppm: Param::new(0.0, 8.3),
            iq_gain_imbalance_db: Param::new(0.0, 1.0),
            iq_phase_imbalance_deg: Param::new(0.0, 5.0),
            pa_backoff_db: Param::new(30.0, 1.0),
            eb_n0_db: Param::new(15.0, 2.0),
            doppler_hz: Param::new(0.0, 1.0),
            channel_gain_range_db: (-30.0, 0.0),
        }
    }

    /// Same means, every standard deviation zero.
    pub fn zero_variance(&self) -> Self {
        let z = |p: Param| Param::new(p.mean, 0.0);
        ParamSpec {
            lo_offset_ppm: z(self.lo_offset_ppm),
            iq_gain_imbalance_db: z(self.iq_gain_imbalance_db),
            iq_phase_imbalance_deg: z(self.iq_phase_imbalance_deg),
            pa_backoff_db: z(self.pa_backoff_db),
            eb_n0_db: z(self.eb_n0_db),
            doppler_hz: z(self.doppler_hz),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_frequency_hz.is_finite() && self.carrier_frequency_hz > 0.0) {
            return Err(Error::invalid("carrier_frequency_hz must be finite and > 0"));
        }
        self.lo_offset_ppm.validate("lo_offset_ppm")?;
        self.iq_gain_imbalance_db.validate("iq_gain_imbalance_db")?;
        self.iq_phase_imbalance_deg.validate("iq_phase_imbalance_deg")?;
        self.pa_backoff_db.validate("pa_backoff_db")?;
        self.eb_n0_db.validate("eb_n0_db")?;
        self.doppler_hz.validate("doppler_hz")?;
        let (lo, hi) = self.channel_gain_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid("channel_gain_range_db must be finite with low <= high"));
        }
        Ok(())
    }
}

/// One transmitter's sampled impairments. `device_id` doubles as the class label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxProfile {
    pub device_id: usize,
    pub lo_offset_ppm: f64,
    pub iq_gain_imbalance_db: f64,
    pub iq_phase_imbalance_deg: f64,
    pub pa_backoff_db: f64,
}

impl TxProfile {
    /// A device sitting exactly at the population means.
    pub fn nominal(device_id: usize, spec: &ParamSpec) -> Self {
        TxProfile {
            device_id,
            lo_offset_ppm: spec.lo_offset_ppm.mean,
            iq_gain_imbalance_db: spec.iq_gain_imbalance_db.mean,
            iq_phase_imbalance_deg: spec.iq_phase_imbalance_deg.mean,
            pa_backoff_db: spec.pa_backoff_db.mean,
        }
    }
}

/// Per-frame channel conditions. `eb_n0_db = +∞` disables noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    pub eb_n0_db: f64,
    pub doppler_hz: f64,
    pub gain_db: f64,
}

impl ChannelRealization {
    /// Unit gain, no Doppler, no noise.
    pub fn clean() -> Self {
        ChannelRealization {
            eb_n0_db: f64::INFINITY,
            doppler_hz: 0.0,
            gain_db: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = !self.eb_n0_db.is_nan()
            && self.eb_n0_db != f64::NEG_INFINITY
            && self.doppler_hz.is_finite()
            && self.gain_db.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("non-finite channel realization {self:?}")))
        }
    }
}

/// Samples `n` devices with ids `0..n`. Device `i` draws from its own stream
/// derived from `(seed, i)`, in the fixed order LO, gain, phase, back-off.
pub fn sample_fleet(n: usize, spec: &ParamSpec, seed: u64) -> Result<Vec<TxProfile>> {
    if n == 0 {
        return Err(Error::invalid("fleet size must be >= 1"));
    }
    spec.validate()?;
    Ok((0..n).map(|id| sample_device(id, spec, seed)).collect())
}

/// Device `id` of the fleet `sample_fleet(_, spec, seed)` would return.
pub fn sample_device(id: usize, spec: &ParamSpec, seed: u64) -> TxProfile {
    let mut rng = derive_rng(seed, id as u64, Stream::Fleet);
    TxProfile {
        device_id: id,
        lo_offset_ppm: spec.lo_offset_ppm.sample(&mut rng),
        iq_gain_imbalance_db: spec.iq_gain_imbalance_db.sample(&mut rng),
        iq_phase_imbalance_deg: spec.iq_phase_imbalance_deg.sample(&mut rng),
        pa_backoff_db: spec.pa_backoff_db.sample(&mut rng),
    }
}

pub fn sample_channel(spec: &ParamSpec, seed: u64) -> Result<ChannelRealization> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let eb_n0_db = spec.eb_n0_db.sample(&mut rng);
    let doppler_hz = spec.doppler_hz.sample(&mut rng);
    let (lo, hi) = spec.channel_gain_range_db;
    let gain_db = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    Ok(ChannelRealization {
        eb_n0_db,
        doppler_hz,
        gain_db,
    })
}

const FLEET_HEADER: &str = "# rfpuf fleet v1";
const FLEET_COLUMNS: &str =
    "device_id lo_offset_ppm iq_gain_imbalance_db iq_phase_imbalance_deg pa_backoff_db";

/// Flat text form: a header, a column line, then one whitespace-separated record
/// per device with 17 significant digits per value.
pub fn fleet_to_string(fleet: &[TxProfile]) -> String {
    let mut out = format!("{FLEET_HEADER}\n# {FLEET_COLUMNS}\n");
    for tx in fleet {
        let _ = writeln!(
            out,
            "{} {:.16e} {:.16e} {:.16e} {:.16e}",
            tx.device_id,
            tx.lo_offset_ppm,
            tx.iq_gain_imbalance_db,
            tx.iq_phase_imbalance_deg,
            tx.pa_backoff_db
        );
    }
    out
}

pub fn fleet_from_str(text: &str) -> Result<Vec<TxProfile>> {
    let mut fleet = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ctx = || format!("fleet line {}", lineno + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::parse(ctx(), format!("expected 5 fields, got {}", fields.len())));
        }
        let device_id = fields[0]
            .parse::<usize>()
            .map_err(|e| Error::parse(ctx(), e.to_string()))?;
        let mut vals = [0.0f64; 4];
        for (v, f) in vals.iter_mut().zip(&fields[1..]) {
            *v = f.parse::<f64>().map_err(|e| Error::parse(ctx(), e.to_string()))?;
        }
        fleet.push(TxProfile {
            device_id,
            lo_offset_ppm: vals[0],
            iq_gain_imbalance_db: vals[1],
            iq_phase_imbalance_deg: vals[2],
            pa_backoff_db: vals[3],
        });
    }
    Ok(fleet)
}

pub fn write_fleet(path: &Path, fleet: &[TxProfile]) -> Result<()> {
    std::fs::write(path, fleet_to_string(fleet))?;
    Ok(())
}

pub fn read_fleet(path: &Path) -> Result<Vec<TxProfile>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fleet_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn within_truncation(value: f64, p: Param) -> bool {
        (value - p.mean).abs() <= TRUNCATION_SIGMAS * p.std_dev * (1.0 + 1e-12) + 1e-12 * p.mean.abs()
    }

    #[test]
    fn zero_variance_fleet_sits_at_means() {
        let spec = ParamSpec::table_one().zero_variance();
        let fleet = sample_fleet(4, &spec, 99).unwrap();
        for (i, tx) in fleet.iter().enumerate() {
            assert_eq!(*tx, TxProfile::nominal(i, &spec));
        }
    }

    #[test]
    fn fleet_is_deterministic() {
        let spec = ParamSpec::table_one();
        let a = sample_fleet(2, &spec, 7).unwrap();
        let b = sample_fleet(2, &spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[1], sample_device(1, &spec, 7));
    }

    #[test]
    fn rejects_empty_fleet_and_bad_spec() {
        let spec = ParamSpec::table_one();
        assert!(sample_fleet(0, &spec, 1).is_err());
        let mut bad = spec.clone();
        bad.iq_gain_imbalance_db.std_dev = f64::NAN;
        assert!(sample_fleet(3, &bad, 1).is_err());
        bad = spec.clone();
        bad.carrier_frequency_hz = 0.0;
        assert!(sample_channel(&bad, 1).is_err());
    }

    #[test]
    fn zero_variance_channel_is_at_means() {
        let spec = ParamSpec::table_one().zero_variance();
        let ch = sample_channel(&spec, 5).unwrap();
        assert_eq!(ch.eb_n0_db, 15.0);
        assert_eq!(ch.doppler_hz, 0.0);
        assert!((-30.0..=0.0).contains(&ch.gain_db));
        assert_eq!(ch, sample_channel(&spec, 5).unwrap());
    }

    #[test]
    fn fleet_text_round_trip_is_exact() {
        let fleet = sample_fleet(25, &ParamSpec::table_one(), 3).unwrap();
        let back = fleet_from_str(&fleet_to_string(&fleet)).unwrap();
        assert_eq!(fleet, back);
    }

    #[test]
    fn malformed_fleet_text_is_rejected() {
        assert!(fleet_from_str("0 1.0 2.0\n").is_err());
        assert!(fleet_from_str("x 1 2 3 4\n").is_err());
    }

    proptest! {
        #[test]
        fn every_parameter_is_within_three_sigma(seed in any::<u64>(), n in 1usize..40) {
            let spec = ParamSpec::table_one();
            for tx in sample_fleet(n, &spec, seed).unwrap() {
                prop_assert!(within_truncation(tx.lo_offset_ppm, spec.lo_offset_ppm));
                prop_assert!(within_truncation(tx.iq_gain_imbalance_db, spec.iq_gain_imbalance_db));
                prop_assert!(within_truncation(tx.iq_phase_imbalance_deg, spec.iq_phase_imbalance_deg));
                prop_assert!(within_truncation(tx.pa_backoff_db, spec.pa_backoff_db));
            }
            let ch = sample_channel(&spec, seed).unwrap();
            prop_assert!(within_truncation(ch.eb_n0_db, spec.eb_n0_db));
        }
    }
}
