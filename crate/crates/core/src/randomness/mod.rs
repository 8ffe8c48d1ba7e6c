//! Bit sequences from PUF responses and a subset of the NIST SP 800-22
//! statistical test suite.

pub mod nist;
pub mod quantize;
pub mod reference;

use std::io::Write;

use rand::RngCore;
use rayon::prelude::*;

use crate::devicegen::{sample_fleet, TxProfile};
use crate::error::{Error, Result};
use crate::pipeline::LinkConfig;
use crate::pufmetrics::{evaluate_geo_means, FeatureScales};
use crate::seed::{derive_rng, derive_seed, Stream};

pub use nist::{Outcome, TestSummary, ALPHA, MIN_RECORD_BITS, TEST_NAMES};
pub use quantize::quantize_to_bits;
pub use reference::GeoMeanReference;

/// ADC width applied to each device response.
pub const PUF_BITS_PER_VALUE: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NistConfig {
    pub record_bits: usize,
    pub alpha: f64,
}

impl Default for NistConfig {
    fn default() -> Self {
        NistConfig {
            record_bits: 16_000,
            alpha: ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NistReport {
    pub records: usize,
    pub tests: Vec<TestSummary>,
}

impl NistReport {
    pub fn get(&self, name: &str) -> Option<&TestSummary> {
        self.tests.iter().find(|t| t.name == name)
    }

    /// Smallest pass rate over evaluated tests; `None` if a test was skipped
    /// on every record.
    pub fn min_pass_rate(&self) -> Option<f64> {
        self.tests
            .iter()
            .map(|t| t.pass_rate())
            .try_fold(1.0f64, |acc, r| r.map(|r| acc.min(r)))
    }
}

/// Splits `bits` into records of `cfg.record_bits` and reports per-test pass
/// fractions. Records are tested in parallel.
pub fn nist_subset(bits: &[u8], cfg: &NistConfig) -> Result<NistReport> {
    if bits.len() < MIN_RECORD_BITS {
        return Err(Error::InsufficientData(format!(
            "{} bits; at least {MIN_RECORD_BITS} required",
            bits.len()
        )));
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::invalid("bit values must be 0 or 1"));
    }
    let record = cfg.record_bits;
    if record < MIN_RECORD_BITS || record > bits.len() {
        return Err(Error::invalid(format!(
            "record length {record} must be in [{MIN_RECORD_BITS}, {}]",
            bits.len()
        )));
    }
    let params = nist::TestParams::for_length(record);
    let outcomes: Vec<[Outcome; 10]> = bits
        .par_chunks_exact(record)
        .map(|r| nist::run_all(r, &params))
        .collect::<Result<_>>()?;
    let mut tests: Vec<TestSummary> = TEST_NAMES
        .iter()
        .map(|&name| TestSummary {
            name,
            passed: 0,
            evaluated: 0,
            skipped: 0,
        })
        .collect();
    for rec in &outcomes {
        for (t, o) in tests.iter_mut().zip(rec) {
            match o {
                Outcome::PValue(p) => {
                    t.evaluated += 1;
                    if *p >= cfg.alpha {
                        t.passed += 1;
                    }
                }
                Outcome::Skipped => t.skipped += 1,
            }
        }
    }
    Ok(NistReport {
        records: outcomes.len(),
        tests,
    })
}

/// Maps each device's geometric-mean response through the nominal-fleet CDF
/// and quantizes it to 16 bits, in device order.
pub fn puf_bitstream(geo_means: &[f64], reference: &GeoMeanReference) -> Result<Vec<u8>> {
    let u: Vec<f64> = geo_means.iter().map(|&g| reference.cdf(g)).collect();
    quantize_to_bits(&u, PUF_BITS_PER_VALUE)
}

/// One response per device, evaluated with the ideal receiver.
pub fn fleet_responses(fleet: &[TxProfile], link: &LinkConfig, seed: u64) -> Result<Vec<f64>> {
    Ok(evaluate_geo_means(fleet, 1, link, seed)?.into_iter().map(|g| g[0]).collect())
}

/// Reference matching the features the link's spec scales.
pub fn reference_for(link: &LinkConfig) -> Result<GeoMeanReference> {
    GeoMeanReference::new(FeatureScales::from_spec(&link.spec).active().count())
}

/// Concatenated bitstreams of `replicates` independent fleets of `devices`
/// transmitters each.
pub fn puf_records(replicates: usize, devices: usize, link: &LinkConfig, master: u64) -> Result<Vec<u8>> {
    let reference = reference_for(link)?;
    let mut bits = Vec::with_capacity(replicates * devices * PUF_BITS_PER_VALUE as usize);
    for r in 0..replicates {
        let seed = derive_seed(master, r as u64, Stream::Replicate);
        let fleet = sample_fleet(devices, &link.spec, seed)?;
        let g = fleet_responses(&fleet, link, seed)?;
        bits.extend(puf_bitstream(&g, &reference)?);
    }
    Ok(bits)
}

/// Reference bits from the seeded generator.
pub fn prng_bits(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = derive_rng(seed, 0, Stream::Baseline);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = rng.next_u64();
        out.extend((0..64).rev().map(|b| ((w >> b) & 1) as u8).take(n - out.len()));
    }
    out
}

/// Pass-rate table: test name, PUF rate, baseline rate. Skipped tests print
/// as `skipped`.
pub fn write_pass_rates<W: Write>(mut w: W, puf: &NistReport, baseline: &NistReport) -> Result<()> {
    let fmt = |t: Option<&TestSummary>| match t.and_then(|t| t.pass_rate()) {
        Some(r) => format!("{r:.4}"),
        None => "skipped".to_string(),
    };
    writeln!(w, "test,puf_pass_rate,prng_pass_rate")?;
    for name in TEST_NAMES {
        writeln!(w, "{name},{},{}", fmt(puf.get(name)), fmt(baseline.get(name)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prng_bits_are_deterministic_and_balanced() {
        let a = prng_bits(100_000, 4);
        assert_eq!(a, prng_bits(100_000, 4));
        let ones = a.iter().filter(|&&b| b == 1).count() as f64 / 1e5;
        assert!((ones - 0.5).abs() < 0.01);
    }

    #[test]
    fn short_input_is_rejected() {
        assert!(nist_subset(&prng_bits(9_999, 1), &NistConfig::default()).is_err());
    }

    #[test]
    fn prng_records_pass() {
        let bits = prng_bits(20 * 16_000, 11);
        let r = nist_subset(&bits, &NistConfig::default()).unwrap();
        assert_eq!(r.records, 20);
        assert!(r.min_pass_rate().unwrap() >= 0.85, "{r:?}");
    }

    #[test]
    fn bitstream_length_and_determinism() {
        let reference = GeoMeanReference::new(3).unwrap();
        let g: Vec<f64> = (1..=1000).map(|i| i as f64 * 150.0).collect();
        let b = puf_bitstream(&g, &reference).unwrap();
        assert_eq!(b.len(), 16_000);
        assert_eq!(b, puf_bitstream(&g, &reference).unwrap());
    }

    #[test]
    fn table_renders_skipped() {
        let mut puf = nist_subset(&prng_bits(16_000, 2), &NistConfig::default()).unwrap();
        puf.tests[0].evaluated = 0;
        let mut out = Vec::new();
        write_pass_rates(&mut out, &puf, &puf.clone()).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert!(s.lines().nth(1).unwrap().contains("skipped"));
        assert_eq!(s.lines().count(), 11);
    }
}
