//! End-to-end link: challenge → transmitter → channel → receiver features.
//!
//! Every frame is addressed by `(purpose, device, iteration)` and all of its
//! randomness (challenge bits, channel draw, noise) derives from that address,
//! so any subset of frames can be produced in any order or in parallel.

use log::warn;
use rayon::prelude::*;

use crate::channel::apply_channel;
use crate::devicegen::{sample_channel, ParamSpec, TxProfile};
use crate::error::{Error, Result};
use crate::rxchain::{receive_and_extract, FeatureVector, RxConfig, RxProfile};
use crate::seed::{derive_seed, mix64, Stream};
use crate::txchain::{generate_prbs, transmit, IqFrame, DEFAULT_FRAME_BITS};

/// Largest tolerated fraction of rejected frames in a batch.
pub const MAX_REJECTION_RATE: f64 = 0.10;

/// How challenges are chosen per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChallengeMode {
    /// A fresh pseudo-random payload for each iteration.
    Fresh,
    /// One fixed header reused for every frame.
    Fixed,
}

/// Which population of frames a request belongs to. Different purposes never
/// share channel or noise draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Train = 1,
    Eval = 2,
    Distance = 3,
    Loopback = 4,
    Holdout = 5,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub spec: ParamSpec,
    pub rx: RxConfig,
    pub frame_bits: usize,
    pub challenge: ChallengeMode,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            spec: ParamSpec::table_one(),
            rx: RxConfig::default(),
            frame_bits: DEFAULT_FRAME_BITS,
            challenge: ChallengeMode::Fresh,
        }
    }
}

/// Seeds for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSeeds {
    pub prbs: u64,
    pub channel: u64,
    pub noise: u64,
}

impl FrameSeeds {
    /// The challenge depends on `(purpose, iteration)` only, so all devices
    /// answer the same challenge at a given iteration.
    pub fn new(master: u64, purpose: Purpose, device: usize, iteration: usize, mode: ChallengeMode) -> Self {
        let per_purpose = derive_seed(master, purpose as u64, Stream::Sampling);
        let prbs = match mode {
            ChallengeMode::Fresh => derive_seed(per_purpose, iteration as u64, Stream::Prbs),
            ChallengeMode::Fixed => derive_seed(master, 0, Stream::Prbs),
        };
        let frame = mix64(derive_seed(per_purpose, device as u64, Stream::Fleet) ^ mix64(iteration as u64));
        FrameSeeds {
            prbs,
            channel: derive_seed(frame, 0, Stream::Channel),
            noise: derive_seed(frame, 0, Stream::Noise),
        }
    }
}

/// The received (pre-receiver) frame for one transmission.
pub fn received_frame(tx: &TxProfile, link: &LinkConfig, seeds: &FrameSeeds) -> Result<IqFrame> {
    let bits = generate_prbs(link.frame_bits, seeds.prbs)?;
    let frame = transmit(&bits, tx, &link.rx.frame)?;
    let ch = sample_channel(&link.spec, seeds.channel)?;
    apply_channel(frame, &ch, seeds.noise)
}

/// One feature vector for `tx` as seen through receiver `rx`.
pub fn extract_frame(
    tx: &TxProfile,
    rx: &RxProfile,
    link: &LinkConfig,
    master: u64,
    purpose: Purpose,
    iteration: usize,
) -> Result<FeatureVector> {
    let seeds = FrameSeeds::new(master, purpose, tx.device_id, iteration, link.challenge);
    receive_and_extract(received_frame(tx, link, &seeds)?, rx, &link.rx)
}

/// The same received frame through the ideal receiver and through `rx`.
pub fn extract_loopback_pair(
    tx: &TxProfile,
    rx: &RxProfile,
    link: &LinkConfig,
    master: u64,
    purpose: Purpose,
    iteration: usize,
) -> Result<(FeatureVector, FeatureVector)> {
    let seeds = FrameSeeds::new(master, purpose, tx.device_id, iteration, link.challenge);
    let frame = received_frame(tx, link, &seeds)?;
    let ideal = receive_and_extract(frame.clone(), &RxProfile::ideal(), &link.rx)?;
    let other = receive_and_extract(frame, rx, &link.rx)?;
    Ok((ideal, other))
}

/// A batch of labelled feature rows; rejected frames are dropped and counted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureBatch {
    pub rows: Vec<FeatureVector>,
    pub labels: Vec<usize>,
    pub rejected: usize,
}

impl FeatureBatch {
    pub fn total(&self) -> usize {
        self.rows.len() + self.rejected
    }

    fn from_results(results: Vec<(usize, Result<FeatureVector>)>) -> Self {
        let mut batch = FeatureBatch::default();
        for (label, r) in results {
            match r {
                Ok(fv) => {
                    batch.rows.push(fv);
                    batch.labels.push(label);
                }
                Err(e) => {
                    warn!("frame for device {label} rejected: {e}");
                    batch.rejected += 1;
                }
            }
        }
        batch
    }

    /// Fails if more than [`MAX_REJECTION_RATE`] of the frames were rejected.
    pub fn check_rejection(self) -> Result<Self> {
        let total = self.total();
        if total > 0 && self.rejected as f64 > MAX_REJECTION_RATE * total as f64 {
            return Err(Error::ExcessiveRejection {
                rejected: self.rejected,
                total,
                limit: MAX_REJECTION_RATE,
            });
        }
        Ok(self)
    }
}

/// Extracts `iterations` frames per device, rows ordered device-major.
pub fn extract_fleet(
    fleet: &[TxProfile],
    rx: &RxProfile,
    link: &LinkConfig,
    master: u64,
    purpose: Purpose,
    iterations: std::ops::Range<usize>,
) -> FeatureBatch {
    let jobs: Vec<(&TxProfile, usize)> = fleet
        .iter()
        .flat_map(|tx| iterations.clone().map(move |i| (tx, i)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(tx, i)| (tx.device_id, extract_frame(tx, rx, link, master, purpose, i)))
        .collect();
    FeatureBatch::from_results(results)
}

/// Loopback pairs for every device and iteration; a pair is dropped if either
/// side is rejected. Returns `(ideal, non-ideal)` batches with matching rows.
pub fn extract_loopback_fleet(
    fleet: &[TxProfile],
    rx: &RxProfile,
    link: &LinkConfig,
    master: u64,
    purpose: Purpose,
    iterations: std::ops::Range<usize>,
) -> (FeatureBatch, FeatureBatch) {
    let jobs: Vec<(&TxProfile, usize)> = fleet
        .iter()
        .flat_map(|tx| iterations.clone().map(move |i| (tx, i)))
        .collect();
    let results: Vec<(usize, Result<(FeatureVector, FeatureVector)>)> = jobs
        .par_iter()
        .map(|&(tx, i)| (tx.device_id, extract_loopback_pair(tx, rx, link, master, purpose, i)))
        .collect();
    let mut ideal = FeatureBatch::default();
    let mut other = FeatureBatch::default();
    for (label, r) in results {
        match r {
            Ok((a, b)) => {
                ideal.rows.push(a);
                ideal.labels.push(label);
                other.rows.push(b);
                other.labels.push(label);
            }
            Err(e) => {
                warn!("loopback pair for device {label} rejected: {e}");
                ideal.rejected += 1;
                other.rejected += 1;
            }
        }
    }
    (ideal, other)
}
