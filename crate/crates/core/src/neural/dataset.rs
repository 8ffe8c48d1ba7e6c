//! Feature matrices for training and evaluation.

use ndarray::Array2;

use crate::devicegen::TxProfile;
use crate::error::{Error, Result};
use crate::pipeline::{extract_fleet, FeatureBatch, LinkConfig, Purpose};
use crate::rxchain::{FeatureVector, RxProfile, FEATURE_COUNT};

/// Rows as an `n × 8` matrix.
pub fn feature_matrix(rows: &[FeatureVector]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), FEATURE_COUNT), |(i, j)| rows[i].to_array()[j])
}

/// One row per device and training iteration, device-major. Each row comes
/// from a fresh challenge and channel; channel features stay in the row.
pub fn build_training_set(
    fleet: &[TxProfile],
    n_iterations: usize,
    link: &LinkConfig,
    seed: u64,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let batch = build_batch(fleet, &RxProfile::ideal(), n_iterations, link, seed, Purpose::Train)?;
    Ok((feature_matrix(&batch.rows), batch.labels))
}

/// [`build_training_set`] with any receiver and purpose.
pub fn build_batch(
    fleet: &[TxProfile],
    rx: &RxProfile,
    n_iterations: usize,
    link: &LinkConfig,
    seed: u64,
    purpose: Purpose,
) -> Result<FeatureBatch> {
    if n_iterations == 0 {
        return Err(Error::invalid("n_iterations must be >= 1"));
    }
    if fleet.is_empty() {
        return Err(Error::invalid("empty fleet"));
    }
    extract_fleet(fleet, rx, link, seed, purpose, 0..n_iterations).check_rejection()
}
