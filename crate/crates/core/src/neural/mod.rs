//! Device classifier and receiver-signature compensator.

pub mod compensator;
pub mod dataset;
pub mod mlp;
pub mod train;

pub use compensator::{apply_compensator, train_compensator, CompensatorModel};
pub use dataset::{build_batch, build_training_set, feature_matrix};
pub use mlp::MlpModel;
pub use train::{train_classifier, train_with_classes, Algorithm, StopReason, TrainParams, TrainReport};

use crate::error::Result;
use crate::rxchain::FeatureVector;

/// Arg-max class and its softmax probability.
pub fn predict(model: &MlpModel, fv: &FeatureVector) -> Result<(usize, f64)> {
    model.predict(fv)
}
