//! Simulation laboratory for RF-based physical unclonable functions: a fleet
//! of impaired 16-QAM transmitters, a feature-extracting receiver, a neural
//! classifier, and PUF quality metrics.

pub mod channel;
pub mod devicegen;
pub mod error;
pub mod harness;
pub mod neural;
pub mod pipeline;
pub mod pufmetrics;
pub mod randomness;
pub mod rxchain;
pub mod seed;
pub mod txchain;

pub use error::{Error, Result};
