//! Per-feature affine correction of receiver signatures.
//!
//! A single-layer linear network with one weight and one bias per feature;
//! the least-squares optimum is computed in closed form.

use log::warn;

use crate::error::{Error, Result};
use crate::rxchain::{FeatureVector, FEATURE_COUNT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensatorModel {
    pub scale: [f64; FEATURE_COUNT],
    pub offset: [f64; FEATURE_COUNT],
}

impl Default for CompensatorModel {
    fn default() -> Self {
        Self::identity()
    }
}

impl CompensatorModel {
    pub fn identity() -> Self {
        CompensatorModel {
            scale: [1.0; FEATURE_COUNT],
            offset: [0.0; FEATURE_COUNT],
        }
    }

    /// The inverse map, if every scale is nonzero.
    pub fn inverse(&self) -> Option<Self> {
        let mut inv = Self::identity();
        for j in 0..FEATURE_COUNT {
            if self.scale[j] == 0.0 {
                return None;
            }
            inv.scale[j] = 1.0 / self.scale[j];
            inv.offset[j] = -self.offset[j] / self.scale[j];
        }
        Some(inv)
    }
}

/// Fits `ideal ≈ scale·nonideal + offset` per feature. A column without
/// variance in the non-ideal features falls back to identity.
pub fn train_compensator(ideal: &[FeatureVector], nonideal: &[FeatureVector]) -> Result<CompensatorModel> {
    if ideal.len() != nonideal.len() {
        return Err(Error::DimensionMismatch {
            expected: ideal.len(),
            got: nonideal.len(),
        });
    }
    if ideal.len() < 2 {
        return Err(Error::InsufficientData("compensator needs at least two pairs".into()));
    }
    let n = ideal.len() as f64;
    let ys: Vec<[f64; FEATURE_COUNT]> = ideal.iter().map(FeatureVector::to_array).collect();
    let xs: Vec<[f64; FEATURE_COUNT]> = nonideal.iter().map(FeatureVector::to_array).collect();
    let mut model = CompensatorModel::identity();
    for j in 0..FEATURE_COUNT {
        let mx = xs.iter().map(|r| r[j]).sum::<f64>() / n;
        let my = ys.iter().map(|r| r[j]).sum::<f64>() / n;
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            sxx += (x[j] - mx) * (x[j] - mx);
            sxy += (x[j] - mx) * (y[j] - my);
        }
        if !(sxx > 1e-24 * n * (1.0 + mx * mx)) || !sxy.is_finite() {
            warn!("compensator feature {j} is rank deficient; using identity");
            continue;
        }
        let a = sxy / sxx;
        model.scale[j] = a;
        model.offset[j] = my - a * mx;
    }
    Ok(model)
}

pub fn apply_compensator(comp: &CompensatorModel, fv: &FeatureVector) -> FeatureVector {
    let x = fv.to_array();
    let mut y = [0.0; FEATURE_COUNT];
    for j in 0..FEATURE_COUNT {
        y[j] = comp.scale[j] * x[j] + comp.offset[j];
    }
    FeatureVector::from_array(y)
}
