//! Photometric losses.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L2,
    #[default]
    AreaWeightedL2,
}

impl LossKind {
    /// Per-ray weight for a pixel whose cone radius is `ratio` times the
    /// full-resolution one.
    pub fn weight(self, ratio: f64) -> f64 {
        match self {
            LossKind::L2 => 1.0,
            LossKind::AreaWeightedL2 => ratio * ratio,
        }
    }
}

/// `ratio² ‖pred − target‖²`: the squared error scaled by the pixel's
/// footprint area relative to the reference pixel.
pub fn area_weighted_loss(pred: [f64; 3], target: [f64; 3], ratio: f64) -> f64 {
    ratio * ratio * squared_error(pred, target)
}

pub fn squared_error(pred: [f64; 3], target: [f64; 3]) -> f64 {
    (0..3).map(|c| (pred[c] - target[c]).powi(2)).sum()
}
