//! Ground truth to per-default-box training targets.

mod loss;
mod matching;
mod mining;
mod pose;
mod sampling;

use serde::{Deserialize, Serialize};

use crate::anchors::BoxGeom;

pub use loss::{append_loss, total_loss, LossBreakdown, LossConfig, LossSums};
pub use matching::{match_boxes, MatchAssignment, Matched};
pub use mining::hard_negative_mining;
pub use pose::{bin_center, normalize_azimuth, pose_bin};
pub use sampling::{apply_crop, sample_patch, PatchSampler, SampledPatch};

/// One annotated object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    /// Object class, `0..n_classes` (background is not a class here).
    pub class_id: usize,
    pub box_: BoxGeom,
    /// Degrees in `[0, 360)`.
    pub azimuth: f64,
}

impl GroundTruthObject {
    pub fn new(class_id: usize, box_: BoxGeom, azimuth: f64) -> Self {
        Self {
            class_id,
            box_,
            azimuth: normalize_azimuth(azimuth),
        }
    }
}
