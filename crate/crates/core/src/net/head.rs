use serde::{Deserialize, Serialize};

use crate::anchors::{BoxOrigin, LayerSpec};
use crate::error::{Error, Result};
use crate::nn::{Real, Tape, Var};

/// Whether pose logits are shared across classes or kept per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PoseSharing {
    Share,
    Separate,
}

impl std::fmt::Display for PoseSharing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoseSharing::Share => "share",
            PoseSharing::Separate => "separate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Object classes, background excluded.
    pub n_classes: usize,
    pub n_pose_bins: usize,
    pub pose_sharing: PoseSharing,
    pub boxes_per_cell: Vec<usize>,
}

impl HeadConfig {
    pub fn new(
        n_classes: usize,
        n_pose_bins: usize,
        pose_sharing: PoseSharing,
        layers: &[LayerSpec],
    ) -> Self {
        Self {
            n_classes,
            n_pose_bins,
            pose_sharing,
            boxes_per_cell: layers.iter().map(LayerSpec::boxes_per_cell).collect(),
        }
    }

    /// Class logits per box, background included.
    pub fn class_channels(&self) -> usize {
        self.n_classes + 1
    }

    pub fn pose_channels(&self) -> usize {
        match self.pose_sharing {
            PoseSharing::Share => self.n_pose_bins,
            PoseSharing::Separate => self.n_classes * self.n_pose_bins,
        }
    }

    pub fn channels_per_box(&self) -> usize {
        self.class_channels() + 4 + self.pose_channels()
    }

    /// Offset of the pose slice for object class `class_id` (0-based,
    /// background excluded) within one box's pose logits.
    pub fn pose_slice_start(&self, class_id: usize) -> usize {
        match self.pose_sharing {
            PoseSharing::Share => 0,
            PoseSharing::Separate => class_id * self.n_pose_bins,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Config("n_classes must be at least 1".into()));
        }
        if self.n_pose_bins < 2 {
            return Err(Error::Config("n_pose_bins must be at least 2".into()));
        }
        if self.boxes_per_cell.contains(&0) {
            return Err(Error::Config("every layer needs at least one box per cell".into()));
        }
        Ok(())
    }
}

/// Prediction maps of one layer: `[A*K, H, W]` with channel `a*K + j`.
#[derive(Debug, Clone, Copy)]
pub struct LayerOutputs {
    pub class: Var,
    pub loc: Var,
    pub pose: Var,
    pub grid_h: usize,
    pub grid_w: usize,
    pub boxes_per_cell: usize,
}

/// Head outputs of one image on a tape, addressable per default box.
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    pub layers: Vec<LayerOutputs>,
    pub head: HeadConfig,
}

/// Which of the three per-box prediction groups to address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Class,
    Loc,
    Pose,
}

impl HeadOutputs {
    fn width(&self, part: Part) -> usize {
        match part {
            Part::Class => self.head.class_channels(),
            Part::Loc => 4,
            Part::Pose => self.head.pose_channels(),
        }
    }

    /// Flat indices into a layer map for `len` components of `part`
    /// starting at `start`.
    pub fn indices(&self, origin: &BoxOrigin, part: Part, start: usize, len: usize) -> Vec<usize> {
        let l = &self.layers[origin.layer];
        let k = self.width(part);
        let area = l.grid_h * l.grid_w;
        let cell = origin.row * l.grid_w + origin.col;
        (start..start + len)
            .map(|j| (origin.anchor * k + j) * area + cell)
            .collect()
    }

    pub fn var(&self, origin: &BoxOrigin, part: Part) -> Var {
        let l = &self.layers[origin.layer];
        match part {
            Part::Class => l.class,
            Part::Loc => l.loc,
            Part::Pose => l.pose,
        }
    }

    /// Values of `part` for one box.
    pub fn values<T: Real>(&self, tape: &Tape<T>, origin: &BoxOrigin, part: Part) -> Vec<T> {
        let data = tape.value(self.var(origin, part)).data();
        self.indices(origin, part, 0, self.width(part))
            .into_iter()
            .map(|i| data[i])
            .collect()
    }

    /// Put a slice of one box's predictions onto the tape as a 1-D node.
    pub fn gather<T: Real>(
        &self,
        tape: &mut Tape<T>,
        origin: &BoxOrigin,
        part: Part,
        start: usize,
        len: usize,
    ) -> Result<Var> {
        let idx = self.indices(origin, part, start, len);
        tape.gather(self.var(origin, part), idx)
    }

    /// Check map shapes against the head config and anchor layers.
    pub fn check<T: Real>(&self, tape: &Tape<T>, layers: &[LayerSpec]) -> Result<()> {
        if self.layers.len() != layers.len() {
            return Err(Error::shape(
                "head outputs/anchor layers",
                &[self.layers.len()],
                &[layers.len()],
            ));
        }
        for (lo, spec) in self.layers.iter().zip(layers) {
            let a = spec.boxes_per_cell();
            for (var, k) in [
                (lo.class, self.head.class_channels()),
                (lo.loc, 4),
                (lo.pose, self.head.pose_channels()),
            ] {
                let expected = [a * k, spec.grid_h, spec.grid_w];
                let got = tape.value(var).shape();
                if got != expected {
                    return Err(Error::shape("prediction map", got, &expected));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layers() -> Vec<LayerSpec> {
        vec![
            LayerSpec::new(8, 0.2, vec![1.0, 2.0, 0.5]),
            LayerSpec::new(4, 0.9, vec![1.0, 2.0, 0.5]),
        ]
    }

    #[test]
    fn share_channel_arithmetic() {
        let h = HeadConfig::new(3, 4, PoseSharing::Share, &layers());
        assert_eq!(h.channels_per_box(), 12);
        assert_eq!(h.channels_per_box() * h.boxes_per_cell[0], 36);
    }

    #[test]
    fn separate_channel_arithmetic() {
        let h = HeadConfig::new(3, 4, PoseSharing::Separate, &layers());
        assert_eq!(h.pose_channels(), 12);
        assert_eq!(h.channels_per_box(), 20);
        assert_eq!(h.channels_per_box() * h.boxes_per_cell[0], 60);
        assert_eq!(h.pose_slice_start(2), 8);
    }
}
