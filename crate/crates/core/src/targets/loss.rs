use serde::{Deserialize, Serialize};

use crate::anchors::{encode_offsets, DefaultBoxSet};
use crate::error::{Error, Result};
use crate::net::{HeadOutputs, Part};
use crate::nn::{softmax_xent_value, Real, Tape, Tensor, Var};
use crate::targets::{hard_negative_mining, pose_bin, GroundTruthObject, MatchAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the localization term.
    pub alpha1: f64,
    /// Weight of the pose term.
    pub alpha2: f64,
    pub neg_pos_ratio: f64,
    /// Give every ground-truth object its best default box even below the
    /// IoU threshold.
    pub force_best_match: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.5,
            neg_pos_ratio: 3.0,
            force_best_match: true,
        }
    }
}

/// Unnormalized loss sums over a set of images.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossSums {
    pub l_cls: f64,
    pub l_loc: f64,
    pub l_pose: f64,
    pub n_matched: usize,
}

impl LossSums {
    pub fn merge(&mut self, other: &LossSums) {
        self.l_cls += other.l_cls;
        self.l_loc += other.l_loc;
        self.l_pose += other.l_pose;
        self.n_matched += other.n_matched;
    }

    pub fn breakdown(&self, alpha1: f64, alpha2: f64) -> LossBreakdown {
        let skipped = self.n_matched == 0;
        let l_total = if skipped {
            0.0
        } else {
            (self.l_cls + alpha1 * self.l_loc + alpha2 * self.l_pose) / self.n_matched as f64
        };
        LossBreakdown {
            l_cls: self.l_cls,
            l_loc: self.l_loc,
            l_pose: self.l_pose,
            n_matched: self.n_matched,
            alpha1,
            alpha2,
            l_total,
            skipped,
        }
    }
}

/// The three loss sums, the positive count, and the weighted, normalized total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_loc: f64,
    pub l_pose: f64,
    pub n_matched: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub l_total: f64,
    /// No positives: the step carries no signal and is skipped.
    pub skipped: bool,
}

impl LossBreakdown {
    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("l_cls", self.l_cls),
            ("l_loc", self.l_loc),
            ("l_pose", self.l_pose),
            ("l_total", self.l_total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Record the joint loss of one image on `tape`.
///
/// Returns the unnormalized sums and, when there is at least one positive, a
/// scalar node equal to `(L_cls + alpha1 L_loc + alpha2 L_pose) / normalizer`.
/// Passing the batch-wide positive count as `normalizer` makes per-image
/// gradients sum to the gradient of the batch objective.
pub fn append_loss<T: Real>(
    tape: &mut Tape<T>,
    outputs: &HeadOutputs,
    defaults: &DefaultBoxSet,
    gts: &[GroundTruthObject],
    assignment: &MatchAssignment,
    cfg: &LossConfig,
    normalizer: f64,
) -> Result<(LossSums, Option<Var>)> {
    outputs.check(tape, defaults.layers())?;
    if assignment.entries.len() != defaults.len() {
        return Err(Error::shape(
            "assignment/default boxes",
            &[assignment.entries.len()],
            &[defaults.len()],
        ));
    }
    let head = &outputs.head;
    let origins = defaults.origins();
    let n_bins = head.n_pose_bins;

    let mut sums = LossSums {
        n_matched: assignment.n_positive,
        ..LossSums::default()
    };
    if assignment.n_positive == 0 {
        return Ok((sums, None));
    }

    let mut terms = Vec::new();
    let mut weights = Vec::new();
    let norm = T::from_f64_lossy(normalizer);
    let w_cls = T::one() / norm;
    let w_loc = T::from_f64_lossy(cfg.alpha1) / norm;
    let w_pose = T::from_f64_lossy(cfg.alpha2) / norm;

    for (i, m) in assignment.positives() {
        let g = gts.get(m.gt).ok_or_else(|| {
            Error::InvalidArgument(format!("assignment refers to missing gt {}", m.gt))
        })?;
        if g.class_id >= head.n_classes {
            return Err(Error::InvalidArgument(format!(
                "gt class {} outside {} classes",
                g.class_id, head.n_classes
            )));
        }
        let o = &origins[i];

        let logits = outputs.gather(tape, o, Part::Class, 0, head.class_channels())?;
        let cls = tape.softmax_xent(logits, g.class_id + 1)?;
        sums.l_cls += tape.value(cls).item().to_f64().unwrap_or(f64::NAN);
        terms.push(cls);
        weights.push(w_cls);

        let target = encode_offsets(&g.box_, &defaults.boxes()[i])?;
        let target = Tensor::from_vec(target.iter().map(|&v| T::from_f64_lossy(v)).collect());
        let loc = outputs.gather(tape, o, Part::Loc, 0, 4)?;
        let loc = tape.smooth_l1(loc, &target)?;
        sums.l_loc += tape.value(loc).item().to_f64().unwrap_or(f64::NAN);
        terms.push(loc);
        weights.push(w_loc);

        let start = head.pose_slice_start(g.class_id);
        let pose = outputs.gather(tape, o, Part::Pose, start, n_bins)?;
        let pose = tape.softmax_xent(pose, pose_bin(g.azimuth, n_bins))?;
        sums.l_pose += tape.value(pose).item().to_f64().unwrap_or(f64::NAN);
        terms.push(pose);
        weights.push(w_pose);
    }

    let background_loss: Vec<f64> = origins
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if assignment.is_background(i) {
                let logits = outputs.values(tape, o, Part::Class);
                softmax_xent_value(&logits, 0).0.to_f64().unwrap_or(f64::NAN)
            } else {
                0.0
            }
        })
        .collect();
    for i in hard_negative_mining(&background_loss, assignment, cfg.neg_pos_ratio) {
        let logits = outputs.gather(tape, &origins[i], Part::Class, 0, head.class_channels())?;
        let cls = tape.softmax_xent(logits, 0)?;
        sums.l_cls += tape.value(cls).item().to_f64().unwrap_or(f64::NAN);
        terms.push(cls);
        weights.push(w_cls);
    }

    let root = tape.weighted_sum(terms, weights)?;
    Ok((sums, Some(root)))
}

/// Joint loss of a single image, normalized by its own positive count.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    outputs: &HeadOutputs,
    defaults: &DefaultBoxSet,
    gts: &[GroundTruthObject],
    assignment: &MatchAssignment,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Option<Var>)> {
    let normalizer = assignment.n_positive.max(1) as f64;
    let (sums, root) = append_loss(tape, outputs, defaults, gts, assignment, cfg, normalizer)?;
    Ok((sums.breakdown(cfg.alpha1, cfg.alpha2), root))
}
