use crate::anchors::{iou, DefaultBoxSet};
use crate::targets::GroundTruthObject;

pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matched {
    pub gt: usize,
    pub iou: f64,
    /// Assigned as the gt's best default box rather than by threshold.
    pub forced: bool,
}

/// Per-default-box assignment; `None` is background.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    pub entries: Vec<Option<Matched>>,
    pub n_positive: usize,
}

impl MatchAssignment {
    pub fn positives(&self) -> impl Iterator<Item = (usize, &Matched)> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.as_ref().map(|m| (i, m)))
    }

    pub fn is_background(&self, i: usize) -> bool {
        self.entries[i].is_none()
    }
}

/// Threshold matching at IoU > 0.5 (ties to the lowest gt index), plus,
/// when `force_best` is set, each gt claims its highest-IoU default box.
///
/// Forced claims are made in gt order; a box already forced by an earlier gt
/// is skipped, so every gt that overlaps at least one free default box owns
/// a positive.
pub fn match_boxes(
    defaults: &DefaultBoxSet,
    gts: &[GroundTruthObject],
    force_best: bool,
) -> MatchAssignment {
    let boxes = defaults.boxes();
    let mut entries: Vec<Option<Matched>> = vec![None; boxes.len()];
    if gts.is_empty() {
        return MatchAssignment {
            entries,
            n_positive: 0,
        };
    }

    let overlaps: Vec<Vec<f64>> = boxes
        .iter()
        .map(|d| gts.iter().map(|g| iou(d, &g.box_)).collect())
        .collect();

    for (entry, row) in entries.iter_mut().zip(&overlaps) {
        let (best_gt, best) = argmax(row.iter().copied());
        if best > MATCH_IOU {
            *entry = Some(Matched {
                gt: best_gt,
                iou: best,
                forced: false,
            });
        }
    }

    if force_best {
        let mut taken = vec![false; boxes.len()];
        for g in 0..gts.len() {
            let (best_box, best) = argmax(
                overlaps
                    .iter()
                    .zip(&taken)
                    .map(|(row, &t)| if t { f64::NEG_INFINITY } else { row[g] }),
            );
            if best > 0.0 {
                taken[best_box] = true;
                entries[best_box] = Some(Matched {
                    gt: g,
                    iou: best,
                    forced: true,
                });
            }
        }
    }

    let n_positive = entries.iter().filter(|e| e.is_some()).count();
    MatchAssignment {
        entries,
        n_positive,
    }
}

/// First index of the maximum.
fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}
