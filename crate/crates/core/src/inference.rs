//! Raw per-box predictions to final detections.

use serde::{Deserialize, Serialize};

use crate::anchors::{decode_offsets, iou, BoxGeom, DefaultBoxSet};
use crate::error::{Error, Result};
use crate::net::{HeadConfig, Predictions};
use crate::targets::{bin_center, pose_bin};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub top_k: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            score_thresh: 0.05,
            nms_iou: 0.45,
            top_k: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// Object class, `0..n_classes`.
    pub class_id: usize,
    pub score: f64,
    pub box_: BoxGeom,
    pub pose_bin: usize,
    pub pose_conf: f64,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// First index of the maximum and its value.
fn argmax(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
}

/// Greedy NMS. Candidates are visited by descending score (ties to the lower
/// input index); a candidate is kept unless it overlaps an already kept box
/// by more than `iou_thresh`. Returns indices into `boxes` in keep order.
pub fn nms(boxes: &[BoxGeom], scores: &[f64], iou_thresh: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= iou_thresh) {
            keep.push(i);
        }
    }
    keep
}

pub fn detect(
    predictions: &Predictions,
    defaults: &DefaultBoxSet,
    head: &HeadConfig,
    cfg: &DetectConfig,
) -> Result<Vec<Detection>> {
    if predictions.len() != defaults.len() {
        return Err(Error::shape(
            "predictions/default boxes",
            &[predictions.len()],
            &[defaults.len()],
        ));
    }
    let n_bins = head.n_pose_bins;
    let posteriors: Vec<Vec<f64>> = predictions.class_logits.iter().map(|l| softmax(l)).collect();

    let mut all = Vec::new();
    for class_id in 0..head.n_classes {
        let mut cand_boxes = Vec::new();
        let mut cand_scores = Vec::new();
        let mut cand_index = Vec::new();
        for (i, post) in posteriors.iter().enumerate() {
            let score = post[class_id + 1];
            if score > cfg.score_thresh {
                cand_boxes.push(decode_offsets(&predictions.loc[i], &defaults.boxes()[i]));
                cand_scores.push(score);
                cand_index.push(i);
            }
        }
        for k in nms(&cand_boxes, &cand_scores, cfg.nms_iou) {
            let i = cand_index[k];
            let start = head.pose_slice_start(class_id);
            let pose = softmax(&predictions.pose_logits[i][start..start + n_bins]);
            let (bin, conf) = argmax(&pose);
            all.push((
                i,
                Detection {
                    class_id,
                    score: cand_scores[k],
                    box_: cand_boxes[k],
                    pose_bin: bin,
                    pose_conf: conf,
                },
            ));
        }
    }
    all.sort_by(|a, b| {
        b.1.score
            .total_cmp(&a.1.score)
            .then(a.0.cmp(&b.0))
            .then(a.1.class_id.cmp(&b.1.class_id))
    });
    all.truncate(cfg.top_k);
    Ok(all.into_iter().map(|(_, d)| d).collect())
}

/// Coarse bin containing the center angle of a fine bin.
pub fn merge_bins(fine_bin: usize, n_fine: usize, n_coarse: usize) -> Result<usize> {
    if n_coarse == 0 || n_fine < n_coarse {
        return Err(Error::InvalidArgument(format!(
            "cannot merge {n_fine} bins into {n_coarse}"
        )));
    }
    if fine_bin >= n_fine {
        return Err(Error::InvalidArgument(format!(
            "bin {fine_bin} out of range for {n_fine} bins"
        )));
    }
    Ok(pose_bin(bin_center(fine_bin, n_fine), n_coarse))
}
