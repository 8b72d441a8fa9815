//! Independent reference implementations shared by the integration tests.
//! They are written from the definitions, not from the library code.

#![allow(dead_code)]

use ssdpose::anchors::BoxGeom;
use ssdpose::net::Predictions;
use ssdpose::targets::GroundTruthObject;

pub fn corners(b: &BoxGeom) -> (f64, f64, f64, f64) {
    (b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0)
}

pub fn oracle_iou(a: &BoxGeom, b: &BoxGeom) -> f64 {
    let (ax0, ay0, ax1, ay1) = corners(a);
    let (bx0, by0, bx1, by1) = corners(b);
    let ix = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let iy = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = ix * iy;
    if inter == 0.0 {
        return 0.0;
    }
    inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)
}

/// Pose bin by scanning an explicit interval table.
pub fn oracle_pose_bin(azimuth: f64, n: usize) -> usize {
    let w = 360.0 / n as f64;
    let a = azimuth.rem_euclid(360.0);
    for b in 0..n {
        let lo = b as f64 * w - w / 2.0;
        let hi = b as f64 * w + w / 2.0;
        // Bin 0 wraps around 360.
        if (a >= lo && a < hi) || (b == 0 && a >= 360.0 - w / 2.0) {
            return b;
        }
    }
    unreachable!("bins cover the circle")
}

/// Greedy NMS from the pairwise overlap matrix: rank by score (ties to the
/// lower index) and keep a box iff no kept, better-ranked box overlaps it
/// by more than `thr`.
pub fn brute_nms(boxes: &[BoxGeom], scores: &[f64], thr: f64) -> Vec<usize> {
    let n = boxes.len();
    let overlap: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| oracle_iou(&boxes[i], &boxes[j])).collect())
        .collect();
    let mut rank: Vec<usize> = (0..n).collect();
    rank.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut kept = vec![false; n];
    let mut out = Vec::new();
    for (pos, &i) in rank.iter().enumerate() {
        if rank[..pos].iter().all(|&j| !(kept[j] && overlap[i][j] > thr)) {
            kept[i] = true;
            out.push(i);
        }
    }
    out
}

/// AP by enumerating rank cutoffs: at each distinct recall level r, take the
/// best precision among cutoffs reaching recall >= r, weighted by the recall
/// increment.
pub fn brute_ap(tp_in_rank_order: &[bool], n_gt: usize) -> f64 {
    let points: Vec<(f64, f64)> = (1..=tp_in_rank_order.len())
        .map(|k| {
            let tp = tp_in_rank_order[..k].iter().filter(|&&t| t).count();
            (tp as f64 / n_gt as f64, tp as f64 / k as f64)
        })
        .collect();
    let mut levels: Vec<f64> = points.iter().map(|p| p.0).collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in levels {
        if r == 0.0 {
            continue;
        }
        let best = points
            .iter()
            .filter(|p| p.0 >= r)
            .map(|p| p.1)
            .fold(0.0, f64::max);
        ap += (r - prev) * best;
        prev = r;
    }
    ap
}

fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logits[k] - lse
}

fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

pub struct OracleLoss {
    pub l_cls: f64,
    pub l_loc: f64,
    pub l_pose: f64,
    pub n: usize,
    pub l_total: f64,
}

/// Owner gt of every default box: IoU > 0.5 (first gt wins ties), then each
/// gt in order claims its best box not already claimed that way.
pub fn oracle_match(defaults: &[BoxGeom], gts: &[GroundTruthObject]) -> Vec<Option<usize>> {
    let nd = defaults.len();
    let mut owner: Vec<Option<usize>> = vec![None; nd];
    for i in 0..nd {
        let mut best = (None, 0.5);
        for (g, gt) in gts.iter().enumerate() {
            let v = oracle_iou(&defaults[i], &gt.box_);
            if v > best.1 {
                best = (Some(g), v);
            }
        }
        owner[i] = best.0;
    }
    let mut forced = vec![false; nd];
    for (g, gt) in gts.iter().enumerate() {
        let mut best = (None, 0.0);
        for i in 0..nd {
            if forced[i] {
                continue;
            }
            let v = oracle_iou(&defaults[i], &gt.box_);
            if v > best.1 {
                best = (Some(i), v);
            }
        }
        if let Some(i) = best.0 {
            forced[i] = true;
            owner[i] = Some(g);
        }
    }
    owner
}

/// Joint loss of one image recomputed box by box.
#[allow(clippy::too_many_arguments)]
pub fn oracle_loss(
    preds: &Predictions,
    defaults: &[BoxGeom],
    gts: &[GroundTruthObject],
    n_bins: usize,
    separate: bool,
    alpha1: f64,
    alpha2: f64,
    neg_pos_ratio: f64,
) -> OracleLoss {
    let nd = defaults.len();
    let owner = oracle_match(defaults, gts);
    let n = owner.iter().filter(|o| o.is_some()).count();

    let (mut l_cls, mut l_loc, mut l_pose) = (0.0, 0.0, 0.0);
    for i in 0..nd {
        let Some(g) = owner[i] else { continue };
        let gt = &gts[g];
        l_cls -= log_softmax_at(&preds.class_logits[i], gt.class_id + 1);
        let d = &defaults[i];
        let t = [
            (gt.box_.cx - d.cx) / d.w,
            (gt.box_.cy - d.cy) / d.h,
            (gt.box_.w / d.w).ln(),
            (gt.box_.h / d.h).ln(),
        ];
        for (p, t) in preds.loc[i].iter().zip(t) {
            l_loc += smooth_l1(p - t);
        }
        let start = if separate { gt.class_id * n_bins } else { 0 };
        let slice = &preds.pose_logits[i][start..start + n_bins];
        l_pose -= log_softmax_at(slice, oracle_pose_bin(gt.azimuth, n_bins));
    }

    let mut negatives: Vec<(f64, usize)> = (0..nd)
        .filter(|&i| owner[i].is_none())
        .map(|i| (-log_softmax_at(&preds.class_logits[i], 0), i))
        .collect();
    negatives.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let quota = (neg_pos_ratio * n as f64).floor() as usize;
    for &(loss, _) in negatives.iter().take(quota) {
        l_cls += loss;
    }
    let l_total = if n == 0 {
        0.0
    } else {
        (l_cls + alpha1 * l_loc + alpha2 * l_pose) / n as f64
    };
    OracleLoss {
        l_cls,
        l_loc,
        l_pose,
        n,
        l_total,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub mod grad;
