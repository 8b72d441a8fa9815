//! AP and AVP (average viewpoint precision) with all-points interpolation.
//!
//! A detection is a true positive for AP when it overlaps an unclaimed
//! ground-truth object of its class with IoU > 0.5; it claims the
//! highest-IoU such object. For AVP it must additionally carry the right
//! pose bin. The claim itself never depends on pose, so the AVP
//! true-positive set is always a subset of the AP one.
//!
//! Pose bins are compared at each requested granularity `n`:
//! * `n` equal to the model's bin count: bins are compared directly;
//! * `n` coarser than the model: the detection's bin and the ground truth's
//!   model-resolution bin both go through [`merge_bins`], so a correct fine
//!   bin is always a correct coarse bin;
//! * `n` finer than the model: the detection's bin center is re-binned at
//!   `n` and compared with the ground truth binned at `n`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::anchors::iou;
use crate::error::{Error, Result};
use crate::inference::{merge_bins, Detection};
use crate::targets::{bin_center, pose_bin, GroundTruthObject};

pub const EVAL_IOU: f64 = 0.5;

pub type DetectionsByImage = BTreeMap<String, Vec<Detection>>;
pub type GroundTruthByImage = BTreeMap<String, Vec<GroundTruthObject>>;

/// Precision-recall samples, one per ranked detection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub n_gt: usize,
    pub n_det: usize,
    pub ap: f64,
    /// AVP keyed by bin count.
    pub avp: BTreeMap<usize, f64>,
    pub pr_ap: PrCurve,
    pub pr_avp: BTreeMap<usize, PrCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Bin count of the detections' pose labels.
    pub model_bins: usize,
    pub classes: Vec<ClassReport>,
    /// Mean over classes that have ground truth.
    pub map: f64,
    pub mavp: BTreeMap<usize, f64>,
}

/// Area under the precision envelope (all-points interpolation).
pub fn average_precision(recall: &[f64], precision: &[f64]) -> f64 {
    let mut mrec = Vec::with_capacity(recall.len() + 2);
    let mut mpre = Vec::with_capacity(precision.len() + 2);
    mrec.push(0.0);
    mpre.push(0.0);
    mrec.extend_from_slice(recall);
    mpre.extend_from_slice(precision);
    mrec.push(1.0);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (1..mrec.len())
        .filter(|&i| mrec[i] != mrec[i - 1])
        .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
        .sum()
}

fn curve(flags: &[bool], n_gt: usize) -> PrCurve {
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(flags.len());
    let mut precision = Vec::with_capacity(flags.len());
    for (k, &f) in flags.iter().enumerate() {
        tp += usize::from(f);
        recall.push(if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 });
        precision.push(tp as f64 / (k + 1) as f64);
    }
    PrCurve { recall, precision }
}

/// How detection and ground-truth bins are compared at one granularity.
#[derive(Debug, Clone, Copy)]
struct Binning {
    model: usize,
    target: usize,
}

impl Binning {
    fn detection(&self, bin: usize) -> Result<usize> {
        if self.target == self.model {
            Ok(bin)
        } else if self.target < self.model {
            merge_bins(bin, self.model, self.target)
        } else {
            Ok(pose_bin(bin_center(bin, self.model), self.target))
        }
    }

    fn ground_truth(&self, azimuth: f64) -> Result<usize> {
        if self.target < self.model {
            merge_bins(pose_bin(azimuth, self.model), self.model, self.target)
        } else {
            Ok(pose_bin(azimuth, self.target))
        }
    }
}

/// AP and AVP per class for detections whose pose bins come from a
/// `model_bins`-bin head.
pub fn evaluate(
    detections: &DetectionsByImage,
    ground_truth: &GroundTruthByImage,
    n_classes: usize,
    model_bins: usize,
    n_bins_list: &[usize],
) -> Result<EvalReport> {
    if let Some(id) = detections.keys().find(|k| !ground_truth.contains_key(*k)) {
        return Err(Error::Data(format!(
            "detections reference image {id:?} that has no ground truth entry"
        )));
    }
    if model_bins == 0 || n_bins_list.contains(&0) {
        return Err(Error::InvalidArgument("bin counts must be positive".into()));
    }
    for dets in detections.values() {
        if let Some(d) = dets.iter().find(|d| d.pose_bin >= model_bins) {
            return Err(Error::Data(format!(
                "detection pose bin {} out of range for {model_bins} bins",
                d.pose_bin
            )));
        }
    }
    let binnings: Vec<Binning> = n_bins_list
        .iter()
        .map(|&target| Binning {
            model: model_bins,
            target,
        })
        .collect();

    let mut classes = Vec::with_capacity(n_classes);
    for class_id in 0..n_classes {
        // (score, image, detection index) ranked by descending score.
        let mut ranked: Vec<(f64, &str, usize)> = detections
            .iter()
            .flat_map(|(img, dets)| {
                dets.iter()
                    .enumerate()
                    .filter(|(_, d)| d.class_id == class_id)
                    .map(move |(i, d)| (d.score, img.as_str(), i))
            })
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));

        let n_gt: usize = ground_truth
            .values()
            .map(|g| g.iter().filter(|o| o.class_id == class_id).count())
            .sum();
        let mut claimed: BTreeMap<&str, Vec<bool>> = ground_truth
            .iter()
            .map(|(k, v)| (k.as_str(), vec![false; v.len()]))
            .collect();

        let mut tp_ap = Vec::with_capacity(ranked.len());
        let mut tp_avp: Vec<Vec<bool>> = vec![Vec::with_capacity(ranked.len()); binnings.len()];
        for &(_, img, di) in &ranked {
            let det = &detections[img][di];
            let gts = &ground_truth[img];
            let claims = claimed.get_mut(img).expect("every image has a claim list");
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if g.class_id != class_id || claims[gi] {
                    continue;
                }
                let o = iou(&det.box_, &g.box_);
                if o > EVAL_IOU && best.is_none_or(|(_, b)| o > b) {
                    best = Some((gi, o));
                }
            }
            match best {
                Some((gi, _)) => {
                    claims[gi] = true;
                    tp_ap.push(true);
                    for (flags, b) in tp_avp.iter_mut().zip(&binnings) {
                        let ok = b.detection(det.pose_bin)? == b.ground_truth(gts[gi].azimuth)?;
                        flags.push(ok);
                    }
                }
                None => {
                    tp_ap.push(false);
                    for flags in tp_avp.iter_mut() {
                        flags.push(false);
                    }
                }
            }
        }

        let pr_ap = curve(&tp_ap, n_gt);
        let ap = if n_gt == 0 {
            0.0
        } else {
            average_precision(&pr_ap.recall, &pr_ap.precision)
        };
        let mut avp = BTreeMap::new();
        let mut pr_avp = BTreeMap::new();
        for (flags, &n) in tp_avp.iter().zip(n_bins_list) {
            let c = curve(flags, n_gt);
            let v = if n_gt == 0 {
                0.0
            } else {
                average_precision(&c.recall, &c.precision)
            };
            avp.insert(n, v);
            pr_avp.insert(n, c);
        }
        classes.push(ClassReport {
            class_id,
            n_gt,
            n_det: ranked.len(),
            ap,
            avp,
            pr_ap,
            pr_avp,
        });
    }

    let scored: Vec<&ClassReport> = classes.iter().filter(|c| c.n_gt > 0).collect();
    let mean = |f: &dyn Fn(&ClassReport) -> f64| -> f64 {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(|c| f(c)).sum::<f64>() / scored.len() as f64
        }
    };
    let map = mean(&|c| c.ap);
    let mavp = n_bins_list
        .iter()
        .map(|&n| (n, mean(&|c| c.avp[&n])))
        .collect();
    Ok(EvalReport {
        model_bins,
        classes,
        map,
        mavp,
    })
}

/// Evaluate fine-bin detections at a coarser granularity through
/// [`merge_bins`].
pub fn evaluate_merged(
    detections: &DetectionsByImage,
    ground_truth: &GroundTruthByImage,
    n_classes: usize,
    n_fine: usize,
    n_coarse: usize,
) -> Result<EvalReport> {
    if n_coarse == 0 || n_fine < n_coarse {
        return Err(Error::InvalidArgument(format!(
            "cannot merge {n_fine} bins into {n_coarse}"
        )));
    }
    evaluate(detections, ground_truth, n_classes, n_fine, &[n_coarse])
}

impl EvalReport {
    pub fn bins(&self) -> Vec<usize> {
        self.mavp.keys().copied().collect()
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self, class_names: &[String]) -> String {
        let bins = self.bins();
        let mut s = String::new();
        let _ = write!(s, "{:<12}{:>6}{:>6}{:>8}", "class", "gts", "dets", "AP");
        for n in &bins {
            let _ = write!(s, "{:>9}", format!("AVP{n}"));
        }
        s.push('\n');
        for c in &self.classes {
            let name = class_names
                .get(c.class_id)
                .cloned()
                .unwrap_or_else(|| format!("class{}", c.class_id));
            let _ = write!(s, "{:<12}{:>6}{:>6}{:>8.4}", name, c.n_gt, c.n_det, c.ap);
            for n in &bins {
                let _ = write!(s, "{:>9.4}", c.avp[n]);
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<12}{:>6}{:>6}{:>8.4}", "mean", "", "", self.map);
        for n in &bins {
            let _ = write!(s, "{:>9.4}", self.mavp[n]);
        }
        s.push('\n');
        s
    }

    /// `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model_bins={}", self.model_bins);
        let _ = writeln!(s, "mAP={}", self.map);
        for (n, v) in &self.mavp {
            let _ = writeln!(s, "mAVP{n}={v}");
        }
        for c in &self.classes {
            let _ = writeln!(s, "class{}.n_gt={}", c.class_id, c.n_gt);
            let _ = writeln!(s, "class{}.n_det={}", c.class_id, c.n_det);
            let _ = writeln!(s, "class{}.AP={}", c.class_id, c.ap);
            for (n, v) in &c.avp {
                let _ = writeln!(s, "class{}.AVP{n}={v}", c.class_id);
            }
        }
        s
    }

    /// `class,metric,rank,recall,precision` rows.
    pub fn pr_csv(&self) -> String {
        let mut s = String::from("class,metric,rank,recall,precision\n");
        for c in &self.classes {
            let mut emit = |metric: &str, pr: &PrCurve| {
                for (k, (r, p)) in pr.recall.iter().zip(&pr.precision).enumerate() {
                    let _ = writeln!(s, "{},{metric},{},{r},{p}", c.class_id, k + 1);
                }
            };
            emit("AP", &c.pr_ap);
            for (n, pr) in &c.pr_avp {
                emit(&format!("AVP{n}"), pr);
            }
        }
        s
    }
}

/// Parse the output of [`EvalReport::to_key_value`] into a map.
pub fn parse_key_value(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}
