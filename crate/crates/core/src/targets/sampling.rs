use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::{iou, BoxGeom};
use crate::raster::Raster;
use crate::targets::GroundTruthObject;

/// Patch sampler settings. Each draw picks uniformly between the whole image
/// and one crop per minimum-overlap threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSampler {
    pub min_overlaps: Vec<f64>,
    pub min_scale: f64,
    pub max_scale: f64,
    pub min_aspect: f64,
    pub max_aspect: f64,
    pub max_trials: usize,
}

impl Default for PatchSampler {
    fn default() -> Self {
        Self {
            min_overlaps: vec![0.7, 0.9],
            min_scale: 0.3,
            max_scale: 1.0,
            min_aspect: 0.5,
            max_aspect: 2.0,
            max_trials: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampledPatch {
    pub image: Raster,
    pub gts: Vec<GroundTruthObject>,
    /// Crop in normalized source coordinates; `None` for the whole image.
    pub crop: Option<BoxGeom>,
}

/// Objects whose center lies inside `crop`, clipped to it and expressed in
/// the crop's normalized frame. Azimuth is unchanged.
pub fn apply_crop(gts: &[GroundTruthObject], crop: &BoxGeom) -> Vec<GroundTruthObject> {
    let [cx0, cy0, cx1, cy1] = crop.corners();
    gts.iter()
        .filter(|g| g.box_.cx > cx0 && g.box_.cx < cx1 && g.box_.cy > cy0 && g.box_.cy < cy1)
        .filter_map(|g| {
            let [x0, y0, x1, y1] = g.box_.corners();
            let nx0 = (x0.max(cx0) - cx0) / crop.w;
            let ny0 = (y0.max(cy0) - cy0) / crop.h;
            let nx1 = (x1.min(cx1) - cx0) / crop.w;
            let ny1 = (y1.min(cy1) - cy0) / crop.h;
            let b = BoxGeom::from_corners(nx0, ny0, nx1, ny1);
            b.is_valid().then_some(GroundTruthObject {
                class_id: g.class_id,
                box_: b,
                azimuth: g.azimuth,
            })
        })
        .collect()
}

/// Random training patch. Falls back to the whole image when no crop
/// satisfying the chosen overlap is found within `max_trials`.
pub fn sample_patch<R: Rng>(
    image: &Raster,
    gts: &[GroundTruthObject],
    sampler: &PatchSampler,
    rng: &mut R,
) -> SampledPatch {
    let whole = || SampledPatch {
        image: image.clone(),
        gts: gts.to_vec(),
        crop: None,
    };
    if gts.is_empty() {
        return whole();
    }
    let choice = rng.gen_range(0..=sampler.min_overlaps.len());
    if choice == 0 {
        return whole();
    }
    let threshold = sampler.min_overlaps[choice - 1];

    for _ in 0..sampler.max_trials {
        let scale = rng.gen_range(sampler.min_scale..=sampler.max_scale);
        let log_ar = rng.gen_range(sampler.min_aspect.ln()..=sampler.max_aspect.ln());
        let ar = log_ar.exp();
        let w = scale * ar.sqrt();
        let h = scale / ar.sqrt();
        if w > 1.0 || h > 1.0 {
            continue;
        }
        let x0 = rng.gen_range(0.0..=1.0 - w);
        let y0 = rng.gen_range(0.0..=1.0 - h);
        let crop = BoxGeom::from_corners(x0, y0, x0 + w, y0 + h);
        if !gts.iter().any(|g| iou(&g.box_, &crop) >= threshold) {
            continue;
        }
        let kept = apply_crop(gts, &crop);
        if kept.is_empty() {
            continue;
        }
        return SampledPatch {
            image: image.crop_resize(&crop, image.height, image.width),
            gts: kept,
            crop: Some(crop),
        };
    }
    whole()
}
