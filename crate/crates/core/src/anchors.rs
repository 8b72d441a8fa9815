//! Default boxes over a pyramid of feature maps, IoU, and offset encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Box in normalized image coordinates, center form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxGeom {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxGeom {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_corners(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            cx: 0.5 * (xmin + xmax),
            cy: 0.5 * (ymin + ymax),
            w: xmax - xmin,
            h: ymax - ymin,
        }
    }

    /// `(xmin, ymin, xmax, ymax)`
    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite())
    }

    /// Clamp corners to the unit square.
    pub fn clamped(&self) -> Self {
        let [x0, y0, x1, y1] = self.corners();
        if x0 >= 0.0 && y0 >= 0.0 && x1 <= 1.0 && y1 <= 1.0 {
            return *self;
        }
        Self::from_corners(
            x0.clamp(0.0, 1.0),
            y0.clamp(0.0, 1.0),
            x1.clamp(0.0, 1.0),
            y1.clamp(0.0, 1.0),
        )
    }
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BoxGeom, b: &BoxGeom) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    // Areas from the same corners as the intersection, so identical boxes
    // give exactly 1.
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if inter <= 0.0 || union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Regression target of `gt` relative to default box `d`:
/// `((g_cx - d_cx)/d_w, (g_cy - d_cy)/d_h, ln(g_w/d_w), ln(g_h/d_h))`.
pub fn encode_offsets(gt: &BoxGeom, d: &BoxGeom) -> Result<[f64; 4]> {
    if !(gt.w > 0.0 && gt.h > 0.0 && d.w > 0.0 && d.h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "encode_offsets needs positive sizes, got gt {}x{} and default {}x{}",
            gt.w, gt.h, d.w, d.h
        )));
    }
    Ok([
        (gt.cx - d.cx) / d.w,
        (gt.cy - d.cy) / d.h,
        (gt.w / d.w).ln(),
        (gt.h / d.h).ln(),
    ])
}

/// Inverse of [`encode_offsets`] without clamping.
pub fn decode_offsets_unclamped(t: &[f64; 4], d: &BoxGeom) -> BoxGeom {
    BoxGeom {
        cx: d.cx + t[0] * d.w,
        cy: d.cy + t[1] * d.h,
        w: d.w * t[2].exp(),
        h: d.h * t[3].exp(),
    }
}

/// Inverse of [`encode_offsets`]; the result is clamped to the image.
pub fn decode_offsets(t: &[f64; 4], d: &BoxGeom) -> BoxGeom {
    decode_offsets_unclamped(t, d).clamped()
}

/// One prediction layer's anchor layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    pub scale: f64,
    pub aspect_ratios: Vec<f64>,
    /// Scale of the extra square box `sqrt(s_k * s_{k+1})`; `None` disables it.
    #[serde(default)]
    pub extra_scale: Option<f64>,
}

impl LayerSpec {
    pub fn new(grid: usize, scale: f64, aspect_ratios: Vec<f64>) -> Self {
        Self {
            grid_h: grid,
            grid_w: grid,
            scale,
            aspect_ratios,
            extra_scale: None,
        }
    }

    pub fn boxes_per_cell(&self) -> usize {
        self.aspect_ratios.len() + usize::from(self.extra_scale.is_some())
    }

    pub fn box_count(&self) -> usize {
        self.grid_h * self.grid_w * self.boxes_per_cell()
    }
}

/// Linear scale schedule between `s_min` and `s_max` over `n` layers.
pub fn linear_scales(s_min: f64, s_max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![s_min],
        _ => (0..n)
            .map(|k| {
                if k == n - 1 {
                    s_max
                } else {
                    s_min + (s_max - s_min) * k as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Layer specs for the given grids with linearly scheduled scales.
/// With `extra_box`, each layer also gets a square box at the geometric
/// mean of its scale and the next one (1.0 past the last layer).
pub fn layer_specs_for(
    grids: &[usize],
    s_min: f64,
    s_max: f64,
    aspect_ratios: &[f64],
    extra_box: bool,
) -> Vec<LayerSpec> {
    let scales = linear_scales(s_min, s_max, grids.len());
    grids
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let mut spec = LayerSpec::new(g, scales[i], aspect_ratios.to_vec());
            if extra_box {
                let next = scales.get(i + 1).copied().unwrap_or(1.0);
                spec.extra_scale = Some((scales[i] * next).sqrt());
            }
            spec
        })
        .collect()
}

/// Where a default box came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxOrigin {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    /// Index into the layer's aspect ratios; the extra square box uses
    /// `aspect_ratios.len()`.
    pub anchor: usize,
}

/// Ordered default boxes: layer-major, then row, column, aspect ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultBoxSet {
    boxes: Vec<BoxGeom>,
    origins: Vec<BoxOrigin>,
    layers: Vec<LayerSpec>,
}

impl DefaultBoxSet {
    pub fn boxes(&self) -> &[BoxGeom] {
        &self.boxes
    }

    pub fn origins(&self) -> &[BoxOrigin] {
        &self.origins
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

pub fn generate_default_boxes(layers: &[LayerSpec]) -> Result<DefaultBoxSet> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("no anchor layers given".into()));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.grid_h == 0 || l.grid_w == 0 {
            return Err(Error::InvalidArgument(format!("layer {i}: empty grid")));
        }
        if !(l.scale > 0.0 && l.scale <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "layer {i}: scale {} outside (0, 1]",
                l.scale
            )));
        }
        if l.aspect_ratios.is_empty() || l.aspect_ratios.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "layer {i}: aspect ratios must be positive and non-empty"
            )));
        }
        if let Some(s) = l.extra_scale {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: extra scale {s} outside (0, 1]"
                )));
            }
        }
    }

    let total: usize = layers.iter().map(LayerSpec::box_count).sum();
    let mut boxes = Vec::with_capacity(total);
    let mut origins = Vec::with_capacity(total);
    for (li, l) in layers.iter().enumerate() {
        for row in 0..l.grid_h {
            for col in 0..l.grid_w {
                let cx = (col as f64 + 0.5) / l.grid_w as f64;
                let cy = (row as f64 + 0.5) / l.grid_h as f64;
                for (ai, &ar) in l.aspect_ratios.iter().enumerate() {
                    let r = ar.sqrt();
                    boxes.push(BoxGeom::new(cx, cy, l.scale * r, l.scale / r));
                    origins.push(BoxOrigin {
                        layer: li,
                        row,
                        col,
                        anchor: ai,
                    });
                }
                if let Some(s) = l.extra_scale {
                    boxes.push(BoxGeom::new(cx, cy, s, s));
                    origins.push(BoxOrigin {
                        layer: li,
                        row,
                        col,
                        anchor: l.aspect_ratios.len(),
                    });
                }
            }
        }
    }
    Ok(DefaultBoxSet {
        boxes,
        origins,
        layers: layers.to_vec(),
    })
}
