//! Detections file: a `# pose_bins N` header, then one line per detection,
//! `image_id class_id score xmin ymin xmax ymax pose_bin pose_conf`.

use std::fmt::Write as _;

use crate::anchors::BoxGeom;
use crate::error::{Error, Result};
use crate::eval::DetectionsByImage;
use crate::io::format_coord;
use crate::inference::Detection;

pub fn format_detections(dets: &DetectionsByImage, pose_bins: usize) -> String {
    let mut s = format!(
        "# pose_bins {pose_bins}\n# image_id class_id score xmin ymin xmax ymax pose_bin pose_conf\n"
    );
    for (image, list) in dets {
        for d in list {
            let [x0, y0, x1, y1] = d.box_.corners();
            let _ = writeln!(
                s,
                "{image} {} {} {} {} {} {} {} {}",
                d.class_id,
                d.score,
                format_coord(x0),
                format_coord(y0),
                format_coord(x1),
                format_coord(y1),
                d.pose_bin,
                d.pose_conf
            );
        }
    }
    s
}

/// Parse a detections file. Returns the detections and the header's bin
/// count, if present.
pub fn parse_detections(text: &str) -> Result<(DetectionsByImage, Option<usize>)> {
    let mut dets = DetectionsByImage::new();
    let mut bins = None;
    for (lineno, raw) in text.lines().enumerate() {
        let bad = |msg: String| Error::Data(format!("detections line {}: {msg}", lineno + 1));
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            let mut t = comment.split_whitespace();
            if t.next() == Some("pose_bins") {
                let v = t.next().and_then(|v| v.parse().ok());
                bins = Some(v.ok_or_else(|| bad("bad pose_bins header".into()))?);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 9 {
            return Err(bad(format!("expected 9 fields, got {}", t.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer {s:?}")));
        let num = |s: &str| match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(bad(format!("bad number {s:?}"))),
        };
        let pose_bin = int(t[7])?;
        if let Some(n) = bins {
            if pose_bin >= n {
                return Err(bad(format!("pose bin {pose_bin} out of range for {n} bins")));
            }
        }
        let det = Detection {
            class_id: int(t[1])?,
            score: num(t[2])?,
            box_: BoxGeom::from_corners(num(t[3])?, num(t[4])?, num(t[5])?, num(t[6])?),
            pose_bin,
            pose_conf: num(t[8])?,
        };
        dets.entry(t[0].to_string()).or_default().push(det);
    }
    Ok((dets, bins))
}
