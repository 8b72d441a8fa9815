//! Detection overlays: box outline, a `class:bin .score` label in a 3x5
//! pixel font, and an arrow pointing along the pose bin's center angle.

use image::{Rgb, RgbImage};

use crate::inference::Detection;
use crate::raster::Raster;
use crate::targets::bin_center;

const SCALE: u32 = 4;
const COLORS: [[u8; 3]; 6] = [
    [230, 60, 60],
    [60, 200, 60],
    [70, 120, 255],
    [240, 200, 40],
    [200, 80, 220],
    [40, 210, 210],
];

/// Rows of a 3x5 glyph, top first, 3 low bits per row.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        ':' => [0, 2, 0, 2, 0],
        '.' => [0, 0, 0, 0, 2],
        _ => [0; 5],
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: [u8; 3]) {
    let n = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        put(
            img,
            (x0 + t * (x1 - x0)).round() as i64,
            (y0 + t * (y1 - y0)).round() as i64,
            color,
        );
    }
}

fn text(img: &mut RgbImage, s: &str, x: i64, y: i64, color: [u8; 3]) {
    for (k, c) in s.chars().enumerate() {
        let rows = glyph(c);
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..3 {
                if bits & (4 >> col) != 0 {
                    put(img, x + 4 * k as i64 + col, y + r as i64, color);
                }
            }
        }
    }
}

/// Upscaled copy of `image` with `detections` drawn on top.
pub fn render_overlay(image: &Raster, detections: &[Detection], n_bins: usize) -> RgbImage {
    let base = image.to_rgb8();
    let (w, h) = (base.width() * SCALE, base.height() * SCALE);
    let mut img = image::imageops::resize(&base, w, h, image::imageops::FilterType::Nearest);
    let (fw, fh) = (w as f64, h as f64);
    for d in detections {
        let color = COLORS[d.class_id % COLORS.len()];
        let [x0, y0, x1, y1] = d.box_.corners();
        let (x0, y0, x1, y1) = (x0 * fw, y0 * fh, x1 * fw - 1.0, y1 * fh - 1.0);
        line(&mut img, (x0, y0), (x1, y0), color);
        line(&mut img, (x1, y0), (x1, y1), color);
        line(&mut img, (x1, y1), (x0, y1), color);
        line(&mut img, (x0, y1), (x0, y0), color);

        let (cx, cy) = (d.box_.cx * fw, d.box_.cy * fh);
        let len = 0.4 * (d.box_.w * fw).min(d.box_.h * fh);
        let a = bin_center(d.pose_bin, n_bins).to_radians();
        let tip = (cx + len * a.cos(), cy - len * a.sin());
        line(&mut img, (cx, cy), tip, color);
        for side in [-1.0f64, 1.0] {
            let b = a + std::f64::consts::PI + side * 0.5;
            let barb = (tip.0 + 0.35 * len * b.cos(), tip.1 - 0.35 * len * b.sin());
            line(&mut img, tip, barb, color);
        }

        let pct = (d.score * 100.0).round().min(99.0) as u32;
        let label = format!("{}:{} .{pct:02}", d.class_id, d.pose_bin);
        text(&mut img, &label, x0.round() as i64 + 2, y0.round() as i64 + 2, color);
    }
    img
}
