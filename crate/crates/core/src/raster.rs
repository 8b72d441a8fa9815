//! Planar float images and PNG I/O.

use std::path::Path;

use crate::anchors::BoxGeom;
use crate::error::{Error, Result};

/// `[C, H, W]` image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "raster",
                &[data.len()],
                &[channels, height, width],
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// `i + 0.5`), edge-clamped.
    pub fn sample(&self, c: usize, y: f64, x: f64) -> f32 {
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (ty, tx) = ((fy - y0 as f64) as f32, (fx - x0 as f64) as f32);
        let top = self.get(c, y0, x0) * (1.0 - tx) + self.get(c, y0, x1) * tx;
        let bottom = self.get(c, y1, x0) * (1.0 - tx) + self.get(c, y1, x1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Crop a normalized region and resample it to `out_h x out_w`.
    pub fn crop_resize(&self, region: &BoxGeom, out_h: usize, out_w: usize) -> Raster {
        let [x0, y0, x1, y1] = region.corners();
        let mut out = Raster::new(self.channels, out_h, out_w);
        for c in 0..self.channels {
            for oy in 0..out_h {
                let v = (oy as f64 + 0.5) / out_h as f64;
                let y = (y0 + v * (y1 - y0)) * self.height as f64;
                for ox in 0..out_w {
                    let u = (ox as f64 + 0.5) / out_w as f64;
                    let x = (x0 + u * (x1 - x0)) * self.width as f64;
                    out.set(c, oy, ox, self.sample(c, y, x));
                }
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = |c: usize| to_u8(self.get(c.min(self.channels - 1), y, x));
                img.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
            }
        }
        img
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let result = match self.channels {
            1 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
                image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
                    .expect("buffer size matches")
                    .save(path)
            }
            3 => self.to_rgb8().save(path),
            c => {
                return Err(Error::InvalidArgument(format!(
                    "cannot save a {c}-channel image as PNG"
                )))
            }
        };
        result.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Load a PNG as `channels` planes (1 = luma, 3 = RGB).
    pub fn load_png(path: &Path, channels: usize) -> Result<Raster> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match channels {
            1 => {
                let g = img.to_luma8();
                let data = g.into_raw().into_iter().map(from_u8).collect();
                Raster::from_data(1, h, w, data)
            }
            3 => {
                let rgb = img.to_rgb8();
                let mut r = Raster::new(3, h, w);
                for (x, y, p) in rgb.enumerate_pixels() {
                    for c in 0..3 {
                        r.set(c, y as usize, x as usize, from_u8(p.0[c]));
                    }
                }
                Ok(r)
            }
            c => Err(Error::InvalidArgument(format!(
                "unsupported channel count {c}"
            ))),
        }
    }

    /// Round-trip through 8-bit quantization, as PNG storage does.
    pub fn quantized(&self) -> Raster {
        Raster {
            data: self.data.iter().map(|&v| from_u8(to_u8(v))).collect(),
            ..self.clone()
        }
    }
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_u8(v: u8) -> f32 {
    v as f32 / 255.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_crop_is_identity() {
        let mut r = Raster::new(1, 4, 4);
        for (i, v) in r.data.iter_mut().enumerate() {
            *v = i as f32 / 16.0;
        }
        let out = r.crop_resize(&BoxGeom::from_corners(0.0, 0.0, 1.0, 1.0), 4, 4);
        for (a, b) in out.data.iter().zip(&r.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn png_round_trip_is_lossless_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let mut r = Raster::new(1, 3, 5);
        for (i, v) in r.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.07) % 1.0;
        }
        let q = r.quantized();
        q.save_png(&path).unwrap();
        assert_eq!(Raster::load_png(&path, 1).unwrap(), q);
    }
}
