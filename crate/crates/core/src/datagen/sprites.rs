/// Polygon sprites in a unit local frame: heading along +u, v pointing down.
/// None of them maps onto itself under any rotation short of 360 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sprite {
    Arrow,
    Wedge,
    LGlyph,
}

pub const SPRITES: [Sprite; 3] = [Sprite::Arrow, Sprite::Wedge, Sprite::LGlyph];

impl Sprite {
    pub fn for_class(class_id: usize) -> Sprite {
        SPRITES[class_id % SPRITES.len()]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Sprite::Arrow => "arrow",
            Sprite::Wedge => "wedge",
            Sprite::LGlyph => "lglyph",
        }
    }

    pub fn polygon(&self) -> &'static [(f64, f64)] {
        match self {
            Sprite::Arrow => &[
                (-0.5, -0.1),
                (0.1, -0.1),
                (0.1, -0.25),
                (0.5, 0.0),
                (0.1, 0.25),
                (0.1, 0.1),
                (-0.5, 0.1),
            ],
            Sprite::Wedge => &[(-0.5, -0.3), (0.5, 0.0), (-0.5, 0.3), (-0.3, 0.0)],
            Sprite::LGlyph => &[
                (-0.4, -0.4),
                (-0.1, -0.4),
                (-0.1, 0.15),
                (0.4, 0.15),
                (0.4, 0.4),
                (-0.4, 0.4),
            ],
        }
    }

    /// Width and height of the unrotated polygon in local units.
    pub fn canonical_extent(&self) -> (f64, f64) {
        let p = self.polygon();
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(u, v) in p {
            x0 = x0.min(u);
            x1 = x1.max(u);
            y0 = y0.min(v);
            y1 = y1.max(v);
        }
        (x1 - x0, y1 - y0)
    }

    /// Even-odd point-in-polygon test in local coordinates.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        let p = self.polygon();
        let mut inside = false;
        let mut j = p.len() - 1;
        for i in 0..p.len() {
            let (xi, yi) = p[i];
            let (xj, yj) = p[j];
            if (yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

/// Placement of a sprite in pixel space.
#[derive(Debug, Clone, Copy)]
pub struct Pose2 {
    pub cx: f64,
    pub cy: f64,
    /// Pixels per local unit.
    pub size: f64,
    /// Degrees, counter-clockwise on screen (y axis pointing down).
    pub azimuth: f64,
}

impl Pose2 {
    /// Local `(u, v)` to pixel `(x, y)`.
    pub fn to_image(&self, u: f64, v: f64) -> (f64, f64) {
        let (s, c) = self.azimuth.to_radians().sin_cos();
        (
            self.cx + self.size * (u * c + v * s),
            self.cy + self.size * (-u * s + v * c),
        )
    }

    /// Pixel `(x, y)` to local `(u, v)`.
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.azimuth.to_radians().sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        ((dx * c - dy * s) / self.size, (dx * s + dy * c) / self.size)
    }

    /// Pixel-space bounds of the rotated polygon vertices.
    pub fn vertex_bounds(&self, sprite: Sprite) -> [f64; 4] {
        let mut b = [f64::MAX, f64::MAX, f64::MIN, f64::MIN];
        for &(u, v) in sprite.polygon() {
            let (x, y) = self.to_image(u, v);
            b[0] = b[0].min(x);
            b[1] = b[1].min(y);
            b[2] = b[2].max(x);
            b[3] = b[3].max(y);
        }
        b
    }
}
