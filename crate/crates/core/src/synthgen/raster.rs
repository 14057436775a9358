//! Shape rasterization, binary masks and procedural textures.

use serde::{Deserialize, Serialize};

pub type Rgb = [f32; 3];

/// Binary `H x W` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width);
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize) {
        self.bits[y * self.width + x] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn union_of<'a>(
        height: usize,
        width: usize,
        masks: impl IntoIterator<Item = &'a Mask>,
    ) -> Self {
        let mut out = Self::empty(height, width);
        for m in masks {
            out.union_with(m);
        }
        out
    }

    /// Bounding box `(x0, y0, x1, y1)` of set pixels, exclusive upper bounds.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    b = Some(match b {
                        None => (x, y, x + 1, y + 1),
                        Some((x0, y0, x1, y1)) => {
                            (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1))
                        }
                    });
                }
            }
        }
        b
    }
}

/// Closed shapes in pixel coordinates. Pixel `(x, y)` is sampled at its
/// centre `(x + 0.5, y + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Ellipse {
        cx: f32,
        cy: f32,
        rx: f32,
        ry: f32,
    },
    Rect {
        x0: f32,
        y0: f32,
        x1: f32,
        y1: f32,
    },
    RoundRect {
        x0: f32,
        y0: f32,
        x1: f32,
        y1: f32,
        r: f32,
    },
    /// Apex up, base down, filling the box.
    Triangle {
        x0: f32,
        y0: f32,
        x1: f32,
        y1: f32,
    },
    /// Isosceles trapezoid with the narrow side on top.
    Trapezoid {
        x0: f32,
        y0: f32,
        x1: f32,
        y1: f32,
        inset: f32,
    },
    /// Star-shaped polygon around `(cx, cy)`: vertex `i` sits at angle
    /// `phase + 2*pi*i/n` and distance `scale * radii[i]`.
    Star {
        cx: f32,
        cy: f32,
        radii: Vec<f32>,
        phase: f32,
        scale: f32,
        aspect: f32,
    },
    /// Radius `scale * (1 + sum a_k sin(k*theta + p_k))`.
    Blob {
        cx: f32,
        cy: f32,
        harmonics: Vec<(f32, u32, f32)>,
        scale: f32,
        aspect: f32,
    },
}

impl Geometry {
    pub fn contains(&self, x: f32, y: f32) -> bool {
        match self {
            Geometry::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
            Geometry::Rect { x0, y0, x1, y1 } => x >= *x0 && x < *x1 && y >= *y0 && y < *y1,
            Geometry::RoundRect { x0, y0, x1, y1, r } => {
                if !(x >= *x0 && x < *x1 && y >= *y0 && y < *y1) {
                    return false;
                }
                let qx = (x0 + r - x).max(x - (x1 - r)).max(0.0);
                let qy = (y0 + r - y).max(y - (y1 - r)).max(0.0);
                qx * qx + qy * qy <= r * r
            }
            Geometry::Triangle { x0, y0, x1, y1 } => {
                if y < *y0 || y >= *y1 {
                    return false;
                }
                let t = (y - y0) / (y1 - y0);
                let half = 0.5 * (x1 - x0) * t;
                let mid = 0.5 * (x0 + x1);
                (x - mid).abs() <= half
            }
            Geometry::Trapezoid {
                x0,
                y0,
                x1,
                y1,
                inset,
            } => {
                if y < *y0 || y >= *y1 {
                    return false;
                }
                let t = (y - y0) / (y1 - y0);
                let pad = inset * (1.0 - t);
                x >= x0 + pad && x < x1 - pad
            }
            Geometry::Star {
                cx,
                cy,
                radii,
                phase,
                scale,
                aspect,
            } => {
                let (dx, dy) = (x - cx, (y - cy) / aspect);
                let n = radii.len();
                let step = std::f32::consts::TAU / n as f32;
                let theta = (dy.atan2(dx) - phase).rem_euclid(std::f32::consts::TAU);
                let i = ((theta / step) as usize).min(n - 1);
                let j = (i + 1) % n;
                // edge between vertices i and j, in polar form
                let (ai, aj) = (i as f32 * step, (i + 1) as f32 * step);
                let (pi_x, pi_y) = (radii[i] * ai.cos(), radii[i] * ai.sin());
                let (pj_x, pj_y) = (radii[j] * aj.cos(), radii[j] * aj.sin());
                let (ux, uy) = (theta.cos(), theta.sin());
                // distance along ray (ux,uy) to the edge line
                let (ex, ey) = (pj_x - pi_x, pj_y - pi_y);
                let denom = ux * ey - uy * ex;
                let edge_r = if denom.abs() < 1e-9 {
                    radii[i].max(radii[j])
                } else {
                    (pi_x * ey - pi_y * ex) / denom
                };
                (dx * dx + dy * dy).sqrt() <= scale * edge_r
            }
            Geometry::Blob {
                cx,
                cy,
                harmonics,
                scale,
                aspect,
            } => {
                let (dx, dy) = (x - cx, (y - cy) / aspect);
                let theta = dy.atan2(dx);
                let r: f32 = 1.0
                    + harmonics
                        .iter()
                        .map(|&(a, k, p)| a * (k as f32 * theta + p).sin())
                        .sum::<f32>();
                (dx * dx + dy * dy).sqrt() <= scale * r
            }
        }
    }

    /// Conservative bounding box `(x0, y0, x1, y1)`.
    pub fn bounds(&self) -> (f32, f32, f32, f32) {
        match self {
            Geometry::Ellipse { cx, cy, rx, ry } => (cx - rx, cy - ry, cx + rx, cy + ry),
            Geometry::Rect { x0, y0, x1, y1 }
            | Geometry::RoundRect { x0, y0, x1, y1, .. }
            | Geometry::Triangle { x0, y0, x1, y1 }
            | Geometry::Trapezoid { x0, y0, x1, y1, .. } => (*x0, *y0, *x1, *y1),
            Geometry::Star {
                cx,
                cy,
                radii,
                scale,
                aspect,
                ..
            } => {
                let r = scale * radii.iter().cloned().fold(0.0, f32::max);
                (cx - r, cy - r * aspect, cx + r, cy + r * aspect)
            }
            Geometry::Blob {
                cx,
                cy,
                harmonics,
                scale,
                aspect,
            } => {
                let r = scale * (1.0 + harmonics.iter().map(|h| h.0.abs()).sum::<f32>());
                (cx - r, cy - r * aspect, cx + r, cy + r * aspect)
            }
        }
    }

    pub fn rasterize(&self, height: usize, width: usize) -> Mask {
        let mut m = Mask::empty(height, width);
        let (bx0, by0, bx1, by1) = self.bounds();
        let clamp = |v: f32, hi: usize| (v.floor().max(0.0) as usize).min(hi);
        let (xs, xe) = (clamp(bx0 - 1.0, width), clamp(bx1 + 1.0, width));
        let (ys, ye) = (clamp(by0 - 1.0, height), clamp(by1 + 1.0, height));
        for y in ys..ye {
            for x in xs..xe {
                if self.contains(x as f32 + 0.5, y as f32 + 0.5) {
                    m.set(y, x);
                }
            }
        }
        m
    }
}

/// Texture library. Part textures and occluder textures use disjoint
/// variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Texture {
    Solid(Rgb),
    /// Flat colour with vertical shading, used for bodies.
    Shaded {
        base: Rgb,
        gradient: f32,
    },
    /// Dark disk with a lighter concentric hub.
    Hub {
        rim: Rgb,
        hub: Rgb,
        hub_frac: f32,
    },
    /// Pane with a diagonal highlight band.
    Glint {
        pane: Rgb,
        glint: Rgb,
    },
    /// Bands along one axis in local coordinates.
    Bands {
        a: Rgb,
        b: Rgb,
        period: f32,
        vertical: bool,
    },
    Checker {
        a: Rgb,
        b: Rgb,
        cell: f32,
    },
    Rings {
        a: Rgb,
        b: Rgb,
        period: f32,
    },
    // occluder-only textures
    /// Per-pixel hashed noise around a base colour.
    Fur {
        base: Rgb,
        amp: f32,
        seed: u64,
    },
    /// Stripes at an arbitrary angle.
    Slant {
        a: Rgb,
        b: Rgb,
        period: f32,
        angle: f32,
    },
    /// Two-colour thresholded value noise.
    Blotch {
        a: Rgb,
        b: Rgb,
        cell: f32,
        seed: u64,
    },
}

impl Texture {
    pub fn is_occluder_texture(&self) -> bool {
        matches!(
            self,
            Texture::Fur { .. } | Texture::Slant { .. } | Texture::Blotch { .. }
        )
    }

    /// Colour at absolute pixel `(x, y)` for a shape centred at `(cx, cy)`
    /// with half extents `(hw, hh)`.
    pub fn color_at(&self, x: f32, y: f32, cx: f32, cy: f32, hw: f32, hh: f32) -> Rgb {
        let (u, v) = ((x - cx) / hw.max(1e-3), (y - cy) / hh.max(1e-3));
        match self {
            Texture::Solid(c) => *c,
            Texture::Shaded { base, gradient } => scale(*base, 1.0 + gradient * v),
            Texture::Hub { rim, hub, hub_frac } => {
                if u * u + v * v <= hub_frac * hub_frac {
                    *hub
                } else {
                    *rim
                }
            }
            Texture::Glint { pane, glint } => {
                if (u + v).abs() < 0.35 {
                    *glint
                } else {
                    *pane
                }
            }
            Texture::Bands {
                a,
                b,
                period,
                vertical,
            } => {
                let t = if *vertical { x - cx } else { y - cy };
                if (t / period).floor() as i64 % 2 == 0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Checker { a, b, cell } => {
                let (i, j) = (
                    ((x - cx) / cell).floor() as i64,
                    ((y - cy) / cell).floor() as i64,
                );
                if (i + j).rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Rings { a, b, period } => {
                let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                if (r / period).floor() as i64 % 2 == 0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Fur { base, amp, seed } => {
                let n = hash01(*seed, x as i64, y as i64);
                let m = hash01(seed.wrapping_add(1), x as i64 / 2, y as i64);
                let k = (n - 0.5) * amp + (m - 0.5) * amp * 0.5;
                [
                    (base[0] + k).clamp(0.0, 1.0),
                    (base[1] + k * 0.8).clamp(0.0, 1.0),
                    (base[2] + k * 0.6).clamp(0.0, 1.0),
                ]
            }
            Texture::Slant {
                a,
                b,
                period,
                angle,
            } => {
                let t = (x - cx) * angle.cos() + (y - cy) * angle.sin();
                if (t / period).floor() as i64 % 2 == 0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Blotch { a, b, cell, seed } => {
                if value_noise(*seed, x / cell, y / cell) > 0.5 {
                    *a
                } else {
                    *b
                }
            }
        }
    }
}

fn scale(c: Rgb, s: f32) -> Rgb {
    [
        (c[0] * s).clamp(0.0, 1.0),
        (c[1] * s).clamp(0.0, 1.0),
        (c[2] * s).clamp(0.0, 1.0),
    ]
}

/// Deterministic hash of a lattice point into `[0, 1)`.
pub fn hash01(seed: u64, x: i64, y: i64) -> f32 {
    let mut h = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h = (h ^ (h >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h = (h ^ (h >> 33)).wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 40) as f32 / (1u64 << 24) as f32
}

/// Bilinear value noise in `[0, 1)`.
pub fn value_noise(seed: u64, x: f32, y: f32) -> f32 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash01(seed, ix, iy);
    let b = hash01(seed, ix + 1, iy);
    let c = hash01(seed, ix, iy + 1);
    let d = hash01(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipse_area_close_to_analytic() {
        let g = Geometry::Ellipse {
            cx: 32.0,
            cy: 32.0,
            rx: 20.0,
            ry: 10.0,
        };
        let area = g.rasterize(64, 64).count() as f32;
        let expect = std::f32::consts::PI * 200.0;
        assert!((area - expect).abs() / expect < 0.02, "{area}");
    }

    #[test]
    fn star_and_blob_nest_under_scaling() {
        let radii = vec![1.0, 0.6, 0.9, 0.7, 1.0, 0.65, 0.8];
        for s in [4.0f32, 8.0, 12.0] {
            let small = Geometry::Star {
                cx: 30.0,
                cy: 30.0,
                radii: radii.clone(),
                phase: 0.3,
                scale: s,
                aspect: 0.8,
            }
            .rasterize(64, 64);
            let big = Geometry::Star {
                cx: 30.0,
                cy: 30.0,
                radii: radii.clone(),
                phase: 0.3,
                scale: s + 3.0,
                aspect: 0.8,
            }
            .rasterize(64, 64);
            assert_eq!(small.intersection_count(&big), small.count());
            let h = vec![(0.2, 3, 0.1), (0.1, 5, 1.0)];
            let small = Geometry::Blob {
                cx: 30.0,
                cy: 30.0,
                harmonics: h.clone(),
                scale: s,
                aspect: 1.2,
            }
            .rasterize(64, 64);
            let big = Geometry::Blob {
                cx: 30.0,
                cy: 30.0,
                harmonics: h,
                scale: s + 3.0,
                aspect: 1.2,
            }
            .rasterize(64, 64);
            assert_eq!(small.intersection_count(&big), small.count());
        }
    }

    #[test]
    fn star_contains_its_centre_and_not_far_points() {
        let g = Geometry::Star {
            cx: 10.0,
            cy: 10.0,
            radii: vec![1.0; 6],
            phase: 0.0,
            scale: 5.0,
            aspect: 1.0,
        };
        assert!(g.contains(10.0, 10.0));
        assert!(g.contains(13.0, 10.0));
        assert!(!g.contains(16.0, 10.0));
    }

    #[test]
    fn mask_bbox_and_counts() {
        let m = Geometry::Rect {
            x0: 2.0,
            y0: 3.0,
            x1: 6.0,
            y1: 5.0,
        }
        .rasterize(10, 10);
        assert_eq!(m.count(), 8);
        assert_eq!(m.bbox(), Some((2, 3, 6, 5)));
    }

    #[test]
    fn noise_is_in_unit_interval() {
        for i in 0..500 {
            let v = value_noise(9, i as f32 * 0.37, i as f32 * 0.11);
            assert!((0.0..1.0).contains(&v));
        }
    }
}
