use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::{categories, part_texture, BodyShape, PartShape};
use super::raster::{value_noise, Geometry, Mask, Rgb, Texture};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::NUM_CATEGORIES;

pub const MIN_CANVAS: usize = 64;

/// One annotated part instance, in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartAnnotation {
    pub part_type_id: usize,
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
    pub visible_fraction: f32,
}

/// An occluder drawn on top of the target.
#[derive(Debug, Clone, PartialEq)]
pub struct OccluderLayer {
    pub shape_id: u32,
    pub mask: Mask,
    pub texture: Texture,
    /// `(x0, y0, x1, y1)` of the mask, exclusive upper bounds.
    pub bbox: [usize; 4],
    pub(crate) centre: (f32, f32),
    pub(crate) half_extent: (f32, f32),
}

/// A rendered scene with full annotations. `image` is `clean` with the
/// occluder layers composited on top.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionScene {
    pub id: String,
    pub category_id: usize,
    pub clean: Tensor,
    pub image: Tensor,
    pub target_mask: Mask,
    pub object_box: [f32; 4],
    pub parts: Vec<PartAnnotation>,
    pub(crate) part_masks: Vec<Mask>,
    pub occluders: Vec<OccluderLayer>,
    pub occlusion_ratio: f64,
}

impl OcclusionScene {
    pub fn height(&self) -> usize {
        self.target_mask.height()
    }

    pub fn width(&self) -> usize {
        self.target_mask.width()
    }

    pub fn occluder_union(&self) -> Mask {
        Mask::union_of(
            self.height(),
            self.width(),
            self.occluders.iter().map(|o| &o.mask),
        )
    }

    /// `|target ∩ occluders| / |target|` recomputed from the masks.
    pub fn measured_ratio(&self) -> f64 {
        occlusion_ratio(&self.target_mask, &self.occluder_union())
    }

    /// The same scene with every occluder layer removed.
    pub fn without_occluders(&self) -> OcclusionScene {
        let mut s = self.clone();
        s.occluders.clear();
        s.image = s.clean.clone();
        s.occlusion_ratio = 0.0;
        for p in &mut s.parts {
            p.visible_fraction = 1.0;
        }
        s
    }

    /// Replaces the occluder stack and recomputes everything derived from it.
    pub(crate) fn set_occluders(&mut self, layers: Vec<OccluderLayer>) {
        self.occluders = layers;
        self.image = composite(&self.clean, &self.occluders);
        let union = self.occluder_union();
        self.occlusion_ratio = occlusion_ratio(&self.target_mask, &union);
        for (p, m) in self.parts.iter_mut().zip(&self.part_masks) {
            let total = m.count();
            p.visible_fraction = if total == 0 {
                0.0
            } else {
                (total - m.intersection_count(&union)) as f32 / total as f32
            };
        }
    }
}

pub fn occlusion_ratio(target: &Mask, occluders: &Mask) -> f64 {
    let total = target.count();
    if total == 0 {
        return 0.0;
    }
    target.intersection_count(occluders) as f64 / total as f64
}

/// Rounds to the 8-bit grid so on-disk images reload bit-exactly.
pub(crate) fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn paint(img: &mut Tensor, mask: &Mask, tex: &Texture, centre: (f32, f32), half: (f32, f32)) {
    let (h, w) = (mask.height(), mask.width());
    let plane = h * w;
    let data = img.data_mut();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                let c = tex.color_at(
                    x as f32 + 0.5,
                    y as f32 + 0.5,
                    centre.0,
                    centre.1,
                    half.0,
                    half.1,
                );
                for (ch, v) in c.iter().enumerate() {
                    data[ch * plane + y * w + x] = quantize(*v);
                }
            }
        }
    }
}

pub(crate) fn composite(clean: &Tensor, layers: &[OccluderLayer]) -> Tensor {
    let mut img = clean.clone();
    for l in layers {
        paint(&mut img, &l.mask, &l.texture, l.centre, l.half_extent);
    }
    img
}

const BODY_PALETTE: [Rgb; 7] = [
    [0.72, 0.3, 0.28],
    [0.3, 0.42, 0.72],
    [0.82, 0.82, 0.8],
    [0.35, 0.58, 0.35],
    [0.62, 0.56, 0.34],
    [0.48, 0.48, 0.54],
    [0.55, 0.35, 0.6],
];

fn background<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Tensor {
    let base: Rgb = [
        rng.random_range(0.3..0.65),
        rng.random_range(0.3..0.65),
        rng.random_range(0.3..0.65),
    ];
    let seed: u64 = rng.random();
    let coarse = rng.random_range(9.0..16.0f32);
    let mut img = Tensor::zeros(&[3, h, w]);
    let plane = h * w;
    let data = img.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f32, y as f32);
            let n1 = value_noise(seed, fx / coarse, fy / coarse) - 0.5;
            let n2 = value_noise(seed ^ 0x55, fx / 4.0, fy / 4.0) - 0.5;
            for (ch, b) in base.iter().enumerate() {
                let tint =
                    value_noise(seed.wrapping_add(ch as u64 + 7), fx / coarse, fy / coarse) - 0.5;
                data[ch * plane + y * w + x] = quantize(b + 0.14 * n1 + 0.06 * n2 + 0.05 * tint);
            }
        }
    }
    img
}

/// Renders an occlusion-free scene of `category_id` on an `h x w` canvas.
pub fn make_scene<R: Rng + ?Sized>(
    id: &str,
    category_id: usize,
    rng: &mut R,
    height: usize,
    width: usize,
) -> Result<OcclusionScene> {
    if height < MIN_CANVAS || width < MIN_CANVAS {
        return Err(Error::InvalidArgument(format!(
            "canvas must be at least {MIN_CANVAS}x{MIN_CANVAS}, got {height}x{width}"
        )));
    }
    if category_id >= NUM_CATEGORIES {
        return Err(Error::InvalidArgument(format!(
            "category {category_id} out of range"
        )));
    }
    let spec = &categories()[category_id];
    let (hf, wf) = (height as f32, width as f32);
    let unit = hf.min(wf) / 96.0;

    let mut clean = background(height, width, rng);

    let ow = rng.random_range(56.0..68.0f32) * unit;
    let oh = spec.aspect * ow * rng.random_range(0.95..1.05f32);
    let margin = 2.0;
    let cx =
        (rng.random_range(0.38..0.62f32) * wf).clamp(ow / 2.0 + margin, wf - ow / 2.0 - margin);
    let cy =
        (rng.random_range(0.38..0.62f32) * hf).clamp(oh / 2.0 + margin, hf - oh / 2.0 - margin);
    let (x0, y0, x1, y1) = (cx - ow / 2.0, cy - oh / 2.0, cx + ow / 2.0, cy + oh / 2.0);

    let body_geom = match spec.body {
        BodyShape::Ellipse => Geometry::Ellipse {
            cx,
            cy,
            rx: ow / 2.0,
            ry: oh / 2.0,
        },
        BodyShape::Trapezoid => Geometry::Trapezoid {
            x0,
            y0,
            x1,
            y1,
            inset: 0.22 * ow,
        },
        BodyShape::Rectangle => Geometry::Rect { x0, y0, x1, y1 },
        BodyShape::RoundedRectangle => Geometry::RoundRect {
            x0,
            y0,
            x1,
            y1,
            r: 0.3 * oh,
        },
    };
    let body_color = BODY_PALETTE[rng.random_range(0..BODY_PALETTE.len())];
    let jitter = rng.random_range(0.9..1.1f32);
    let body_tex = Texture::Shaded {
        base: body_color.map(|c| (c * jitter).min(1.0)),
        gradient: rng.random_range(-0.25..0.25),
    };
    let body_mask = body_geom.rasterize(height, width);
    paint(
        &mut clean,
        &body_mask,
        &body_tex,
        (cx, cy),
        (ow / 2.0, oh / 2.0),
    );

    let mut target = body_mask;
    let mut parts = Vec::with_capacity(spec.parts.len());
    let mut part_masks = Vec::with_capacity(spec.parts.len());
    for p in &spec.parts {
        let s = rng.random_range(0.9..1.1f32);
        let (pw, ph) = (p.size.0 * ow * s, p.size.1 * ow * s);
        let u = p.offset.0 + rng.random_range(-0.03..0.03f32);
        let v = p.offset.1 + rng.random_range(-0.03..0.03f32);
        let pcx = (x0 + u * ow).clamp(x0 + pw / 2.0, x1 - pw / 2.0);
        let pcy = (y0 + v * oh).clamp(y0 + ph / 2.0, y1 - ph / 2.0);
        let (px0, py0, px1, py1) = (
            pcx - pw / 2.0,
            pcy - ph / 2.0,
            pcx + pw / 2.0,
            pcy + ph / 2.0,
        );
        let geom = match p.shape {
            PartShape::Disk => Geometry::Ellipse {
                cx: pcx,
                cy: pcy,
                rx: pw / 2.0,
                ry: ph / 2.0,
            },
            PartShape::Rectangle => Geometry::Rect {
                x0: px0,
                y0: py0,
                x1: px1,
                y1: py1,
            },
            PartShape::Triangle => Geometry::Triangle {
                x0: px0,
                y0: py0,
                x1: px1,
                y1: py1,
            },
        };
        let mask = geom.rasterize(height, width);
        paint(
            &mut clean,
            &mask,
            &part_texture(p.texture_id),
            (pcx, pcy),
            (pw / 2.0, ph / 2.0),
        );
        target.union_with(&mask);
        parts.push(PartAnnotation {
            part_type_id: p.part_type_id,
            cx: pcx,
            cy: pcy,
            w: pw,
            h: ph,
            visible_fraction: 1.0,
        });
        part_masks.push(mask);
    }

    Ok(OcclusionScene {
        id: id.to_string(),
        category_id,
        image: clean.clone(),
        clean,
        target_mask: target,
        object_box: [x0, y0, x1, y1],
        parts,
        part_masks,
        occluders: Vec::new(),
        occlusion_ratio: 0.0,
    })
}
