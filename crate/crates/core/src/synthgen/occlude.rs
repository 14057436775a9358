//! Occluder library and ratio-controlled placement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::raster::{Geometry, Mask, Rgb, Texture};
use super::scene::{occlusion_ratio, OccluderLayer, OcclusionScene};
use crate::error::{Error, Result};

pub const STAR_SHAPE_ID: u32 = 100;
pub const BLOB_SHAPE_ID: u32 = 101;
/// Occluder shape ids; disjoint from [`super::layout::PART_SHAPE_IDS`].
pub const OCCLUDER_SHAPE_IDS: [u32; 2] = [STAR_SHAPE_ID, BLOB_SHAPE_ID];

/// Tolerance on the achieved occlusion ratio.
pub const RATIO_TOLERANCE: f64 = 0.03;
const SEARCH_ATTEMPTS: usize = 50;
const RESAMPLES: usize = 10;
const FINE_TOLERANCE: f64 = 0.004;

/// Mixture bands `(weight, low, high)` of test-set occlusion ratios.
pub const RATIO_BANDS: [(f64, f64, f64); 3] =
    [(0.77, 0.6, 0.8), (0.184, 0.4, 0.6), (0.046, 0.2, 0.4)];

/// Textured real-object stand-ins, or flat constant masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OccluderStyle {
    Textured,
    ConstantMask,
}

pub const CONSTANT_MASK_COLOR: Rgb = [0.5, 0.5, 0.5];

/// Draws a target occlusion ratio from the three-band mixture.
pub fn sample_occlusion_ratio<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let total: f64 = RATIO_BANDS.iter().map(|b| b.0).sum();
    let mut u = rng.random::<f64>() * total;
    for &(w, lo, hi) in &RATIO_BANDS {
        if u < w {
            return rng.random_range(lo..hi);
        }
        u -= w;
    }
    let (_, lo, hi) = RATIO_BANDS[RATIO_BANDS.len() - 1];
    rng.random_range(lo..hi)
}

struct Proto {
    shape_id: u32,
    cx: f32,
    cy: f32,
    rel: f32,
    aspect: f32,
    star: Option<(Vec<f32>, f32)>,
    blob: Option<Vec<(f32, u32, f32)>>,
    texture: Texture,
}

impl Proto {
    fn geometry(&self, scale: f32) -> Geometry {
        let s = scale * self.rel;
        if let Some((radii, phase)) = &self.star {
            Geometry::Star {
                cx: self.cx,
                cy: self.cy,
                radii: radii.clone(),
                phase: *phase,
                scale: s,
                aspect: self.aspect,
            }
        } else {
            Geometry::Blob {
                cx: self.cx,
                cy: self.cy,
                harmonics: self.blob.clone().unwrap_or_default(),
                scale: s,
                aspect: self.aspect,
            }
        }
    }
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

fn occluder_texture<R: Rng + ?Sized>(style: OccluderStyle, rng: &mut R) -> Texture {
    match style {
        OccluderStyle::ConstantMask => Texture::Solid(CONSTANT_MASK_COLOR),
        OccluderStyle::Textured => match rng.random_range(0..3) {
            0 => Texture::Fur {
                base: random_color(rng),
                amp: rng.random_range(0.3..0.7),
                seed: rng.random(),
            },
            1 => Texture::Slant {
                a: random_color(rng),
                b: random_color(rng),
                period: rng.random_range(1.5..4.0),
                angle: rng.random_range(0.0..std::f32::consts::PI),
            },
            _ => Texture::Blotch {
                a: random_color(rng),
                b: random_color(rng),
                cell: rng.random_range(2.0..5.0),
                seed: rng.random(),
            },
        },
    }
}

fn sample_protos<R: Rng + ?Sized>(
    target_pixels: &[(usize, usize)],
    style: OccluderStyle,
    rng: &mut R,
) -> Vec<Proto> {
    let n = rng.random_range(2..=4);
    (0..n)
        .map(|_| {
            // uniform over positions that overlap the target
            let (y, x) = target_pixels[rng.random_range(0..target_pixels.len())];
            let aspect = rng.random_range(0.6..1.5f32);
            let rel = rng.random_range(0.6..1.4f32);
            let (shape_id, star, blob) = if rng.random_bool(0.5) {
                let k = rng.random_range(5..=9);
                let radii = (0..k).map(|_| rng.random_range(0.55..1.0f32)).collect();
                (
                    STAR_SHAPE_ID,
                    Some((radii, rng.random_range(0.0..std::f32::consts::TAU))),
                    None,
                )
            } else {
                let hs = (0..rng.random_range(2..=3))
                    .map(|_| {
                        (
                            rng.random_range(0.05..0.22f32),
                            rng.random_range(2..=5u32),
                            rng.random_range(0.0..std::f32::consts::TAU),
                        )
                    })
                    .collect();
                (BLOB_SHAPE_ID, None, Some(hs))
            };
            Proto {
                shape_id,
                cx: x as f32 + 0.5,
                cy: y as f32 + 0.5,
                rel,
                aspect,
                star,
                blob,
                texture: occluder_texture(style, rng),
            }
        })
        .collect()
}

fn rasterize_all(protos: &[Proto], scale: f32, h: usize, w: usize) -> Vec<Mask> {
    protos
        .iter()
        .map(|p| p.geometry(scale).rasterize(h, w))
        .collect()
}

/// Places 2-4 occluders over the target so the achieved occlusion ratio is
/// within [`RATIO_TOLERANCE`] of `target_ratio`.
///
/// Occluder centres are drawn uniformly from target pixels; a common scale
/// factor is then bisected. Shapes are star-shaped about their centres, so
/// the covered area grows monotonically with the scale.
pub fn place_occluders<R: Rng + ?Sized>(
    scene: &OcclusionScene,
    target_ratio: f64,
    style: OccluderStyle,
    rng: &mut R,
) -> Result<OcclusionScene> {
    if !scene.occluders.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "scene {} already has occluders",
            scene.id
        )));
    }
    if !(0.2..0.8).contains(&target_ratio) {
        return Err(Error::InvalidArgument(format!(
            "target occlusion ratio must be in [0.2, 0.8), got {target_ratio}"
        )));
    }
    let (h, w) = (scene.height(), scene.width());
    let target_pixels: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| scene.target_mask.get(y, x))
        .collect();
    if target_pixels.is_empty() {
        return Err(Error::Placement {
            scene: scene.id.clone(),
            detail: "empty target mask".into(),
        });
    }

    let mut best_overall = f64::INFINITY;
    for _ in 0..RESAMPLES {
        let protos = sample_protos(&target_pixels, style, rng);
        let (mut lo, mut hi) = (0.0f32, 1.5 * h.max(w) as f32);
        let mut best: Option<(f64, f32)> = None;
        for _ in 0..SEARCH_ATTEMPTS {
            let s = 0.5 * (lo + hi);
            let masks = rasterize_all(&protos, s, h, w);
            let ratio = occlusion_ratio(&scene.target_mask, &Mask::union_of(h, w, &masks));
            let err = (ratio - target_ratio).abs();
            if best.is_none_or(|(e, _)| err < e) {
                best = Some((err, s));
            }
            if err <= FINE_TOLERANCE {
                break;
            }
            if ratio < target_ratio {
                lo = s;
            } else {
                hi = s;
            }
        }
        let (err, s) = best.expect("at least one attempt");
        best_overall = best_overall.min(err);
        if err <= RATIO_TOLERANCE {
            let layers = protos
                .iter()
                .zip(rasterize_all(&protos, s, h, w))
                .map(|(p, mask)| {
                    let (bx0, by0, bx1, by1) = mask.bbox().unwrap_or((0, 0, 0, 0));
                    let g = p.geometry(s);
                    let (gx0, gy0, gx1, gy1) = g.bounds();
                    OccluderLayer {
                        shape_id: p.shape_id,
                        mask,
                        texture: p.texture.clone(),
                        bbox: [bx0, by0, bx1, by1],
                        centre: (p.cx, p.cy),
                        half_extent: ((gx1 - gx0) / 2.0, (gy1 - gy0) / 2.0),
                    }
                })
                .collect();
            let mut out = scene.clone();
            out.set_occluders(layers);
            return Ok(out);
        }
    }
    Err(Error::Placement {
        scene: scene.id.clone(),
        detail: format!(
            "no placement within {RATIO_TOLERANCE} of {target_ratio:.3} after {RESAMPLES} resamples (best error {best_overall:.3})"
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::synthgen::layout::PART_SHAPE_IDS;
    use crate::synthgen::scene::make_scene;

    #[test]
    fn mixture_frequencies() {
        let mut rng = stream(11, "ratio-test", 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_occlusion_ratio(&mut rng)).collect();
        let frac = |lo: f64, hi: f64| {
            draws.iter().filter(|&&r| r >= lo && r < hi).count() as f64 / n as f64
        };
        assert!((frac(0.6, 0.8) - 0.77).abs() < 0.01);
        assert!((frac(0.2, 0.4) - 0.046).abs() < 0.005);
        assert!(draws.iter().all(|&r| (0.2..=0.8).contains(&r)));
    }

    #[test]
    fn zero_target_rejected() {
        let s = make_scene("s", 0, &mut stream(1, "t", 0), 96, 96).unwrap();
        assert!(place_occluders(&s, 0.0, OccluderStyle::Textured, &mut stream(1, "o", 0)).is_err());
    }

    #[test]
    fn hits_requested_ratio() {
        for i in 0..100u64 {
            let s = make_scene("s", (i % 5) as usize, &mut stream(5, "t", i), 96, 96).unwrap();
            let mut rng = stream(5, "o", i);
            let target = sample_occlusion_ratio(&mut rng);
            let o = place_occluders(&s, target, OccluderStyle::Textured, &mut rng).unwrap();
            assert!((o.occlusion_ratio - target).abs() <= RATIO_TOLERANCE);
            assert_eq!(o.occlusion_ratio, o.measured_ratio());
            assert!((2..=4).contains(&o.occluders.len()));
        }
    }

    #[test]
    fn removing_occluders_restores_clean_image() {
        let s = make_scene("s", 2, &mut stream(6, "t", 0), 96, 96).unwrap();
        let o = place_occluders(&s, 0.7, OccluderStyle::Textured, &mut stream(6, "o", 0)).unwrap();
        assert_ne!(o.image, s.image);
        assert_eq!(o.without_occluders().image, s.image);
        assert!(o.parts.iter().any(|p| p.visible_fraction < 1.0));
    }

    #[test]
    fn shape_libraries_disjoint() {
        for id in OCCLUDER_SHAPE_IDS {
            assert!(!PART_SHAPE_IDS.contains(&id));
        }
    }

    #[test]
    fn constant_masks_are_flat() {
        let s = make_scene("s", 1, &mut stream(7, "t", 0), 96, 96).unwrap();
        let o = place_occluders(
            &s,
            0.75,
            OccluderStyle::ConstantMask,
            &mut stream(7, "o", 0),
        )
        .unwrap();
        for l in &o.occluders {
            assert_eq!(l.texture, Texture::Solid(CONSTANT_MASK_COLOR));
        }
    }
}
