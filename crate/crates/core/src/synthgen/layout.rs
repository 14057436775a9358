//! The five procedural vehicle categories and their part vocabulary.
//!
//! There are `NUM_PART_TYPES = 20` part types, four owned by each category
//! (`4c .. 4c+3`). Slot 0 of every category is visually distinctive. Slots
//! 1-3 belong to three families (wheel, window, lamp) that look nearly the
//! same in every category, so telling them apart needs spatial context.

use serde::{Deserialize, Serialize};

use super::raster::{Rgb, Texture};
use crate::NUM_CATEGORIES;

pub const NUM_PART_TYPES: usize = 20;
pub const PARTS_PER_CATEGORY: usize = NUM_PART_TYPES / NUM_CATEGORIES;

/// Part primitives. Ids `0..3` are reserved for parts; occluder shapes use
/// ids from [`super::occlude::OCCLUDER_SHAPE_IDS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartShape {
    Disk,
    Rectangle,
    Triangle,
}

impl PartShape {
    pub const fn id(self) -> u32 {
        match self {
            PartShape::Disk => 0,
            PartShape::Rectangle => 1,
            PartShape::Triangle => 2,
        }
    }
}

pub const PART_SHAPE_IDS: [u32; 3] = [
    PartShape::Disk.id(),
    PartShape::Rectangle.id(),
    PartShape::Triangle.id(),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BodyShape {
    Ellipse,
    Trapezoid,
    Rectangle,
    RoundedRectangle,
}

/// One part instance in a category layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub part_type_id: usize,
    pub shape: PartShape,
    /// Centre in object-fraction units, `(0,0)` = top-left of the object box.
    pub offset: (f32, f32),
    /// Width and height as fractions of the object width.
    pub size: (f32, f32),
    /// Index into [`part_texture`]; equal to the part type.
    pub texture_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub category_id: usize,
    pub body: BodyShape,
    /// Object height / object width.
    pub aspect: f32,
    pub parts: Vec<PartSpec>,
}

impl CategorySpec {
    /// The part type no other category uses.
    pub fn unique_part(&self) -> usize {
        PARTS_PER_CATEGORY * self.category_id
    }
}

const UNIQUE: usize = 0;
const WHEEL: usize = 1;
const WINDOW: usize = 2;
const LAMP: usize = 3;

fn slot_shape(category: usize, slot: usize) -> PartShape {
    match slot {
        UNIQUE => match category {
            0 => PartShape::Triangle,
            1 | 3 => PartShape::Disk,
            _ => PartShape::Rectangle,
        },
        WHEEL => PartShape::Disk,
        WINDOW => PartShape::Rectangle,
        _ => PartShape::Triangle,
    }
}

fn slot_size(category: usize, slot: usize) -> (f32, f32) {
    match slot {
        UNIQUE => match category {
            2 => (0.24, 0.10),
            4 => (0.20, 0.12),
            _ => (0.18, 0.18),
        },
        WHEEL => (0.17, 0.17),
        WINDOW => (0.18, 0.12),
        _ => (0.12, 0.11),
    }
}

/// Texture for a part type.
pub fn part_texture(part_type_id: usize) -> Texture {
    let (c, slot) = (
        part_type_id / PARTS_PER_CATEGORY,
        part_type_id % PARTS_PER_CATEGORY,
    );
    let cf = c as f32;
    const WHITE: Rgb = [0.95, 0.95, 0.95];
    const BLACK: Rgb = [0.08, 0.08, 0.08];
    match slot {
        UNIQUE => match c {
            0 => Texture::Bands {
                a: [0.85, 0.1, 0.1],
                b: WHITE,
                period: 2.0,
                vertical: false,
            },
            1 => Texture::Checker {
                a: [0.1, 0.7, 0.2],
                b: BLACK,
                cell: 2.0,
            },
            2 => Texture::Bands {
                a: WHITE,
                b: BLACK,
                period: 1.5,
                vertical: true,
            },
            3 => Texture::Rings {
                a: [0.85, 0.2, 0.8],
                b: WHITE,
                period: 1.5,
            },
            _ => Texture::Bands {
                a: [0.95, 0.55, 0.1],
                b: BLACK,
                period: 2.0,
                vertical: false,
            },
        },
        WHEEL => Texture::Hub {
            rim: [0.1, 0.1, 0.12],
            hub: [0.6 + 0.03 * cf, 0.6 + 0.03 * cf, 0.62],
            hub_frac: 0.4,
        },
        WINDOW => Texture::Glint {
            pane: [0.5 + 0.02 * cf, 0.72, 0.9],
            glint: WHITE,
        },
        _ => Texture::Solid([0.97, 0.82 - 0.03 * cf, 0.2]),
    }
}

fn part(category: usize, slot: usize, u: f32, v: f32) -> PartSpec {
    let id = PARTS_PER_CATEGORY * category + slot;
    PartSpec {
        part_type_id: id,
        shape: slot_shape(category, slot),
        offset: (u, v),
        size: slot_size(category, slot),
        texture_id: id,
    }
}

/// The fixed category library.
pub fn categories() -> [CategorySpec; NUM_CATEGORIES] {
    [
        CategorySpec {
            category_id: 0,
            body: BodyShape::Ellipse,
            aspect: 0.48,
            parts: vec![
                part(0, UNIQUE, 0.13, 0.32),
                part(0, WINDOW, 0.72, 0.36),
                part(0, WHEEL, 0.42, 0.78),
                part(0, LAMP, 0.9, 0.55),
            ],
        },
        CategorySpec {
            category_id: 1,
            body: BodyShape::Trapezoid,
            aspect: 0.66,
            parts: vec![
                part(1, UNIQUE, 0.5, 0.55),
                part(1, WHEEL, 0.17, 0.8),
                part(1, WHEEL, 0.83, 0.8),
                part(1, LAMP, 0.5, 0.14),
                part(1, WINDOW, 0.24, 0.3),
            ],
        },
        CategorySpec {
            category_id: 2,
            body: BodyShape::Rectangle,
            aspect: 0.74,
            parts: vec![
                part(2, UNIQUE, 0.5, 0.88),
                part(2, WINDOW, 0.25, 0.2),
                part(2, WINDOW, 0.75, 0.2),
                part(2, WHEEL, 0.15, 0.87),
                part(2, WHEEL, 0.85, 0.87),
                part(2, LAMP, 0.9, 0.52),
            ],
        },
        CategorySpec {
            category_id: 3,
            body: BodyShape::RoundedRectangle,
            aspect: 0.56,
            parts: vec![
                part(3, UNIQUE, 0.5, 0.3),
                part(3, WHEEL, 0.22, 0.82),
                part(3, WHEEL, 0.78, 0.82),
                part(3, WINDOW, 0.7, 0.42),
                part(3, LAMP, 0.09, 0.5),
            ],
        },
        CategorySpec {
            category_id: 4,
            body: BodyShape::Ellipse,
            aspect: 0.64,
            parts: vec![
                part(4, UNIQUE, 0.72, 0.72),
                part(4, WHEEL, 0.15, 0.76),
                part(4, WHEEL, 0.5, 0.86),
                part(4, LAMP, 0.87, 0.2),
                part(4, WINDOW, 0.3, 0.3),
            ],
        },
    ]
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    #[test]
    fn library_invariants() {
        let cats = categories();
        assert_eq!(cats.len(), 5);
        let mut used = BTreeSet::new();
        for (c, spec) in cats.iter().enumerate() {
            assert_eq!(spec.category_id, c);
            assert!((3..=6).contains(&spec.parts.len()));
            for p in &spec.parts {
                assert!(p.part_type_id < NUM_PART_TYPES);
                assert_eq!(p.part_type_id / PARTS_PER_CATEGORY, c);
                // box stays inside the object box
                let (hw, hh) = (p.size.0 / 2.0, p.size.1 / 2.0 / spec.aspect);
                assert!(p.offset.0 - hw >= -0.02 && p.offset.0 + hw <= 1.02, "{p:?}");
                assert!(p.offset.1 - hh >= -0.1 && p.offset.1 + hh <= 1.1, "{p:?}");
                used.insert(p.part_type_id);
            }
            // every category uses all four of its types
            for slot in 0..PARTS_PER_CATEGORY {
                assert!(used.contains(&(c * PARTS_PER_CATEGORY + slot)));
            }
        }
        assert_eq!(used.len(), NUM_PART_TYPES);
    }

    #[test]
    fn unique_part_of_bus_sits_low() {
        let bus = &categories()[2];
        let u = bus
            .parts
            .iter()
            .find(|p| p.part_type_id == bus.unique_part())
            .unwrap();
        assert!(u.offset.1 > 0.5);
    }

    #[test]
    fn part_textures_are_not_occluder_textures() {
        for t in 0..NUM_PART_TYPES {
            assert!(!part_texture(t).is_occluder_texture());
        }
    }
}
