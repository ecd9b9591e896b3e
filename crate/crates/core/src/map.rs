//! Pixel-parameterized maps.
//!
//! A map is a `height x width` grid of planar `f32` channels plus a validity
//! mask. Three kinds share the layout:
//!
//! - [`GaussianMap`]: 16 Gaussian parameter channels per pixel.
//! - [`TemplateMap`]: 3 channels, the canonical template point of each pixel.
//! - [`OffsetMap`]: 3 channels, the rendering-layer offset of each pixel.
//!
//! Back maps are stored x-ray style: pixel `(r, c)` on the back map covers the
//! same silhouette location as `(r, c)` on the front map, seen from the front.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Number of Gaussian parameter channels.
pub const CHANNELS: usize = 16;

/// Channel offsets inside a [`GaussianMap`].
pub mod channel {
    pub const COLOR: usize = 0;
    pub const OFFSET: usize = 3;
    pub const OPACITY: usize = 6;
    pub const LOG_SCALE: usize = 7;
    /// Quaternion stored as (w, x, y, z).
    pub const ROTATION: usize = 10;
    /// Logits for (body, cloth).
    pub const LABEL: usize = 14;

    pub fn name(c: usize) -> &'static str {
        const NAMES: [&str; super::CHANNELS] = [
            "color.r",
            "color.g",
            "color.b",
            "offset.x",
            "offset.y",
            "offset.z",
            "opacity logit",
            "log-scale.x",
            "log-scale.y",
            "log-scale.z",
            "rotation.w",
            "rotation.x",
            "rotation.y",
            "rotation.z",
            "label logit body",
            "label logit cloth",
        ];
        NAMES.get(c).copied().unwrap_or("?")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapSide {
    Front,
    Back,
}

impl MapSide {
    pub fn index(self) -> usize {
        match self {
            MapSide::Front => 0,
            MapSide::Back => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(MapSide::Front),
            1 => Some(MapSide::Back),
            _ => None,
        }
    }

    pub fn tag(self) -> char {
        match self {
            MapSide::Front => 'f',
            MapSide::Back => 'b',
        }
    }
}

/// A pixel on one of the two maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelRef {
    pub side: MapSide,
    pub row: u32,
    pub col: u32,
}

impl PixelRef {
    pub fn new(side: MapSide, row: usize, col: usize) -> Self {
        Self {
            side,
            row: row as u32,
            col: col as u32,
        }
    }
}

/// Planar channel storage shared by every map kind.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMap {
    pub height: usize,
    pub width: usize,
    pub side: MapSide,
    pub channels: usize,
    /// `channels` planes of `height * width` values, row-major.
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
}

impl ChannelMap {
    pub fn new(height: usize, width: usize, side: MapSide, channels: usize) -> Self {
        Self {
            height,
            width,
            side,
            channels,
            data: vec![0.0; channels * height * width],
            mask: vec![false; height * width],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn flat(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[c * self.pixel_count() + self.flat(row, col)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f32) {
        let idx = c * self.pixel_count() + self.flat(row, col);
        self.data[idx] = v;
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.mask[self.flat(row, col)]
    }

    /// Validity of a possibly out-of-range pixel.
    pub fn valid_at(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width && self.mask[self.flat(row as usize, col as usize)]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Valid pixels in row-major order.
    pub fn valid_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |r| (0..self.width).map(move |c| (r, c)))
            .filter(move |&(r, c)| self.is_valid(r, c))
    }

    fn check_channels(&self, expected: usize, kind: &str) -> Result<()> {
        if self.channels != expected {
            return Err(Error::Dimension(format!("{kind} needs {expected} channels, got {}", self.channels)));
        }
        if self.data.len() != self.channels * self.pixel_count() || self.mask.len() != self.pixel_count() {
            return Err(Error::Dimension(format!("{kind} buffers do not match {}x{}", self.height, self.width)));
        }
        Ok(())
    }
}

/// Front or back Gaussian map with [`CHANNELS`] channels.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMap(ChannelMap);

impl GaussianMap {
    pub fn new(height: usize, width: usize, side: MapSide) -> Self {
        Self(ChannelMap::new(height, width, side, CHANNELS))
    }

    pub fn from_planes(planes: ChannelMap) -> Result<Self> {
        planes.check_channels(CHANNELS, "Gaussian map")?;
        Ok(Self(planes))
    }

    pub fn planes(&self) -> &ChannelMap {
        &self.0
    }

    pub fn planes_mut(&mut self) -> &mut ChannelMap {
        &mut self.0
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn side(&self) -> MapSide {
        self.0.side
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; CHANNELS] {
        let mut out = [0.0; CHANNELS];
        for (c, v) in out.iter_mut().enumerate() {
            *v = self.0.get(c, row, col);
        }
        out
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, values: &[f32; CHANNELS]) {
        for (c, &v) in values.iter().enumerate() {
            self.0.set(c, row, col, v);
        }
    }
}

macro_rules! three_channel_map {
    ($name:ident, $kind:literal) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(ChannelMap);

        impl $name {
            pub fn new(height: usize, width: usize, side: MapSide) -> Self {
                Self(ChannelMap::new(height, width, side, 3))
            }

            pub fn from_planes(planes: ChannelMap) -> Result<Self> {
                planes.check_channels(3, $kind)?;
                Ok(Self(planes))
            }

            pub fn planes(&self) -> &ChannelMap {
                &self.0
            }

            pub fn planes_mut(&mut self) -> &mut ChannelMap {
                &mut self.0
            }

            pub fn height(&self) -> usize {
                self.0.height
            }

            pub fn width(&self) -> usize {
                self.0.width
            }

            pub fn side(&self) -> MapSide {
                self.0.side
            }

            pub fn vector(&self, row: usize, col: usize) -> Vec3 {
                Vec3::new(
                    self.0.get(0, row, col) as f64,
                    self.0.get(1, row, col) as f64,
                    self.0.get(2, row, col) as f64,
                )
            }

            pub fn set_vector(&mut self, row: usize, col: usize, v: &Vec3) {
                self.0.set(0, row, col, v.x as f32);
                self.0.set(1, row, col, v.y as f32);
                self.0.set(2, row, col, v.z as f32);
            }
        }
    };
}

three_channel_map!(TemplateMap, "template map");
three_channel_map!(OffsetMap, "offset map");

/// Canonical template points for both map sides.
///
/// The template masks define which pixels carry Gaussians; every map of a
/// subject must share them.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateGeometry {
    pub front: TemplateMap,
    pub back: TemplateMap,
}

impl TemplateGeometry {
    pub fn new(front: TemplateMap, back: TemplateMap) -> Result<Self> {
        if front.side() != MapSide::Front || back.side() != MapSide::Back {
            return Err(Error::Dimension("template sides must be (front, back)".into()));
        }
        if front.height() != back.height() || front.width() != back.width() {
            return Err(Error::Dimension(format!(
                "front template {}x{} vs back {}x{}",
                front.height(),
                front.width(),
                back.height(),
                back.width()
            )));
        }
        Ok(Self { front, back })
    }

    pub fn side(&self, side: MapSide) -> &TemplateMap {
        match side {
            MapSide::Front => &self.front,
            MapSide::Back => &self.back,
        }
    }

    pub fn height(&self) -> usize {
        self.front.height()
    }

    pub fn width(&self) -> usize {
        self.front.width()
    }

    /// Valid pixels: front in row-major order, then back. This is the node
    /// and Gaussian order used throughout the crate.
    pub fn nodes(&self) -> Vec<PixelRef> {
        let mut out = Vec::new();
        for side in [MapSide::Front, MapSide::Back] {
            let planes = self.side(side).planes();
            out.extend(planes.valid_pixels().map(|(r, c)| PixelRef::new(side, r, c)));
        }
        out
    }

    pub fn base_position(&self, px: PixelRef) -> Vec3 {
        self.side(px.side).vector(px.row as usize, px.col as usize)
    }

    pub fn base_positions(&self) -> Vec<Vec3> {
        self.nodes().into_iter().map(|p| self.base_position(p)).collect()
    }
}

/// Per-side lookup from pixel to node index.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelIndex {
    height: usize,
    width: usize,
    slots: [Vec<u32>; 2],
}

impl PixelIndex {
    const NONE: u32 = u32::MAX;

    pub fn new(height: usize, width: usize, nodes: &[PixelRef]) -> Self {
        let mut slots = [vec![Self::NONE; height * width], vec![Self::NONE; height * width]];
        for (i, p) in nodes.iter().enumerate() {
            slots[p.side.index()][p.row as usize * width + p.col as usize] = i as u32;
        }
        Self { height, width, slots }
    }

    pub fn get(&self, side: MapSide, row: isize, col: isize) -> Option<usize> {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            return None;
        }
        let v = self.slots[side.index()][row as usize * self.width + col as usize];
        (v != Self::NONE).then_some(v as usize)
    }

    pub fn lookup(&self, px: PixelRef) -> Option<usize> {
        self.get(px.side, px.row as isize, px.col as isize)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_order_is_front_then_back_row_major() {
        let mut f = TemplateMap::new(2, 2, MapSide::Front);
        let mut b = TemplateMap::new(2, 2, MapSide::Back);
        f.planes_mut().mask = vec![true, false, true, true];
        b.planes_mut().mask = vec![false, true, false, false];
        let t = TemplateGeometry::new(f, b).unwrap();
        let nodes = t.nodes();
        assert_eq!(
            nodes,
            vec![
                PixelRef::new(MapSide::Front, 0, 0),
                PixelRef::new(MapSide::Front, 1, 0),
                PixelRef::new(MapSide::Front, 1, 1),
                PixelRef::new(MapSide::Back, 0, 1),
            ]
        );
        let idx = PixelIndex::new(2, 2, &nodes);
        assert_eq!(idx.get(MapSide::Back, 0, 1), Some(3));
        assert_eq!(idx.get(MapSide::Front, 0, 1), None);
        assert_eq!(idx.get(MapSide::Front, -1, 0), None);
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let planes = ChannelMap::new(2, 2, MapSide::Front, 3);
        assert!(GaussianMap::from_planes(planes).is_err());
    }

    #[test]
    fn sides_must_match_slots() {
        let f = TemplateMap::new(2, 2, MapSide::Back);
        let b = TemplateMap::new(2, 2, MapSide::Back);
        assert!(TemplateGeometry::new(f, b).is_err());
    }
}
