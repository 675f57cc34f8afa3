//! Point cloud data model: integer voxel geometry paired with per-point colors.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_BITDEPTH: u8 = 8;
pub const MAX_BITDEPTH: u8 = 14;

/// PSNR reported for a zero mean squared error.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const PSNR_PEAK: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColorSpace {
    Rgb8,
    Yuv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    geometry: Vec<[u32; 3]>,
    colors: Vec<[f64; 3]>,
    bitdepth: u8,
    colorspace: ColorSpace,
}

impl PointCloud {
    /// Builds a validated cloud: equal lengths, unique in-range coordinates,
    /// and integer channels in `[0, 255]` for RGB8.
    pub fn new(
        geometry: Vec<[u32; 3]>,
        colors: Vec<[f64; 3]>,
        bitdepth: u8,
        colorspace: ColorSpace,
    ) -> Result<Self> {
        if !(MIN_BITDEPTH..=MAX_BITDEPTH).contains(&bitdepth) {
            return Err(Error::InvalidArgument(format!(
                "bit depth {bitdepth} outside [{MIN_BITDEPTH}, {MAX_BITDEPTH}]"
            )));
        }
        if geometry.len() != colors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates but {} colors",
                geometry.len(),
                colors.len()
            )));
        }
        let limit = 1u32 << bitdepth;
        let mut seen = HashSet::with_capacity(geometry.len());
        for p in &geometry {
            if let Some(&v) = p.iter().find(|&&v| v >= limit) {
                return Err(Error::CoordinateOutOfRange {
                    value: i64::from(v),
                    bitdepth,
                });
            }
            if !seen.insert(*p) {
                return Err(Error::DuplicatePoint(*p));
            }
        }
        for c in colors.iter().flatten() {
            if !c.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite color {c}")));
            }
            if colorspace == ColorSpace::Rgb8 && (*c < 0.0 || *c > 255.0 || c.fract() != 0.0) {
                return Err(Error::ColorOutOfRange(*c));
            }
        }
        Ok(Self {
            geometry,
            colors,
            bitdepth,
            colorspace,
        })
    }

    pub fn empty(bitdepth: u8, colorspace: ColorSpace) -> Self {
        Self {
            geometry: Vec::new(),
            colors: Vec::new(),
            bitdepth,
            colorspace,
        }
    }

    /// Skips validation; callers guarantee the invariants (used when
    /// selecting subsets of an already valid cloud).
    pub(crate) fn from_parts_unchecked(
        geometry: Vec<[u32; 3]>,
        colors: Vec<[f64; 3]>,
        bitdepth: u8,
        colorspace: ColorSpace,
    ) -> Self {
        debug_assert_eq!(geometry.len(), colors.len());
        Self {
            geometry,
            colors,
            bitdepth,
            colorspace,
        }
    }

    pub fn len(&self) -> usize {
        self.geometry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geometry.is_empty()
    }

    pub fn geometry(&self) -> &[[u32; 3]] {
        &self.geometry
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn bitdepth(&self) -> u8 {
        self.bitdepth
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn into_parts(self) -> (Vec<[u32; 3]>, Vec<[f64; 3]>) {
        (self.geometry, self.colors)
    }

    pub(crate) fn expect_colorspace(&self, expected: ColorSpace) -> Result<()> {
        if self.colorspace != expected {
            return Err(Error::WrongColorSpace {
                expected,
                found: self.colorspace,
            });
        }
        Ok(())
    }

    /// Returns a copy with the same points in the given order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        map_attributes(self, order)
    }

    pub fn to_yuv(&self) -> Result<Self> {
        rgb_to_yuv(self)
    }

    pub fn to_rgb(&self) -> Result<Self> {
        yuv_to_rgb(self)
    }
}

// BT.709 luma weights.
const KR: f64 = 0.2126;
const KB: f64 = 0.0722;
const KG: f64 = 1.0 - KR - KB;
const CB_SCALE: f64 = 2.0 * (1.0 - KB);
const CR_SCALE: f64 = 2.0 * (1.0 - KR);
const CHROMA_OFFSET: f64 = 128.0;

/// Full-range BT.709 with 128-centered chroma.
pub fn rgb_pixel_to_yuv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let y = KR * r + KG * g + KB * b;
    [
        y,
        (b - y) / CB_SCALE + CHROMA_OFFSET,
        (r - y) / CR_SCALE + CHROMA_OFFSET,
    ]
}

/// Exact inverse of [`rgb_pixel_to_yuv`] before rounding.
pub fn yuv_pixel_to_rgb(yuv: [f64; 3]) -> [f64; 3] {
    let [y, u, v] = yuv;
    let b = (u - CHROMA_OFFSET) * CB_SCALE + y;
    let r = (v - CHROMA_OFFSET) * CR_SCALE + y;
    let g = (y - KR * r - KB * b) / KG;
    [r, g, b]
}

pub fn rgb_to_yuv(pc: &PointCloud) -> Result<PointCloud> {
    pc.expect_colorspace(ColorSpace::Rgb8)?;
    let colors = pc.colors.iter().map(|&c| rgb_pixel_to_yuv(c)).collect();
    Ok(PointCloud::from_parts_unchecked(
        pc.geometry.clone(),
        colors,
        pc.bitdepth,
        ColorSpace::Yuv,
    ))
}

/// Converts back to 8-bit RGB, rounding half to even and clamping.
pub fn yuv_to_rgb(pc: &PointCloud) -> Result<PointCloud> {
    pc.expect_colorspace(ColorSpace::Yuv)?;
    let colors = pc
        .colors
        .iter()
        .map(|&c| yuv_pixel_to_rgb(c).map(quantize_channel))
        .collect();
    Ok(PointCloud::from_parts_unchecked(
        pc.geometry.clone(),
        colors,
        pc.bitdepth,
        ColorSpace::Rgb8,
    ))
}

/// Rounds a real channel value onto the 8-bit grid.
pub fn quantize_channel(v: f64) -> f64 {
    v.round_ties_even().clamp(0.0, 255.0)
}

/// Points of `a` whose coordinates are absent from `b`, in `a`'s order.
pub fn set_difference(a: &PointCloud, b: &PointCloud) -> Result<PointCloud> {
    let in_a: HashSet<[u32; 3]> = a.geometry.iter().copied().collect();
    if let Some(p) = b.geometry.iter().find(|p| !in_a.contains(*p)) {
        return Err(Error::NotSubset(*p));
    }
    let in_b: HashSet<[u32; 3]> = b.geometry.iter().copied().collect();
    let (geometry, colors) = a
        .geometry
        .iter()
        .zip(&a.colors)
        .filter(|(g, _)| !in_b.contains(*g))
        .map(|(g, c)| (*g, *c))
        .unzip();
    Ok(PointCloud::from_parts_unchecked(
        geometry,
        colors,
        a.bitdepth,
        a.colorspace,
    ))
}

/// Concatenation of two geometry-disjoint clouds.
pub fn union(a: &PointCloud, b: &PointCloud) -> Result<PointCloud> {
    if a.colorspace != b.colorspace {
        return Err(Error::WrongColorSpace {
            expected: a.colorspace,
            found: b.colorspace,
        });
    }
    let mut geometry = a.geometry.clone();
    geometry.extend_from_slice(&b.geometry);
    let mut colors = a.colors.clone();
    colors.extend_from_slice(&b.colors);
    PointCloud::new(geometry, colors, a.bitdepth.max(b.bitdepth), a.colorspace)
}

/// Sub-cloud at `indices`, in index order.
pub fn map_attributes(source: &PointCloud, indices: &[usize]) -> Result<PointCloud> {
    let len = source.len();
    let mut geometry = Vec::with_capacity(indices.len());
    let mut colors = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= len {
            return Err(Error::IndexOutOfRange { index: i, len });
        }
        geometry.push(source.geometry[i]);
        colors.push(source.colors[i]);
    }
    Ok(PointCloud::from_parts_unchecked(
        geometry,
        colors,
        source.bitdepth,
        source.colorspace,
    ))
}

/// Per-channel mean squared error with correspondence by coordinate.
pub fn channel_mse(reference: &PointCloud, test: &PointCloud, channel: usize) -> Result<f64> {
    if channel > 2 {
        return Err(Error::InvalidArgument(format!("channel {channel} > 2")));
    }
    if reference.colorspace != test.colorspace {
        return Err(Error::WrongColorSpace {
            expected: reference.colorspace,
            found: test.colorspace,
        });
    }
    if reference.len() != test.len() {
        return Err(Error::GeometryMismatch(format!(
            "{} reference points vs {} test points",
            reference.len(),
            test.len()
        )));
    }
    if reference.is_empty() {
        return Ok(0.0);
    }
    let lookup: HashMap<[u32; 3], usize> = test
        .geometry
        .iter()
        .enumerate()
        .map(|(i, g)| (*g, i))
        .collect();
    let mut sum = 0.0;
    for (g, c) in reference.geometry.iter().zip(&reference.colors) {
        let j = *lookup
            .get(g)
            .ok_or_else(|| Error::GeometryMismatch(format!("{g:?} missing from test cloud")))?;
        let d = c[channel] - test.colors[j][channel];
        sum += d * d;
    }
    Ok(sum / reference.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (PSNR_PEAK * PSNR_PEAK / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn channel_psnr(reference: &PointCloud, test: &PointCloud, channel: usize) -> Result<f64> {
    channel_mse(reference, test, channel).map(psnr_from_mse)
}
