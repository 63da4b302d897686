//! Raster containers: metric depth, boolean masks, integer displacement
//! fields and 8-bit RGB.
//!
//! All grids are row-major with pixel `(x, y)` at index `y * width + x`.
//! Missing depth is stored as exactly `0.0`; any depth `<= 0` is treated as
//! unknown by the algorithms in this crate.

use crate::error::{Error, Result};

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    if width.checked_mul(height) != Some(len) {
        return Err(Error::invalid(format!(
            "buffer of length {len} does not match {width}x{height}"
        )));
    }
    Ok(())
}

/// A metric depth image in meters; `0.0` marks an unknown pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthImage {
    /// Builds an image from row-major depths. Rejects negative, NaN and
    /// infinite values.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        if let Some(i) = data.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::invalid(format!(
                "depth at ({}, {}) is {}; depths must be finite and non-negative",
                i % width,
                i / width,
                data[i]
            )));
        }
        // normalize -0.0 so that "unknown" has a single bit pattern
        let data = data.into_iter().map(|d| if d == 0.0 { 0.0 } else { d }).collect();
        Ok(Self { width, height, data })
    }

    /// An all-unknown image.
    pub fn unknown(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Internal constructor for buffers that are valid by construction.
    pub(crate) fn from_raw_unchecked(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(width * height, data.len());
        debug_assert!(data.iter().all(|d| d.is_finite() && *d >= 0.0));
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_known(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > 0.0
    }

    pub fn known_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }

    pub fn same_dims<T: Dimensions + ?Sized>(&self, other: &T) -> bool {
        self.width == other.dims().0 && self.height == other.dims().1
    }

    /// Mask of the pixels with known depth.
    pub fn known_mask(&self) -> PixelMask {
        PixelMask::from_raw_unchecked(
            self.width,
            self.height,
            self.data.iter().map(|d| *d > 0.0).collect(),
        )
    }

    /// Mask of the pixels with unknown depth.
    pub fn unknown_mask(&self) -> PixelMask {
        PixelMask::from_raw_unchecked(
            self.width,
            self.height,
            self.data.iter().map(|d| *d <= 0.0).collect(),
        )
    }

    /// Copy with every pixel in `mask` set to unknown.
    pub fn with_removed(&self, mask: &PixelMask) -> Result<Self> {
        ensure_same_dims(self, mask)?;
        let data = self
            .data
            .iter()
            .zip(mask.bits())
            .map(|(d, m)| if *m { 0.0 } else { *d })
            .collect();
        Ok(Self::from_raw_unchecked(self.width, self.height, data))
    }

    /// Nearest-neighbour upsampling: every pixel becomes a `factor x factor` block.
    pub fn upsample_nearest(&self, factor: usize) -> Self {
        if factor == 1 {
            return self.clone();
        }
        let (w, h) = (self.width * factor, self.height * factor);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let row = &self.data[(y / factor) * self.width..][..self.width];
            for x in 0..w {
                data.push(row[x / factor]);
            }
        }
        Self::from_raw_unchecked(w, h, data)
    }

    /// Min-depth pooling over `factor x factor` blocks, ignoring unknown
    /// pixels. Blocks without any known pixel stay unknown.
    pub fn downsample_min(&self, factor: usize) -> Self {
        if factor == 1 {
            return self.clone();
        }
        let (w, h) = (self.width.div_ceil(factor), self.height.div_ceil(factor));
        let mut data = vec![0.0f32; w * h];
        for y in 0..self.height {
            let out_row = &mut data[(y / factor) * w..][..w];
            for (x, &d) in self.data[y * self.width..][..self.width].iter().enumerate() {
                if d > 0.0 {
                    let slot = &mut out_row[x / factor];
                    if *slot == 0.0 || d < *slot {
                        *slot = d;
                    }
                }
            }
        }
        Self::from_raw_unchecked(w, h, data)
    }

    /// Horizontal mirror.
    pub fn flip_horizontal(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.width) {
            row.reverse();
        }
        Self::from_raw_unchecked(self.width, self.height, data)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        check_crop(self.width, self.height, x0, y0, w, h)?;
        let data = (y0..y0 + h)
            .flat_map(|y| self.data[y * self.width + x0..][..w].iter().copied())
            .collect();
        Ok(Self::from_raw_unchecked(w, h, data))
    }
}

pub(crate) fn check_crop(width: usize, height: usize, x0: usize, y0: usize, w: usize, h: usize) -> Result<()> {
    if w == 0 || h == 0 || x0 + w > width || y0 + h > height {
        return Err(Error::invalid(format!(
            "crop {w}x{h} at ({x0}, {y0}) does not fit inside {width}x{height}"
        )));
    }
    Ok(())
}

/// Anything laid out on a pixel grid.
pub trait Dimensions {
    fn dims(&self) -> (usize, usize);
}

impl Dimensions for DepthImage {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dimensions for PixelMask {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dimensions for DisplacementField {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dimensions for RgbImage {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

pub(crate) fn ensure_same_dims<A: Dimensions + ?Sized, B: Dimensions + ?Sized>(a: &A, b: &B) -> Result<()> {
    if a.dims() != b.dims() {
        let (aw, ah) = a.dims();
        let (bw, bh) = b.dims();
        return Err(Error::invalid(format!("dimension mismatch: {aw}x{ah} vs {bw}x{bh}")));
    }
    Ok(())
}

/// Boolean per-pixel annotation, e.g. the occlusion mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height, bits.len())?;
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    pub(crate) fn from_raw_unchecked(width: usize, height: usize, bits: Vec<bool>) -> Self {
        debug_assert_eq!(width * height, bits.len());
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_clear(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Coordinates of the set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % w, i / w))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        ensure_same_dims(self, other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| f(*a, *b)).collect();
        Ok(Self::from_raw_unchecked(self.width, self.height, bits))
    }

    /// Pixels set in `self` but not in `other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn is_subset_of(&self, other: &Self) -> Result<bool> {
        Ok(self.difference(other)?.is_clear())
    }

    /// Morphological erosion with a 3x3 square structuring element. Pixels
    /// outside the frame count as set, so the image border does not erode.
    pub fn erode(&self) -> Self {
        let (w, h) = (self.width as isize, self.height as isize);
        let set = |x: isize, y: isize| {
            x < 0 || y < 0 || x >= w || y >= h || self.bits[(y * w + x) as usize]
        };
        let mut bits = vec![false; self.bits.len()];
        for y in 0..h {
            for x in 0..w {
                if !set(x, y) {
                    continue;
                }
                bits[(y * w + x) as usize] =
                    (-1..=1).all(|dy| (-1..=1).all(|dx| set(x + dx, y + dy)));
            }
        }
        Self::from_raw_unchecked(self.width, self.height, bits)
    }

    /// Morphological dilation with a 3x3 square structuring element.
    pub fn dilate(&self) -> Self {
        let (w, h) = (self.width as isize, self.height as isize);
        let mut bits = vec![false; self.bits.len()];
        for y in 0..h {
            for x in 0..w {
                bits[(y * w + x) as usize] = (-1..=1).any(|dy| {
                    (-1..=1).any(|dx| {
                        let (nx, ny) = (x + dx, y + dy);
                        nx >= 0 && ny >= 0 && nx < w && ny < h && self.bits[(ny * w + nx) as usize]
                    })
                });
            }
        }
        Self::from_raw_unchecked(self.width, self.height, bits)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut bits = self.bits.clone();
        for row in bits.chunks_mut(self.width) {
            row.reverse();
        }
        Self::from_raw_unchecked(self.width, self.height, bits)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        check_crop(self.width, self.height, x0, y0, w, h)?;
        let bits = (y0..y0 + h)
            .flat_map(|y| self.bits[y * self.width + x0..][..w].iter().copied())
            .collect();
        Ok(Self::from_raw_unchecked(w, h, bits))
    }
}

/// Per-pixel integer offsets naming the source pixel `(x + dx, y + dy)`
/// whose depth is copied into pixel `(x, y)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisplacementField {
    width: usize,
    height: usize,
    offsets: Vec<(i32, i32)>,
}

impl DisplacementField {
    pub fn new(width: usize, height: usize, offsets: Vec<(i32, i32)>) -> Result<Self> {
        check_dims(width, height, offsets.len())?;
        Ok(Self { width, height, offsets })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![(0, 0); width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (i32, i32) {
        self.offsets[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, offset: (i32, i32)) {
        self.offsets[y * self.width + x] = offset;
    }

    /// The source pixel referenced from `(x, y)`, if it lies in the frame.
    pub fn source_of(&self, x: usize, y: usize) -> Option<(usize, usize)> {
        let (dx, dy) = self.get(x, y);
        let sx = x as i64 + dx as i64;
        let sy = y as i64 + dy as i64;
        (sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height)
            .then_some((sx as usize, sy as usize))
    }
}

/// 8-bit RGB image, used for the colour half of RGB-D synthesis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    pub fn upsample_nearest(&self, factor: usize) -> Self {
        let (w, h) = (self.width * factor, self.height * factor);
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                pixels.push(self.get(x / factor, y / factor));
            }
        }
        Self { width: w, height: h, pixels }
    }
}
