//! Raster containers shared by every stage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel coordinate `(x, y)`; ordering is lexicographic on `(x, y)`.
pub type Point = (usize, usize);

/// 16-bit grayscale ROI crop, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u16>,
    spacing_mm: Option<(f64, f64)>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!("zero dimension {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            spacing_mm: None,
        })
    }

    pub fn filled(width: usize, height: usize, value: u16) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn with_spacing(mut self, dx: f64, dy: f64) -> Result<Self> {
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::InvalidRaster(format!("non-positive spacing ({dx}, {dy})")));
        }
        self.spacing_mm = Some((dx, dy));
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn spacing_mm(&self) -> Option<(f64, f64)> {
        self.spacing_mm
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u16) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn full_box(&self) -> BBox {
        BBox::new(0, 0, self.width, self.height)
    }

    /// Checks that `roi` is nonempty and inside the image.
    pub fn check_roi(&self, roi: BBox) -> Result<()> {
        if roi.is_empty() {
            return Err(Error::EmptyRoi);
        }
        if roi.x1 > self.width || roi.y1 > self.height {
            return Err(Error::RoiOutOfBounds(roi, self.width, self.height));
        }
        Ok(())
    }
}

/// Boolean raster; `true` is foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_points(width: usize, height: usize, points: impl IntoIterator<Item = Point>) -> Self {
        let mut m = Self::new(width, height);
        for (x, y) in points {
            m.set(x, y, true);
        }
        m
    }

    pub fn like(img: &GrayImage) -> Self {
        Self::new(img.width(), img.height())
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

    /// Out-of-bounds reads are background.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, |a, b| a && !b)
    }

    /// `true` if every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> BinaryMask {
        assert!(self.same_shape(other), "mask shape mismatch");
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Clears every pixel outside `roi`.
    pub fn restrict_to(&self, roi: BBox) -> BinaryMask {
        let mut out = BinaryMask::new(self.width, self.height);
        for y in roi.y0..roi.y1.min(self.height) {
            for x in roi.x0..roi.x1.min(self.width) {
                out.set(x, y, self.get(x, y));
            }
        }
        out
    }

    /// Tight bounding box of the foreground, `None` when empty.
    pub fn bounding_box(&self) -> Option<BBox> {
        BBox::enclosing(self.points())
    }
}

/// Axis-aligned box, inclusive min and exclusive max.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub const fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    #[inline]
    pub fn contains(&self, (x, y): Point) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    pub fn intersect(&self, other: &BBox) -> BBox {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1).max(x0);
        let y1 = self.y1.min(other.y1).max(y0);
        BBox { x0, y0, x1, y1 }
    }

    /// Grows the box by `by` pixels per side, clamped to `limit`.
    pub fn dilate(&self, by: usize, limit: &BBox) -> BBox {
        BBox {
            x0: self.x0.saturating_sub(by).max(limit.x0),
            y0: self.y0.saturating_sub(by).max(limit.y0),
            x1: (self.x1 + by).min(limit.x1),
            y1: (self.y1 + by).min(limit.y1),
        }
    }

    pub fn enclosing(points: impl IntoIterator<Item = Point>) -> Option<BBox> {
        let mut it = points.into_iter();
        let (x, y) = it.next()?;
        let mut b = BBox::new(x, y, x + 1, y + 1);
        for (x, y) in it {
            b.x0 = b.x0.min(x);
            b.y0 = b.y0.min(y);
            b.x1 = b.x1.max(x + 1);
            b.y1 = b.y1.max(y + 1);
        }
        Some(b)
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| (x, y)))
    }
}
