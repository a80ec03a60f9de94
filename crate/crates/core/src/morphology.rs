//! Binary raster kernels: thresholding, Otsu, labeling, opening/closing and
//! digital line segments.

use crate::error::{Error, Result};
use crate::raster::{BBox, BinaryMask, GrayImage, Point};

pub(crate) const N4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
pub(crate) const N8: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// One maximal 8-connected foreground component.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pixels: Vec<Point>,
    boundary: Vec<Point>,
    centroid: (f64, f64),
}

impl Region {
    /// Builds a region from its pixel set. Connectivity is the caller's
    /// responsibility; pixels are stored in row-major order.
    pub fn from_points(mut pixels: Vec<Point>) -> Self {
        assert!(!pixels.is_empty(), "region must be nonempty");
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        let bbox = BBox::enclosing(pixels.iter().copied()).unwrap();
        let local = LocalMask::new(bbox, &pixels);
        let boundary = pixels
            .iter()
            .copied()
            .filter(|&(x, y)| N4.iter().any(|&(dx, dy)| !local.get(x as isize + dx, y as isize + dy)))
            .collect();
        let n = pixels.len() as f64;
        let (sx, sy) = pixels
            .iter()
            .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64, b + y as f64));
        Self {
            pixels,
            boundary,
            centroid: (sx / n, sy / n),
        }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[Point] {
        &self.pixels
    }

    /// Pixels with at least one 4-neighbor outside the region.
    pub fn boundary(&self) -> &[Point] {
        &self.boundary
    }

    pub fn centroid(&self) -> (f64, f64) {
        self.centroid
    }

    pub fn bbox(&self) -> BBox {
        BBox::enclosing(self.pixels.iter().copied()).unwrap()
    }

    pub fn to_mask(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_points(width, height, self.pixels.iter().copied())
    }

    pub fn contains(&self, p: Point) -> bool {
        self.pixels.binary_search_by_key(&(p.1, p.0), |&(x, y)| (y, x)).is_ok()
    }

    pub fn mean_intensity(&self, img: &GrayImage) -> f64 {
        mean_of(img, &self.pixels)
    }
}

pub(crate) fn mean_of(img: &GrayImage, pts: &[Point]) -> f64 {
    if pts.is_empty() {
        return 0.0;
    }
    pts.iter().map(|&(x, y)| img.get(x, y) as f64).sum::<f64>() / pts.len() as f64
}

/// Dense bitmap over a bounding box, used for fast membership tests.
#[derive(Debug, Clone)]
pub(crate) struct LocalMask {
    pub bbox: BBox,
    bits: Vec<bool>,
}

impl LocalMask {
    pub fn new(bbox: BBox, pts: &[Point]) -> Self {
        let mut m = Self {
            bbox,
            bits: vec![false; bbox.area()],
        };
        for &p in pts {
            m.set(p, true);
        }
        m
    }

    #[inline]
    pub fn get(&self, x: isize, y: isize) -> bool {
        let b = &self.bbox;
        if x < b.x0 as isize || y < b.y0 as isize || x >= b.x1 as isize || y >= b.y1 as isize {
            return false;
        }
        self.bits[(y as usize - b.y0) * b.width() + (x as usize - b.x0)]
    }

    #[inline]
    pub fn set(&mut self, (x, y): Point, v: bool) {
        let w = self.bbox.width();
        self.bits[(y - self.bbox.y0) * w + (x - self.bbox.x0)] = v;
    }
}

/// Disk-shaped structuring element: all offsets with Euclidean norm `<= radius`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    radius: usize,
    offsets: Vec<(isize, isize)>,
}

impl StructuringElement {
    pub fn disk(radius: usize) -> Self {
        assert!(radius >= 1, "structuring element radius must be >= 1");
        let r = radius as isize;
        let offsets = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        Self { radius, offsets }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }
}

/// Foreground = ROI pixels strictly above the exact ROI mean.
pub fn binarize_mean(img: &GrayImage, roi: BBox) -> Result<BinaryMask> {
    img.check_roi(roi)?;
    let n = roi.area() as u64;
    let sum: u64 = roi.points().map(|(x, y)| img.get(x, y) as u64).sum();
    let mut out = BinaryMask::like(img);
    for (x, y) in roi.points() {
        // v > sum / n without rounding
        if img.get(x, y) as u64 * n > sum {
            out.set(x, y, true);
        }
    }
    Ok(out)
}

/// Foreground = ROI pixels strictly above `t`.
pub fn binarize_above(img: &GrayImage, roi: BBox, t: u16) -> Result<BinaryMask> {
    img.check_roi(roi)?;
    let mut out = BinaryMask::like(img);
    for (x, y) in roi.points() {
        if img.get(x, y) > t {
            out.set(x, y, true);
        }
    }
    Ok(out)
}

/// Between-class variance score of one split, kept as an exact fraction
/// `num / den` when the sums fit in 128 bits.
#[derive(Clone, Copy)]
enum Score {
    Exact { num: u128, den: u128 },
    Approx(f64),
}

impl Score {
    fn new(n_lo: u64, s_lo: u64, n_hi: u64, s_hi: u64) -> Self {
        // n_lo*n_hi*(m_lo - m_hi)^2 = (n_hi*s_lo - n_lo*s_hi)^2 / (n_lo*n_hi)
        let a = n_hi as u128 * s_lo as u128;
        let b = n_lo as u128 * s_hi as u128;
        let diff = a.abs_diff(b);
        let den = n_lo as u128 * n_hi as u128;
        match diff.checked_mul(diff) {
            Some(num) if den < (1u128 << 48) => Score::Exact { num, den },
            _ => Score::Approx(diff as f64 * diff as f64 / den as f64),
        }
    }

    fn gt(&self, other: &Score) -> bool {
        match (*self, *other) {
            (Score::Exact { num: n1, den: d1 }, Score::Exact { num: n2, den: d2 }) => {
                let (q1, r1) = (n1 / d1, n1 % d1);
                let (q2, r2) = (n2 / d2, n2 % d2);
                // remainders are < 2^48, products fit
                q1 > q2 || (q1 == q2 && r1 * d2 > r2 * d1)
            }
            _ => self.as_f64() > other.as_f64(),
        }
    }

    fn as_f64(&self) -> f64 {
        match *self {
            Score::Exact { num, den } => num as f64 / den as f64,
            Score::Approx(v) => v,
        }
    }
}

/// Otsu threshold over the ROI histogram. Foreground is `> t`; among
/// thresholds with equal between-class variance the smallest wins.
pub fn otsu_threshold(img: &GrayImage, roi: BBox) -> Result<u16> {
    img.check_roi(roi)?;
    let mut values: Vec<u16> = roi.points().map(|(x, y)| img.get(x, y)).collect();
    values.sort_unstable();
    let total_n = values.len() as u64;
    let total_s: u64 = values.iter().map(|&v| v as u64).sum();

    // Only splits between consecutive distinct values change the classes;
    // the smallest threshold producing a split is the lower distinct value.
    let mut best: Option<(u16, Score)> = None;
    let (mut n_lo, mut s_lo) = (0u64, 0u64);
    let mut i = 0;
    while i < values.len() {
        let v = values[i];
        while i < values.len() && values[i] == v {
            n_lo += 1;
            s_lo += v as u64;
            i += 1;
        }
        if i == values.len() {
            break;
        }
        let score = Score::new(n_lo, s_lo, total_n - n_lo, total_s - s_lo);
        if best.as_ref().is_none_or(|(_, b)| score.gt(b)) {
            best = Some((v, score));
        }
    }
    best.map(|(t, _)| t)
        .ok_or(Error::Degenerate("constant region of interest"))
}

/// Maximal 8-connected foreground components, ordered by their first pixel
/// in row-major order.
pub fn connected_components(mask: &BinaryMask) -> Vec<Region> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut regions = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pts = Vec::new();
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            pts.push((x, y));
            for &(dx, dy) in &N8 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if mask.get_signed(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        regions.push(Region::from_points(pts));
    }
    regions
}

pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let mut out = BinaryMask::new(mask.width(), mask.height());
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !mask.get(x, y) {
                continue;
            }
            let keep = se
                .offsets()
                .iter()
                .all(|&(dx, dy)| mask.get_signed(x as isize + dx, y as isize + dy));
            out.set(x, y, keep);
        }
    }
    out
}

pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let mut out = BinaryMask::new(mask.width(), mask.height());
    for (x, y) in mask.points() {
        for &(dx, dy) in se.offsets() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx >= 0 && ny >= 0 && (nx as usize) < mask.width() && (ny as usize) < mask.height() {
                out.set(nx as usize, ny as usize, true);
            }
        }
    }
    out
}

pub fn open(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    dilate(&erode(mask, se), se)
}

/// Closing computed on a canvas padded by the SE radius, so dilation is not
/// truncated at the raster edge and `mask ⊆ close(mask)` holds.
pub fn close(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let r = se.radius();
    let (w, h) = (mask.width(), mask.height());
    let mut padded = BinaryMask::new(w + 2 * r, h + 2 * r);
    for (x, y) in mask.points() {
        padded.set(x + r, y + r, true);
    }
    let closed = erode(&dilate(&padded, se), se);
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, closed.get(x + r, y + r));
        }
    }
    out
}

/// 8-connected Bresenham segment from `p` to `q`, both inclusive. The pixel
/// set does not depend on the direction of traversal.
pub fn rasterize_segment(p: Point, q: Point) -> Vec<Point> {
    let mut out = Vec::new();
    rasterize_into(p, q, &mut out);
    out
}

pub(crate) fn rasterize_into(p: Point, q: Point, out: &mut Vec<Point>) {
    out.clear();
    let swapped = q < p;
    let (a, b) = if swapped { (q, p) } else { (p, q) };
    let (mut x, mut y) = (a.0 as isize, a.1 as isize);
    let (x1, y1) = (b.0 as isize, b.1 as isize);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        out.push((x as usize, y as usize));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    if swapped {
        out.reverse();
    }
}
