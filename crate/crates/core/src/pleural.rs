//! Lung-wall removal inside an ROI by chord coverage of the cutting line.
//!
//! The binarized ROI is split into foreground and background by the cutting
//! line `L`. Every pair of `L` points is joined by a digital segment; segments
//! lying entirely in the foreground mark their pixels as covered. Foreground
//! that no segment covers is wall.

use crate::error::Result;
use crate::morphology::{binarize_mean, connected_components, rasterize_into, N4};
use crate::par::Exec;
use crate::raster::{BBox, BinaryMask, GrayImage, Point};

/// Cutting-line points are subsampled to at most this many before pairing.
pub const MAX_LINE_POINTS: usize = 1024;

/// Foreground pixels with a background 4-neighbor inside the ROI.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CuttingLine {
    pub points: Vec<Point>,
}

impl CuttingLine {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

pub fn extract_cutting_line(mask: &BinaryMask, roi: BBox) -> CuttingLine {
    let mut points = Vec::new();
    for (x, y) in roi.points() {
        if !mask.get(x, y) {
            continue;
        }
        let touches_bg = N4.iter().any(|&(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            nx >= roi.x0 as isize
                && ny >= roi.y0 as isize
                && nx < roi.x1 as isize
                && ny < roi.y1 as isize
                && !mask.get(nx as usize, ny as usize)
        });
        if touches_bg {
            points.push((x, y));
        }
    }
    CuttingLine { points }
}

/// All intermediate masks of the wall-removal stage.
#[derive(Debug, Clone)]
pub struct PleuralResult {
    /// Mean-binarized ROI.
    pub binarized: BinaryMask,
    /// Foreground pixels covered by at least one all-foreground chord.
    pub covered: BinaryMask,
    /// Pixels classified as lung wall.
    pub wall: BinaryMask,
    /// `binarized` minus `wall`.
    pub kept: BinaryMask,
}

pub fn remove_pleural_surface(img: &GrayImage, roi: BBox) -> Result<BinaryMask> {
    Ok(pleural_stage(img, roi, Exec::default())?.kept)
}

pub fn pleural_stage(img: &GrayImage, roi: BBox, exec: Exec) -> Result<PleuralResult> {
    let binarized = binarize_mean(img, roi)?;
    Ok(pleural_from_mask(binarized, roi, exec))
}

/// Runs wall removal on an already binarized ROI.
pub fn pleural_from_mask(binarized: BinaryMask, roi: BBox, exec: Exec) -> PleuralResult {
    let (w, h) = (binarized.width(), binarized.height());
    let line = extract_cutting_line(&binarized, roi);
    if line.is_empty() {
        return PleuralResult {
            covered: BinaryMask::new(w, h),
            wall: BinaryMask::new(w, h),
            kept: binarized.clone(),
            binarized,
        };
    }
    let points = subsample(&line.points, MAX_LINE_POINTS);
    let covered = chord_cover(&binarized, &points, exec);

    let on_line = BinaryMask::from_points(w, h, line.points.iter().copied());
    let mut wall = BinaryMask::new(w, h);
    for region in connected_components(&binarized) {
        // Regions touching fewer than two line points cannot be spanned by
        // any chord, so their lack of coverage says nothing about the wall.
        let line_pts = region
            .pixels()
            .iter()
            .filter(|&&(x, y)| on_line.get(x, y))
            .take(2)
            .count();
        if line_pts < 2 {
            continue;
        }
        for &(x, y) in region.pixels() {
            if !covered.get(x, y) {
                wall.set(x, y, true);
            }
        }
    }
    let kept = binarized.and_not(&wall);
    PleuralResult {
        binarized,
        covered,
        wall,
        kept,
    }
}

fn subsample(points: &[Point], cap: usize) -> Vec<Point> {
    if points.len() <= cap {
        return points.to_vec();
    }
    let step = points.len().div_ceil(cap);
    points.iter().step_by(step).copied().collect()
}

fn cover_from(fg: &BinaryMask, points: &[Point], i: usize, covered: &mut [bool], buf: &mut Vec<Point>) {
    let w = fg.width();
    let p = points[i];
    for &q in &points[i + 1..] {
        rasterize_into(p, q, buf);
        if buf.iter().all(|&(x, y)| fg.get(x, y)) {
            for &(x, y) in buf.iter() {
                covered[y * w + x] = true;
            }
        }
    }
}

/// Union of all-foreground chords over every unordered pair of `points`.
/// The union is order independent, so both execution paths agree bit for bit.
pub fn chord_cover(fg: &BinaryMask, points: &[Point], exec: Exec) -> BinaryMask {
    let (w, h) = (fg.width(), fg.height());
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        let bits = (0..points.len())
            .into_par_iter()
            .fold(
                || (vec![false; w * h], Vec::new()),
                |(mut acc, mut buf), i| {
                    cover_from(fg, points, i, &mut acc, &mut buf);
                    (acc, buf)
                },
            )
            .map(|(acc, _)| acc)
            .reduce(
                || vec![false; w * h],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x |= y);
                    a
                },
            );
        return BinaryMask::from_bits(w, h, bits).expect("shape");
    }
    let _ = exec;
    let mut bits = vec![false; w * h];
    let mut buf = Vec::new();
    for i in 0..points.len() {
        cover_from(fg, points, i, &mut bits, &mut buf);
    }
    BinaryMask::from_bits(w, h, bits).expect("shape")
}
