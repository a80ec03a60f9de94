//! Fine segmentation: dividing-line noise reduction, the ground-glass
//! evenness test and the self-adapting box correction loop.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::coarse::coarse_regions;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::morphology::{mean_of, rasterize_into, LocalMask, Region, N8};
use crate::par::Exec;
use crate::pleural::pleural_stage;
use crate::raster::{BBox, BinaryMask, GrayImage, Point};

/// Area a separated piece must exceed to be cut off by a line of length `d`.
pub fn removal_area_threshold(d: f64) -> f64 {
    PI * ((d + 1.0) / 2.0).powi(2)
}

/// A chord across a region neck, and the split it induces.
#[derive(Debug, Clone)]
pub struct DividingLine {
    pub p: Point,
    pub q: Point,
    pub length: f64,
    pub chord: Vec<Point>,
    /// Region left after removing the separated pieces; includes the chord.
    pub kept: Region,
    pub removed: Vec<Region>,
}

struct Candidate {
    d2: usize,
    p: Point,
    q: Point,
}

/// Finds the shortest valid dividing line of `region` (ties broken by
/// lexicographic `(p, q)`), or `None` when no line qualifies.
///
/// A line qualifies when its endpoints are distinct boundary pixels at
/// Euclidean distance at most `alpha`, its chord lies inside the region,
/// removing the chord disconnects the region, and at least one piece other
/// than the nodule piece exceeds `removal_area_threshold(d)`.
pub fn find_dividing_line(region: &Region, cfg: &PipelineConfig) -> Option<DividingLine> {
    let bbox = region.bbox();
    let local = LocalMask::new(bbox, region.pixels());
    let boundary = {
        let mut b = region.boundary().to_vec();
        b.sort_unstable();
        b
    };
    let max_d2 = (cfg.alpha * cfg.alpha).floor() as usize;
    let reach = cfg.alpha.floor() as usize;

    let mut candidates = Vec::new();
    for (i, &p) in boundary.iter().enumerate() {
        for &q in &boundary[i + 1..] {
            // boundary is sorted by x first
            if q.0 > p.0 + reach {
                break;
            }
            let dx = q.0.abs_diff(p.0);
            let dy = q.1.abs_diff(p.1);
            let d2 = dx * dx + dy * dy;
            if d2 <= max_d2 {
                candidates.push(Candidate { d2, p, q });
            }
        }
    }
    candidates.sort_unstable_by_key(|a| (a.d2, a.p, a.q));

    let mut splitter = Splitter::new(bbox);
    let mut chord = Vec::new();
    for c in &candidates {
        rasterize_into(c.p, c.q, &mut chord);
        if !chord.iter().all(|&(x, y)| local.get(x as isize, y as isize)) {
            continue;
        }
        let pieces = splitter.pieces(&local, &chord);
        if pieces.len() < 2 {
            continue;
        }
        let length = (c.d2 as f64).sqrt();
        if let Some(line) = judge_split(region, c, length, &chord, pieces) {
            return Some(line);
        }
    }
    None
}

fn judge_split(
    region: &Region,
    c: &Candidate,
    length: f64,
    chord: &[Point],
    pieces: Vec<Vec<Point>>,
) -> Option<DividingLine> {
    let (cx, cy) = region.centroid();
    let centre = (cx.round() as usize, cy.round() as usize);
    let nodule_idx = pieces
        .iter()
        .position(|piece| piece.contains(&centre))
        .unwrap_or_else(|| {
            // centroid on the chord or in a hole: fall back to the larger piece
            let mut best = 0;
            for (i, piece) in pieces.iter().enumerate() {
                if piece.len() > pieces[best].len() {
                    best = i;
                }
            }
            best
        });
    let limit = removal_area_threshold(length);
    let mut kept: Vec<Point> = chord.to_vec();
    let mut removed = Vec::new();
    for (i, piece) in pieces.into_iter().enumerate() {
        if i != nodule_idx && piece.len() as f64 > limit {
            removed.push(Region::from_points(piece));
        } else {
            kept.extend(piece);
        }
    }
    if removed.is_empty() {
        return None;
    }
    Some(DividingLine {
        p: c.p,
        q: c.q,
        length,
        chord: chord.to_vec(),
        kept: Region::from_points(kept),
        removed,
    })
}

/// Flood-fill helper reused across candidate chords.
struct Splitter {
    bbox: BBox,
    label: Vec<u32>,
    stamp: u32,
    stack: Vec<Point>,
}

impl Splitter {
    fn new(bbox: BBox) -> Self {
        Self {
            bbox,
            label: vec![0; bbox.area()],
            stamp: 0,
            stack: Vec::new(),
        }
    }

    #[inline]
    fn idx(&self, (x, y): Point) -> usize {
        (y - self.bbox.y0) * self.bbox.width() + (x - self.bbox.x0)
    }

    /// Components of `region \ chord`, each in discovery order. Returns a
    /// single piece early when a cheap local test proves connectivity.
    fn pieces(&mut self, region: &LocalMask, chord: &[Point]) -> Vec<Vec<Point>> {
        // Fresh stamps: chord pixels get `base`, pieces `base + 1 ..`.
        self.stamp += 1;
        let base = self.stamp;
        for &p in chord {
            let i = self.idx(p);
            self.label[i] = base;
        }
        let mut seeds = Vec::new();
        for &(x, y) in chord {
            for &(dx, dy) in &N8 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if region.get(nx, ny) {
                    let np = (nx as usize, ny as usize);
                    let i = self.idx(np);
                    if self.label[i] != base {
                        seeds.push(np);
                    }
                }
            }
        }
        if seeds.is_empty() {
            return Vec::new();
        }
        seeds.sort_unstable();
        seeds.dedup();
        if self.locally_connected(&seeds) {
            return vec![Vec::new()];
        }
        let mut pieces = Vec::new();
        for seed in seeds {
            let si = self.idx(seed);
            if self.label[si] > base {
                continue;
            }
            self.stamp += 1;
            let tag = self.stamp;
            let mut piece = Vec::new();
            self.label[si] = tag;
            self.stack.push(seed);
            while let Some((x, y)) = self.stack.pop() {
                piece.push((x, y));
                for &(dx, dy) in &N8 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if !region.get(nx, ny) {
                        continue;
                    }
                    let np = (nx as usize, ny as usize);
                    let ni = self.idx(np);
                    if self.label[ni] < base {
                        self.label[ni] = tag;
                        self.stack.push(np);
                    }
                }
            }
            pieces.push(piece);
        }
        pieces
    }

    /// True when the chord's neighbours are 8-connected among themselves;
    /// then every piece meets in the neighbourhood and nothing is split.
    fn locally_connected(&self, seeds: &[Point]) -> bool {
        let mut reached = vec![false; seeds.len()];
        reached[0] = true;
        let mut stack = vec![0usize];
        let mut count = 1;
        while let Some(i) = stack.pop() {
            let a = seeds[i];
            for (j, &b) in seeds.iter().enumerate() {
                if !reached[j] && a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1 {
                    reached[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == seeds.len()
    }
}

/// Applies dividing-line removals until none qualifies.
pub fn reduce_surrounding_noise(region: &Region, cfg: &PipelineConfig) -> Region {
    let mut current = region.clone();
    while let Some(line) = find_dividing_line(&current, cfg) {
        current = line.kept;
    }
    current
}

/// Intensity references for the ground-glass test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityReference {
    pub background_mean: f64,
    /// Robust (MAD based) background standard deviation.
    pub background_sigma: f64,
    pub solid_mean: f64,
}

impl IntensityReference {
    /// Background statistics over `bbox` pixels not set in `exclude`.
    pub fn measure(img: &GrayImage, bbox: BBox, exclude: &BinaryMask, solid: &Region) -> Self {
        let mut bg: Vec<f64> = bbox
            .points()
            .filter(|&(x, y)| !exclude.get(x, y))
            .map(|(x, y)| img.get(x, y) as f64)
            .collect();
        let background_mean = if bg.is_empty() {
            0.0
        } else {
            bg.iter().sum::<f64>() / bg.len() as f64
        };
        let background_sigma = robust_sigma(&mut bg);
        Self {
            background_mean,
            background_sigma,
            solid_mean: solid.mean_intensity(img),
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn robust_sigma(v: &mut [f64]) -> f64 {
    let m = median(v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
    1.4826 * median(&mut dev)
}

/// Counts of `ring` pixels in eight 45° sectors around `centre`; sector
/// edges lie on the axes and diagonals.
pub fn sector_counts(ring: &[Point], centre: (f64, f64)) -> [usize; 8] {
    let mut counts = [0usize; 8];
    for &(x, y) in ring {
        let a = (y as f64 - centre.1).atan2(x as f64 - centre.0);
        let s = ((a + PI) / (PI / 4.0)).floor() as usize;
        counts[s.min(7)] += 1;
    }
    counts
}

/// Population coefficient of variation.
pub fn coefficient_of_variation(counts: &[usize]) -> f64 {
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    if mean == 0.0 {
        return f64::INFINITY;
    }
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Evenness stop: is `ring` an evenly spread ground-glass shell around the
/// solid structure centred at `solid_centroid`?
pub fn ggo_evenness_check(
    ring: &[Point],
    solid_centroid: (f64, f64),
    img: &GrayImage,
    reference: &IntensityReference,
    cfg: &PipelineConfig,
) -> bool {
    if ring.is_empty() {
        return false;
    }
    let cv = coefficient_of_variation(&sector_counts(ring, solid_centroid));
    if cv > cfg.tau {
        return false;
    }
    let ring_mean = mean_of(img, ring);
    let between = ring_mean > reference.background_mean && ring_mean < reference.solid_mean;
    let contrast = ring_mean - reference.background_mean > cfg.ggo_min_contrast * reference.background_sigma;
    between && contrast
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BoxConverged,
    MinSizeGuard,
    GgoEvenness,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub contour_area: usize,
}

/// Accepted boxes of the correction loop, first entry is the input box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTrace {
    pub iterations: Vec<TraceStep>,
    pub stop_reason: StopReason,
    /// Number of re-thresholding passes on shrunk boxes.
    pub shrink_passes: usize,
}

impl CorrectionTrace {
    pub fn final_box(&self) -> BBox {
        self.iterations.last().expect("trace has the input box").bbox
    }
}

/// One threshold pass: candidates in `bbox`, noise reduction, largest survivor.
pub fn threshold_box(img: &GrayImage, bbox: BBox, wall: &BinaryMask, cfg: &PipelineConfig) -> Result<Option<Region>> {
    let mut regions = coarse_regions(img, bbox, wall, cfg)?;
    // Stable: equal areas keep row-major order.
    regions.sort_by_key(|r| std::cmp::Reverse(r.area()));
    let mut best: Option<Region> = None;
    for r in regions {
        if best.as_ref().is_some_and(|b| b.area() >= r.area()) {
            break; // reduction only shrinks
        }
        let reduced = reduce_surrounding_noise(&r, cfg);
        if best.as_ref().is_none_or(|b| reduced.area() > b.area()) {
            best = Some(reduced);
        }
    }
    Ok(best)
}

fn find_box(contour: &Region, limit: &BBox) -> BBox {
    contour.bbox().dilate(1, limit)
}

fn proportion(contour: &Region, bbox: &BBox) -> f64 {
    contour.area() as f64 / bbox.area() as f64
}

/// Self-adapting correction with wall removal run on `original_box`.
pub fn self_adapting_correct(
    img: &GrayImage,
    original_box: BBox,
    cfg: &PipelineConfig,
) -> Result<(Region, CorrectionTrace)> {
    let pleural = pleural_stage(img, original_box, Exec::default())?;
    correct_with_wall(img, original_box, &pleural.wall, cfg)
}

/// Self-adapting correction given a precomputed wall mask.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn correct_with_wall(
    img: &GrayImage,
    original_box: BBox,
    wall: &BinaryMask,
    cfg: &PipelineConfig,
) -> Result<(Region, CorrectionTrace)> {
    img.check_roi(original_box)?;
    let mut cur_box = original_box;
    let mut cur = threshold_box(img, cur_box, wall, cfg)?
        .ok_or_else(|| Error::SegmentationFailed(format!("no candidate region above s_m in {original_box:?}")))?;
    let mut steps = vec![TraceStep {
        bbox: cur_box,
        contour_area: cur.area(),
    }];
    let mut passes = 0;
    let finish = |cur: Region, steps, reason, passes| {
        Ok((
            cur,
            CorrectionTrace {
                iterations: steps,
                stop_reason: reason,
                shrink_passes: passes,
            },
        ))
    };
    if proportion(&cur, &cur_box) >= cfg.rho {
        return finish(cur, steps, StopReason::BoxConverged, passes);
    }
    let mut next_box = find_box(&cur, &original_box);
    loop {
        if !((next_box.area() as f64) < cur_box.area() as f64 / cfg.epsilon) {
            return finish(cur, steps, StopReason::BoxConverged, passes);
        }
        if passes == cfg.max_iterations {
            return finish(cur, steps, StopReason::MaxIter, passes);
        }
        passes += 1;
        let next = match threshold_box(img, next_box, wall, cfg)? {
            Some(r) if r.area() >= cfg.s_m => r,
            _ => return finish(cur, steps, StopReason::MinSizeGuard, passes),
        };
        if cfg.ggo_stop {
            let next_mask = next.to_mask(img.width(), img.height());
            let ring: Vec<Point> = cur
                .pixels()
                .iter()
                .copied()
                .filter(|&(x, y)| !next_mask.get(x, y))
                .collect();
            if !ring.is_empty() {
                let exclude = cur.to_mask(img.width(), img.height()).or(wall);
                let reference = IntensityReference::measure(img, cur_box, &exclude, &next);
                if ggo_evenness_check(&ring, next.centroid(), img, &reference, cfg) {
                    return finish(cur, steps, StopReason::GgoEvenness, passes);
                }
            }
        }
        cur_box = next_box;
        cur = next;
        steps.push(TraceStep {
            bbox: cur_box,
            contour_area: cur.area(),
        });
        if proportion(&cur, &cur_box) >= cfg.rho {
            return finish(cur, steps, StopReason::BoxConverged, passes);
        }
        next_box = find_box(&cur, &original_box);
    }
}
