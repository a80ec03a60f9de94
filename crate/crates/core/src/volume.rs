//! Slice-to-slice box propagation from the centre slice outwards.

use serde::Serialize;

use crate::coarse::coarse_candidates;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fine::{self_adapting_correct, CorrectionTrace};
use crate::morphology::Region;
use crate::par::Exec;
use crate::raster::{BBox, BinaryMask, GrayImage};

#[derive(Debug, Clone)]
pub struct StackSlice {
    pub image: GrayImage,
    pub roi_box: BBox,
}

#[derive(Debug, Clone)]
pub struct SliceStack {
    pub slices: Vec<StackSlice>,
    /// Reference slice; `None` picks the slice with the most coarse foreground.
    pub center_index: Option<usize>,
}

/// Result for one slice. `region` is `None` when the slice produced no
/// contour (nodule absent or segmentation failure).
#[derive(Debug, Clone)]
pub struct SliceOutcome {
    pub index: usize,
    pub start_box: BBox,
    pub region: Option<Region>,
    pub trace: Option<CorrectionTrace>,
    pub error: Option<String>,
}

impl SliceOutcome {
    pub fn mask(&self, width: usize, height: usize) -> BinaryMask {
        match &self.region {
            Some(r) => r.to_mask(width, height),
            None => BinaryMask::new(width, height),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OutcomeSummary {
    pub index: usize,
    pub start_box: BBox,
    pub area: usize,
}

fn run_slice(slice: &StackSlice, index: usize, start_box: BBox, cfg: &PipelineConfig) -> SliceOutcome {
    match self_adapting_correct(&slice.image, start_box, cfg) {
        Ok((region, trace)) => SliceOutcome {
            index,
            start_box,
            region: Some(region),
            trace: Some(trace),
            error: None,
        },
        Err(e) => SliceOutcome {
            index,
            start_box,
            region: None,
            trace: None,
            error: Some(e.to_string()),
        },
    }
}

/// Picks the slice with the largest coarse foreground inside its ROI.
pub fn pick_center(stack: &SliceStack, cfg: &PipelineConfig) -> usize {
    let mut best = (0, 0usize);
    for (i, s) in stack.slices.iter().enumerate() {
        let wall = BinaryMask::like(&s.image);
        let area = coarse_candidates(&s.image, s.roi_box, &wall, cfg)
            .map(|m| m.count())
            .unwrap_or(0);
        if area > best.1 {
            best = (i, area);
        }
    }
    best.0
}

fn sweep(
    stack: &SliceStack,
    indices: impl Iterator<Item = usize>,
    anchor: &Region,
    cfg: &PipelineConfig,
) -> Vec<SliceOutcome> {
    let mut last = anchor.bbox();
    let mut out = Vec::new();
    for i in indices {
        let slice = &stack.slices[i];
        let inherited = last.dilate(cfg.margin, &slice.roi_box).intersect(&slice.roi_box);
        let start = if inherited.is_empty() { slice.roi_box } else { inherited };
        let outcome = run_slice(slice, i, start, cfg);
        if let Some(r) = &outcome.region {
            last = r.bbox();
        }
        out.push(outcome);
    }
    out
}

/// Segments the centre slice on its own ROI, then every other slice inside
/// the box inherited from its inner neighbour. Results are ordered by index.
pub fn segment_stack(stack: &SliceStack, cfg: &PipelineConfig, exec: Exec) -> Result<Vec<SliceOutcome>> {
    let n = stack.slices.len();
    if n == 0 {
        return Err(Error::SegmentationFailed("empty slice stack".into()));
    }
    let center = match stack.center_index {
        Some(c) if c < n => c,
        Some(c) => return Err(Error::SegmentationFailed(format!("center index {c} out of range"))),
        None => pick_center(stack, cfg),
    };
    let center_slice = &stack.slices[center];
    let centre = run_slice(center_slice, center, center_slice.roi_box, cfg);
    let anchor = match &centre.region {
        Some(r) => r.clone(),
        None => {
            return Err(Error::NoAnchor {
                index: center,
                reason: centre.error.unwrap_or_else(|| "no contour".into()),
            })
        }
    };

    let up = || sweep(stack, (0..center).rev(), &anchor, cfg);
    let down = || sweep(stack, center + 1..n, &anchor, cfg);
    let (mut a, b) = join(exec, up, down);
    a.push(centre);
    a.extend(b);
    a.sort_by_key(|o| o.index);
    Ok(a)
}

/// Every slice on its own manifest ROI, no propagation.
pub fn segment_slices_independently(stack: &SliceStack, cfg: &PipelineConfig) -> Vec<SliceOutcome> {
    stack
        .slices
        .iter()
        .enumerate()
        .map(|(i, s)| run_slice(s, i, s.roi_box, cfg))
        .collect()
}

fn join<A: Send, B: Send>(exec: Exec, a: impl FnOnce() -> A + Send, b: impl FnOnce() -> B + Send) -> (A, B) {
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return rayon::join(a, b);
    }
    let _ = exec;
    (a(), b())
}
