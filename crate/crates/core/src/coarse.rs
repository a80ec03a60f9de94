//! Candidate-pixel selection and minimum-size filtering.

use crate::config::{CoarseMethod, PipelineConfig};
use crate::error::{Error, Result};
use crate::morphology::{
    binarize_above, binarize_mean, close, connected_components, open, otsu_threshold, Region, StructuringElement,
};
use crate::par::Exec;
use crate::pleural::pleural_stage;
use crate::raster::{BBox, BinaryMask, GrayImage};

/// Wall removal on `roi` followed by candidate selection on the same box.
pub fn coarse_segment(img: &GrayImage, roi: BBox, cfg: &PipelineConfig) -> Result<Vec<Region>> {
    let pleural = pleural_stage(img, roi, Exec::default())?;
    coarse_regions(img, roi, &pleural.wall, cfg)
}

/// Candidate mask inside `bbox`, with `wall` pixels excluded.
pub fn coarse_candidates(img: &GrayImage, bbox: BBox, wall: &BinaryMask, cfg: &PipelineConfig) -> Result<BinaryMask> {
    match cfg.coarse_method {
        CoarseMethod::PlainThreshold => Ok(binarize_mean(img, bbox)?.and_not(wall)),
        CoarseMethod::Deformable => {
            let binary = match otsu_threshold(img, bbox) {
                Ok(t) => binarize_above(img, bbox, t)?,
                Err(Error::Degenerate(_)) => binarize_mean(img, bbox)?,
                Err(e) => return Err(e),
            };
            let se = StructuringElement::disk(cfg.se_radius);
            let closed = close(&binary, &se).restrict_to(bbox);
            Ok(open(&closed.and_not(wall), &se))
        }
    }
}

/// Components of the candidate mask with area strictly above `s_m`.
pub fn coarse_regions(img: &GrayImage, bbox: BBox, wall: &BinaryMask, cfg: &PipelineConfig) -> Result<Vec<Region>> {
    let candidates = coarse_candidates(img, bbox, wall, cfg)?;
    Ok(size_filter(connected_components(&candidates), cfg.s_m))
}

pub fn size_filter(regions: Vec<Region>, s_m: usize) -> Vec<Region> {
    regions.into_iter().filter(|r| r.area() > s_m).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(img: &mut GrayImage, x0: usize, y0: usize, side: usize, v: u16) {
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                img.set(x, y, v);
            }
        }
    }

    #[test]
    fn plain_keeps_single_square() {
        let mut img = GrayImage::filled(16, 16, 10).unwrap();
        square(&mut img, 5, 5, 5, 200);
        let cfg = PipelineConfig::default();
        let regions = coarse_segment(&img, img.full_box(), &cfg).unwrap();
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].area(), 25);
    }

    #[test]
    fn plain_drops_small_blob() {
        let mut img = GrayImage::filled(16, 16, 10).unwrap();
        square(&mut img, 2, 2, 5, 200);
        square(&mut img, 12, 12, 2, 200);
        let cfg = PipelineConfig::default();
        let regions = coarse_segment(&img, img.full_box(), &cfg).unwrap();
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].area(), 25);
        assert!(regions.iter().all(|r| r.area() > cfg.s_m));
    }

    #[test]
    fn deformable_constant_roi_falls_back() {
        let img = GrayImage::filled(8, 8, 50).unwrap();
        let cfg = PipelineConfig {
            coarse_method: CoarseMethod::Deformable,
            ..Default::default()
        };
        assert!(coarse_segment(&img, img.full_box(), &cfg).unwrap().is_empty());
    }
}
