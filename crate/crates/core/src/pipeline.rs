//! End-to-end batch driver: wall removal, coarse and fine segmentation per
//! case, mask/trace output, and evaluation against ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use crate::coarse::coarse_regions;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fine::{reduce_surrounding_noise, CorrectionTrace};
use crate::io::{load_mask, save_mask, CaseManifest};
use crate::metrics::{build_report, dsc, nodule_dsc, CaseRecord, CaseScore, SliceScore, StratifiedReport};
use crate::morphology::Region;
use crate::par::{map_collect, with_jobs, Exec};
use crate::pleural::pleural_stage;
use crate::raster::{BBox, BinaryMask, GrayImage};
use crate::volume::{segment_slices_independently, segment_stack, SliceOutcome, SliceStack, StackSlice};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub cfg: PipelineConfig,
    pub dump_stages: bool,
    pub use_3d: bool,
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            cfg: PipelineConfig::default(),
            dump_stages: false,
            use_3d: true,
            jobs: 1,
        }
    }
}

/// Plain-thresholding baseline: wall removal, mean threshold on the ROI,
/// largest component above `s_m`. No noise reduction or box correction.
pub fn plain_baseline(img: &GrayImage, roi: BBox, cfg: &PipelineConfig) -> Result<Option<Region>> {
    let cfg = PipelineConfig {
        coarse_method: crate::config::CoarseMethod::PlainThreshold,
        ..cfg.clone()
    };
    let pleural = pleural_stage(img, roi, Exec::Sequential)?;
    let regions = coarse_regions(img, roi, &pleural.wall, &cfg)?;
    Ok(regions.into_iter().fold(None, |best: Option<Region>, r| match best {
        Some(b) if b.area() >= r.area() => Some(b),
        _ => Some(r),
    }))
}

/// Runs the 2D or 3D pipeline on a loaded stack.
pub fn segment_loaded(stack: &SliceStack, cfg: &PipelineConfig, use_3d: bool, exec: Exec) -> Result<Vec<SliceOutcome>> {
    if use_3d {
        segment_stack(stack, cfg, exec)
    } else {
        Ok(segment_slices_independently(stack, cfg))
    }
}

#[derive(Debug, Clone, Serialize)]
struct SliceTraceRecord<'a> {
    slice_index: usize,
    start_box: BBox,
    contour_area: usize,
    trace: Option<&'a CorrectionTrace>,
    error: Option<&'a str>,
}

#[derive(Debug, Clone, Serialize)]
struct CaseTraceRecord<'a> {
    case_id: &'a str,
    use_3d: bool,
    failure: Option<&'a str>,
    slices: Vec<SliceTraceRecord<'a>>,
}

pub fn load_stack(case: &CaseManifest) -> Result<SliceStack> {
    let slices = (0..case.slices.len())
        .map(|k| {
            Ok(StackSlice {
                image: case.load_slice(k)?,
                roi_box: case.slices[k].roi_box,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SliceStack {
        slices,
        center_index: Some(case.center_index),
    })
}

/// Segments one case and writes `pred_XX.pgm` masks plus `trace.json` into
/// `case_dir`. Segmentation failures become empty masks.
pub fn segment_case(case: &CaseManifest, case_dir: &Path, opts: &RunOptions, exec: Exec) -> Result<()> {
    let stack = load_stack(case)?;
    fs::create_dir_all(case_dir).map_err(|e| Error::io(case_dir, e))?;
    let (outcomes, failure) = match segment_loaded(&stack, &opts.cfg, opts.use_3d, exec) {
        Ok(o) => (o, None),
        Err(e) => {
            warn!("{}: {e}; recording empty predictions", case.case_id);
            let empty = stack
                .slices
                .iter()
                .enumerate()
                .map(|(i, s)| SliceOutcome {
                    index: i,
                    start_box: s.roi_box,
                    region: None,
                    trace: None,
                    error: Some(e.to_string()),
                })
                .collect();
            (empty, Some(e.to_string()))
        }
    };
    for (o, s) in outcomes.iter().zip(&stack.slices) {
        let mask = o.mask(s.image.width(), s.image.height());
        save_mask(&mask, case_dir.join(format!("pred_{:02}.pgm", o.index)))?;
        if opts.dump_stages {
            dump_stages(&s.image, o, &opts.cfg, &case_dir.join(format!("stages_{:02}", o.index)))?;
        }
    }
    let record = CaseTraceRecord {
        case_id: &case.case_id,
        use_3d: opts.use_3d,
        failure: failure.as_deref(),
        slices: outcomes
            .iter()
            .map(|o| SliceTraceRecord {
                slice_index: o.index,
                start_box: o.start_box,
                contour_area: o.region.as_ref().map_or(0, Region::area),
                trace: o.trace.as_ref(),
                error: o.error.as_deref(),
            })
            .collect(),
    };
    let path = case_dir.join("trace.json");
    let text = serde_json::to_string_pretty(&record).expect("trace serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn union_mask(width: usize, height: usize, regions: &[Region]) -> BinaryMask {
    BinaryMask::from_points(width, height, regions.iter().flat_map(|r| r.pixels().iter().copied()))
}

/// Writes the per-stage masks for one slice, in pipeline order.
fn dump_stages(img: &GrayImage, o: &SliceOutcome, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h) = (img.width(), img.height());
    let pleural = pleural_stage(img, o.start_box, Exec::Sequential)?;
    let coarse = coarse_regions(img, o.start_box, &pleural.wall, cfg)?;
    let denoised: Vec<Region> = coarse.iter().map(|r| reduce_surrounding_noise(r, cfg)).collect();
    save_mask(&pleural.binarized, dir.join("01_binarized.pgm"))?;
    save_mask(&pleural.kept, dir.join("02_wall_removed.pgm"))?;
    save_mask(&union_mask(w, h, &coarse), dir.join("03_coarse.pgm"))?;
    save_mask(&union_mask(w, h, &denoised), dir.join("04_denoised.pgm"))?;
    save_mask(&o.mask(w, h), dir.join("05_final.pgm"))?;
    let path = dir.join("trace.json");
    let text = serde_json::to_string_pretty(&o.trace).expect("trace serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Default)]
pub struct SegmentSummary {
    pub processed: usize,
    /// Cases whose inputs could not be read or outputs written.
    pub errors: Vec<(String, String)>,
}

/// Segments every case into `out_dir/<case_id>/`. Output bytes do not depend
/// on `opts.jobs`.
pub fn run_segment(cases: &[CaseManifest], out_dir: &Path, opts: &RunOptions) -> Result<SegmentSummary> {
    opts.cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results = with_jobs(opts.jobs.max(1), |exec| {
        map_collect(exec, cases, |case| {
            let dir = out_dir.join(&case.case_id);
            // slices inside a case stay sequential; cases are the parallel unit
            segment_case(case, &dir, opts, Exec::Sequential).map_err(|e| (case.case_id.clone(), e.to_string()))
        })
    });
    let mut summary = SegmentSummary::default();
    for r in results {
        match r {
            Ok(()) => summary.processed += 1,
            Err(e) => {
                warn!("{}: {}", e.0, e.1);
                summary.errors.push(e);
            }
        }
    }
    info!("segmented {} of {} cases", summary.processed, cases.len());
    Ok(summary)
}

pub fn pred_path(pred_dir: &Path, case_id: &str, slice: usize) -> PathBuf {
    pred_dir.join(case_id).join(format!("pred_{slice:02}.pgm"))
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: StratifiedReport,
    pub missing: Vec<PathBuf>,
}

/// Scores predictions in `pred_dir` against the manifest's ground truth.
/// Unlabeled cases are skipped; missing prediction files are collected.
pub fn run_eval(cases: &[CaseManifest], pred_dir: &Path, method: &str) -> Result<EvalOutcome> {
    let mut scores = Vec::new();
    let mut missing = Vec::new();
    for case in cases.iter().filter(|c| c.is_labeled()) {
        let gt = (0..case.slices.len())
            .map(|k| case.load_gt(k))
            .collect::<Result<Vec<_>>>()?;
        let mut preds = Vec::with_capacity(gt.len());
        let mut complete = true;
        for (k, g) in gt.iter().enumerate() {
            let path = pred_path(pred_dir, &case.case_id, k);
            match (g, path.exists()) {
                (Some(_), false) => {
                    missing.push(path);
                    complete = false;
                    preds.push(BinaryMask::new(0, 0));
                }
                (Some(_), true) => preds.push(load_mask(&path)?),
                (None, _) => preds.push(BinaryMask::new(0, 0)),
            }
        }
        if !complete {
            continue;
        }
        let record = CaseRecord {
            case_id: case.case_id.clone(),
            nodule_type: case.nodule_type,
            diameter_mm: case.diameter_mm,
            gt,
        };
        let volumetric = nodule_dsc(&record, &preds)?;
        let slices = record
            .gt
            .iter()
            .zip(&preds)
            .enumerate()
            .filter_map(|(k, (g, p))| g.as_ref().map(|g| (k, g, p)))
            .map(|(k, g, p)| dsc(p, g).map(|v| SliceScore { slice_index: k, dsc: v }))
            .collect::<Result<Vec<_>>>()?;
        scores.push(CaseScore {
            case_id: case.case_id.clone(),
            nodule_type: case.nodule_type,
            diameter_mm: case.diameter_mm,
            dsc: volumetric,
            slices,
        });
    }
    Ok(EvalOutcome {
        report: build_report(method, scores),
        missing,
    })
}
