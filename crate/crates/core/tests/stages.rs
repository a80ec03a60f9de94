//! Worked examples for each pipeline stage, checked against independent
//! hand-built oracles.

use std::collections::{HashSet, VecDeque};
use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use nodseg::coarse::coarse_candidates;
use nodseg::fine::{
    find_dividing_line, reduce_surrounding_noise, removal_area_threshold, self_adapting_correct, StopReason,
};
use nodseg::io::{load_manifest, load_mask, parse_manifest, save_gray_image, save_mask, DiameterBin};
use nodseg::metrics::dsc;
use nodseg::morphology::{connected_components, rasterize_segment, Region, StructuringElement};
use nodseg::par::Exec;
use nodseg::phantom::{generate, PhantomKind, PhantomSpec};
use nodseg::pipeline::{plain_baseline, segment_loaded};
use nodseg::volume::{segment_slices_independently, segment_stack, SliceStack, StackSlice};
use nodseg::{BBox, BinaryMask, CoarseMethod, Error, GrayImage, PipelineConfig, Point};

fn rect(x0: usize, y0: usize, x1: usize, y1: usize) -> Vec<Point> {
    BBox::new(x0, y0, x1, y1).points().collect()
}

// ---------------------------------------------------------------- io

#[test]
fn manifest_with_one_solid_case_lands_in_middle_bin() {
    let dir = tempfile::tempdir().unwrap();
    save_gray_image(&GrayImage::filled(8, 8, 7).unwrap(), dir.path().join("s0.pgm")).unwrap();
    let text = r#"[{"case_id": "c1", "nodule_type": "solid", "diameter_mm": 12.0,
        "slices": [{"image_path": "s0.pgm", "roi_box": {"x0": 0, "y0": 0, "x1": 8, "y1": 8}}],
        "center_index": 0}]"#;
    let path = dir.path().join("manifest.json");
    fs::write(&path, text).unwrap();
    let cases = load_manifest(&path).unwrap();
    assert_eq!(cases.len(), 1);
    assert_eq!(cases[0].bin(), DiameterBin::Medium);
    assert_eq!(cases[0].load_slice(0).unwrap().get(3, 3), 7);
}

#[test]
fn manifest_rejects_unknown_type_and_oversized_box() {
    let dir = tempfile::tempdir().unwrap();
    save_gray_image(&GrayImage::filled(8, 8, 7).unwrap(), dir.path().join("s0.pgm")).unwrap();
    let case = |ty: &str, x1: usize| {
        format!(
            r#"[{{"case_id": "c1", "nodule_type": "{ty}", "diameter_mm": 5.0,
            "slices": [{{"image_path": "s0.pgm", "roi_box": {{"x0": 0, "y0": 0, "x1": {x1}, "y1": 8}}}}],
            "center_index": 0}}]"#
        )
    };
    let err = parse_manifest(&case("ggo", 8), dir.path()).unwrap_err().to_string();
    assert!(err.contains("unknown nodule_type"), "{err}");
    assert!(err.contains("c1"), "{err}");
    let err = parse_manifest(&case("pGGN", 9), dir.path()).unwrap_err();
    assert!(
        matches!(err, Error::Manifest { ref field, .. } if field.ends_with("roi_box")),
        "{err}"
    );
}

#[test]
fn saved_mask_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = BinaryMask::new(5, 3);
    for p in [(0, 0), (4, 2), (2, 1)] {
        m.set(p.0, p.1, true);
    }
    let path = dir.path().join("m.pgm");
    save_mask(&m, &path).unwrap();
    assert_eq!(load_mask(&path).unwrap(), m);
}

// ---------------------------------------------------------------- coarse

/// Independent erosion/dilation by a disk, out-of-raster = background.
fn naive_morph(mask: &HashSet<Point>, w: usize, h: usize, r: usize, erode: bool) -> HashSet<Point> {
    let r2 = (r * r) as isize;
    let ri = r as isize;
    let mut out = HashSet::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut hits = 0;
            let mut total = 0;
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if dx * dx + dy * dy > r2 {
                        continue;
                    }
                    total += 1;
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && mask.contains(&(nx as usize, ny as usize)) {
                        hits += 1;
                    }
                }
            }
            if (erode && hits == total) || (!erode && hits > 0) {
                out.insert((x as usize, y as usize));
            }
        }
    }
    out
}

#[test]
fn deformable_opening_strips_attached_line() {
    let (w, h) = (40, 32);
    let mut img = GrayImage::filled(w, h, 100).unwrap();
    let square = rect(8, 8, 20, 20);
    let line: Vec<Point> = (20..34).map(|x| (x, 14)).collect();
    for &(x, y) in square.iter().chain(&line) {
        img.set(x, y, 900);
    }
    let cfg = PipelineConfig {
        coarse_method: CoarseMethod::Deformable,
        ..PipelineConfig::default()
    };
    let got = coarse_candidates(&img, img.full_box(), &BinaryMask::like(&img), &cfg).unwrap();

    // oracle: two-level image, so Otsu keeps exactly the bright pixels;
    // close on a padded canvas, then open
    let r = cfg.se_radius;
    let pad = r + 1;
    let bright: HashSet<Point> = square.iter().chain(&line).map(|&(x, y)| (x + pad, y + pad)).collect();
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let closed = naive_morph(&naive_morph(&bright, pw, ph, r, false), pw, ph, r, true);
    let closed: HashSet<Point> = closed
        .into_iter()
        .filter(|&(x, y)| x >= pad && y >= pad && x < w + pad && y < h + pad)
        .map(|(x, y)| (x - pad, y - pad))
        .collect();
    let opened = naive_morph(&naive_morph(&closed, w, h, r, true), w, h, r, false);

    let got_set: HashSet<Point> = got.points().collect();
    assert_eq!(got_set, opened);
    assert!(line[4..].iter().all(|&(x, y)| !got.get(x, y)), "line survived opening");
    assert!(got.get(14, 14));
}

// ---------------------------------------------------------------- fine

/// 20×20 body, a 9-px neck column (chord length 8), then a blob.
fn body_with_appendage(blob_width: usize) -> (Region, Vec<Point>) {
    let mut pts = rect(1, 1, 21, 21);
    pts.extend((6..15).map(|y| (21, y)));
    let blob = rect(22, 5, 22 + blob_width, 15);
    pts.extend(&blob);
    (Region::from_points(pts), blob)
}

#[test]
fn appendage_of_70_pixels_is_removed_at_d8() {
    let (region, blob) = body_with_appendage(7);
    assert_eq!(blob.len(), 70);
    let cfg = PipelineConfig::default();
    let line = find_dividing_line(&region, &cfg).expect("neck qualifies");
    assert_eq!(line.length, 8.0);
    assert_eq!(line.removed.len(), 1);
    let removed: HashSet<Point> = line.removed[0].pixels().iter().copied().collect();
    assert_eq!(removed, blob.iter().copied().collect());
    let reduced = reduce_surrounding_noise(&region, &cfg);
    assert_eq!(reduced.area(), 400 + 9);
}

#[test]
fn appendage_of_50_pixels_is_kept_at_d8() {
    let (region, blob) = body_with_appendage(5);
    assert_eq!(blob.len(), 50);
    assert!(50.0 < removal_area_threshold(8.0));
    let cfg = PipelineConfig::default();
    assert!(find_dividing_line(&region, &cfg).is_none());
    assert_eq!(reduce_surrounding_noise(&region, &cfg), region);
}

fn raster_disk(cx: f64, cy: f64, r: f64, size: usize) -> Vec<Point> {
    (0..size)
        .flat_map(|y| (0..size).map(move |x| (x, y)))
        .filter(|&(x, y)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
        .collect()
}

fn pieces_after_removing(region: &HashSet<Point>, chord: &HashSet<Point>) -> Vec<usize> {
    let mut left: HashSet<Point> = region.difference(chord).copied().collect();
    let mut sizes = Vec::new();
    while let Some(&start) = left.iter().next() {
        left.remove(&start);
        let mut queue = VecDeque::from([start]);
        let mut n = 0;
        while let Some((x, y)) = queue.pop_front() {
            n += 1;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let q = ((x as isize + dx) as usize, (y as isize + dy) as usize);
                    if left.remove(&q) {
                        queue.push_back(q);
                    }
                }
            }
        }
        sizes.push(n);
    }
    sizes
}

#[test]
fn disk_has_no_qualifying_dividing_line() {
    let pts = raster_disk(10.0, 10.0, 5.0, 21);
    let region = Region::from_points(pts.clone());
    let set: HashSet<Point> = pts.iter().copied().collect();
    let cfg = PipelineConfig::default();
    // exhaustive oracle over every boundary pair within reach
    let boundary = region.boundary();
    for (i, &p) in boundary.iter().enumerate() {
        for &q in &boundary[i + 1..] {
            let d = ((p.0 as f64 - q.0 as f64).powi(2) + (p.1 as f64 - q.1 as f64).powi(2)).sqrt();
            if d > cfg.alpha {
                continue;
            }
            let chord: HashSet<Point> = rasterize_segment(p, q).into_iter().collect();
            if !chord.is_subset(&set) {
                continue;
            }
            let mut sizes = pieces_after_removing(&set, &chord);
            if sizes.len() < 2 {
                continue;
            }
            sizes.sort_unstable();
            // everything but the largest piece must be under the gate
            assert!(sizes[..sizes.len() - 1]
                .iter()
                .all(|&s| s as f64 <= removal_area_threshold(d)));
        }
    }
    assert!(find_dividing_line(&region, &cfg).is_none());
    assert_eq!(reduce_surrounding_noise(&region, &cfg), region);
}

fn noisy(truth: &[u16], w: usize, h: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 25.0).unwrap();
    let px = truth
        .iter()
        .map(|&v| (v as f64 + noise.sample(&mut rng)).round().clamp(0.0, 65535.0) as u16)
        .collect();
    GrayImage::new(w, h, px).unwrap()
}

#[test]
fn dominant_nodule_converges_at_entry() {
    let (w, h) = (20, 20);
    let mut truth = vec![200u16; w * h];
    for (x, y) in rect(2, 2, 18, 17) {
        truth[y * w + x] = 800;
    }
    let img = noisy(&truth, w, h, 3);
    let (region, trace) = self_adapting_correct(&img, img.full_box(), &PipelineConfig::default()).unwrap();
    assert_eq!(trace.stop_reason, StopReason::BoxConverged);
    assert_eq!(trace.shrink_passes, 0);
    assert_eq!(trace.iterations.len(), 1);
    assert!(region.area() as f64 / 400.0 >= 0.5);
}

#[test]
fn corner_nodule_box_shrinks_to_its_frame() {
    let (w, h) = (64, 64);
    let mut truth = vec![200u16; w * h];
    let nodule = rect(3, 3, 11, 11);
    for &(x, y) in &nodule {
        truth[y * w + x] = 800;
    }
    let gt = BinaryMask::from_points(w, h, nodule.iter().copied());
    let img = noisy(&truth, w, h, 11);
    let cfg = PipelineConfig::default();
    let (region, trace) = self_adapting_correct(&img, img.full_box(), &cfg).unwrap();
    // hand trace: the first pass finds the nodule (plus touching noise), the
    // box collapses from 4096 px to the nodule's frame, then the proportion
    // stop ends the loop
    assert!(trace.iterations.len() >= 2);
    assert!(trace.iterations[1].bbox.area() * 4 < 4096);
    let fin = trace.final_box();
    assert!(fin.contains_box(&BBox::new(3, 3, 11, 11)), "{fin:?}");
    assert!(fin.width() <= 12 && fin.height() <= 12, "{fin:?}");
    let ours = dsc(&region.to_mask(w, h), &gt).unwrap();
    let plain = plain_baseline(&img, img.full_box(), &cfg)
        .unwrap()
        .map_or(0.0, |r| dsc(&r.to_mask(w, h), &gt).unwrap());
    assert!(ours > plain, "self-adapting {ours} vs plain {plain}");
    assert!(ours > 0.9);
}

#[test]
fn ground_glass_halo_survives_the_shrink() {
    let p = generate(&PhantomSpec::new(7, PhantomKind::PureGgn, 20.0)).unwrap();
    let img = &p.images[0];
    let (region, trace) = self_adapting_correct(img, p.roi_box(), &PipelineConfig::default()).unwrap();
    assert_eq!(trace.stop_reason, StopReason::GgoEvenness);
    let mask = region.to_mask(64, 64);
    let recall = mask.and(&p.halo[0]).count() as f64 / p.halo[0].count() as f64;
    assert!(recall >= 0.9, "halo recall {recall}");

    let off = PipelineConfig {
        ggo_stop: false,
        ..PipelineConfig::default()
    };
    let (region, _) = self_adapting_correct(img, p.roi_box(), &off).unwrap();
    let recall = region.to_mask(64, 64).and(&p.halo[0]).count() as f64 / p.halo[0].count() as f64;
    assert!(recall < 0.6, "halo recall without the stop {recall}");
}

#[test]
fn traces_shrink_strictly_and_respect_the_cap() {
    for (i, kind) in PhantomKind::ALL.iter().enumerate() {
        for d in [6.0, 12.0, 24.0] {
            let p = generate(&PhantomSpec::new(100 + i as u64, *kind, d)).unwrap();
            let cfg = PipelineConfig::default();
            let Ok((region, trace)) = self_adapting_correct(&p.images[0], p.roi_box(), &cfg) else {
                continue;
            };
            assert!(trace.shrink_passes <= cfg.max_iterations);
            let areas: Vec<usize> = trace.iterations.iter().map(|s| s.bbox.area()).collect();
            assert!(areas.windows(2).all(|w| w[1] < w[0]), "{areas:?}");
            assert!(region.area() >= cfg.s_m);
        }
    }
}

// ---------------------------------------------------------------- volume

#[test]
fn single_slice_stack_matches_2d_pipeline() {
    let p = generate(&PhantomSpec::new(5, PhantomKind::Solid, 14.0)).unwrap();
    let cfg = PipelineConfig::default();
    let stacked = segment_stack(&p.stack(), &cfg, Exec::Sequential).unwrap();
    let (region, trace) = self_adapting_correct(&p.images[0], p.roi_box(), &cfg).unwrap();
    assert_eq!(stacked.len(), 1);
    assert_eq!(stacked[0].region.as_ref(), Some(&region));
    assert_eq!(stacked[0].trace.as_ref().unwrap().iterations, trace.iterations);
}

#[test]
fn ellipsoid_boxes_follow_the_cross_sections() {
    let p = generate(&PhantomSpec::new(21, PhantomKind::Solid, 20.0).with_slices(5)).unwrap();
    let cfg = PipelineConfig::default();
    let with = segment_stack(&p.stack(), &cfg, Exec::Sequential).unwrap();
    let without = segment_slices_independently(&p.stack(), &cfg);
    let gt_areas: Vec<usize> = p.gt.iter().map(BinaryMask::count).collect();
    assert!(gt_areas[0] < gt_areas[1] && gt_areas[1] < gt_areas[2]);
    assert!(gt_areas[4] < gt_areas[3] && gt_areas[3] < gt_areas[2]);
    for o in &with {
        assert!(p.roi_box().contains_box(&o.start_box));
    }
    assert!(with[0].start_box.area() < with[1].start_box.area());
    assert!(with[1].start_box.area() < with[2].start_box.area());
    let score = |o: &nodseg::volume::SliceOutcome, k: usize| dsc(&o.mask(64, 64), &p.gt[k]).unwrap();
    let top_with = (score(&with[0], 0) + score(&with[4], 4)) / 2.0;
    let top_without = (score(&without[0], 0) + score(&without[4], 4)) / 2.0;
    assert!(top_with > top_without, "{top_with} vs {top_without}");
}

#[test]
fn empty_top_slice_is_an_empty_result_not_an_error() {
    let p = generate(&PhantomSpec::new(9, PhantomKind::Solid, 16.0).with_slices(3)).unwrap();
    let mut stack: SliceStack = p.stack();
    stack.slices.push(StackSlice {
        image: GrayImage::filled(64, 64, 200).unwrap(),
        roi_box: p.roi_box(),
    });
    let out = segment_loaded(&stack, &PipelineConfig::default(), true, Exec::Parallel).unwrap();
    assert_eq!(out.len(), 4);
    assert!(out[3].region.is_none());
    assert!(out[3].error.is_some());
    assert!(out[1].region.is_some());
}

#[test]
fn stack_result_does_not_depend_on_execution_mode() {
    let p = generate(&PhantomSpec::new(33, PhantomKind::VesselAttached, 18.0).with_slices(5)).unwrap();
    let cfg = PipelineConfig::default();
    let a = segment_stack(&p.stack(), &cfg, Exec::Sequential).unwrap();
    let b = segment_stack(&p.stack(), &cfg, Exec::Parallel).unwrap();
    let masks = |v: &[nodseg::volume::SliceOutcome]| v.iter().map(|o| o.mask(64, 64)).collect::<Vec<_>>();
    assert_eq!(masks(&a), masks(&b));
}

#[test]
fn components_of_a_disk_are_one_region() {
    let pts = raster_disk(8.0, 8.0, 4.0, 17);
    let m = BinaryMask::from_points(17, 17, pts.iter().copied());
    let regions = connected_components(&m);
    assert_eq!(regions.len(), 1);
    assert_eq!(regions[0].area(), pts.len());
    assert_eq!(StructuringElement::disk(2).offsets().len(), 13);
}
