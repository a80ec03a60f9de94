//! Deterministic synthetic nodule ROIs with exact ground truth.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{save_gray_image, save_manifest, save_mask, CaseManifest, DiameterBin, NoduleType, SliceEntry};
use crate::morphology::rasterize_segment;
use crate::raster::{BBox, BinaryMask, GrayImage};
use crate::volume::{SliceStack, StackSlice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Solid,
    #[serde(rename = "mGGN")]
    MixedGgn,
    #[serde(rename = "pGGN")]
    PureGgn,
    Juxtapleural,
    VesselAttached,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 5] = [
        PhantomKind::Solid,
        PhantomKind::MixedGgn,
        PhantomKind::PureGgn,
        PhantomKind::Juxtapleural,
        PhantomKind::VesselAttached,
    ];

    pub fn nodule_type(self) -> NoduleType {
        match self {
            PhantomKind::MixedGgn => NoduleType::MixedGgn,
            PhantomKind::PureGgn => NoduleType::PureGgn,
            _ => NoduleType::Solid,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PhantomKind::Solid => "solid",
            PhantomKind::MixedGgn => "mGGN",
            PhantomKind::PureGgn => "pGGN",
            PhantomKind::Juxtapleural => "juxtapleural",
            PhantomKind::VesselAttached => "vessel_attached",
        }
    }
}

/// Mean intensities of each tissue class plus background noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityModel {
    pub background_mean: f64,
    pub background_sigma: f64,
    pub halo_mean: f64,
    /// Denser inner ground-glass of pure GGNs; below any solid tissue.
    pub dense_ggo_mean: f64,
    pub wall_mean: f64,
    pub vessel_mean: f64,
    pub solid_mean: f64,
}

impl Default for IntensityModel {
    fn default() -> Self {
        Self {
            background_mean: 200.0,
            background_sigma: 25.0,
            halo_mean: 350.0,
            dense_ggo_mean: 600.0,
            wall_mean: 700.0,
            vessel_mean: 700.0,
            solid_mean: 800.0,
        }
    }
}

impl IntensityModel {
    fn class_means(&self) -> Vec<f64> {
        let mut v = vec![
            self.background_mean,
            self.halo_mean,
            self.dense_ggo_mean,
            self.wall_mean,
            self.solid_mean,
        ];
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn smallest_gap(&self) -> f64 {
        self.class_means()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub kind: PhantomKind,
    /// Equatorial (full lesion) diameter in pixels.
    pub nodule_diameter_px: f64,
    pub box_size: usize,
    pub n_slices: usize,
    pub intensity: IntensityModel,
    /// Minor/major axis ratio of the in-plane ellipse.
    pub aspect: f64,
    pub spacing_mm: f64,
    /// Inner radius over outer radius for the two GGN kinds.
    pub mixed_core_ratio: f64,
    pub pure_core_ratio: f64,
    /// Wall depth at the nodule, as a fraction of the box.
    pub wall_fraction: f64,
}

const DEFAULT_WALL_FRACTION: f64 = 0.45;

impl PhantomSpec {
    pub fn new(seed: u64, kind: PhantomKind, nodule_diameter_px: f64) -> Self {
        Self {
            seed,
            kind,
            nodule_diameter_px,
            box_size: 64,
            n_slices: 1,
            intensity: IntensityModel::default(),
            aspect: 1.0,
            spacing_mm: 0.7,
            mixed_core_ratio: 0.5,
            pure_core_ratio: 0.7,
            wall_fraction: DEFAULT_WALL_FRACTION,
        }
    }

    pub fn with_slices(mut self, n: usize) -> Self {
        self.n_slices = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("phantom: {m}")));
        let im = &self.intensity;
        if !(im.solid_mean > im.halo_mean && im.halo_mean > im.background_mean) {
            return bad("intensities must satisfy solid > halo > background".into());
        }
        if im.background_sigma > 0.25 * im.smallest_gap() {
            return bad(format!(
                "noise sigma {} exceeds a quarter of the smallest class gap {}",
                im.background_sigma,
                im.smallest_gap()
            ));
        }
        if !(self.nodule_diameter_px > 0.0 && self.nodule_diameter_px < self.box_size as f64) {
            return bad(format!(
                "diameter {} must be in (0, {})",
                self.nodule_diameter_px, self.box_size
            ));
        }
        if self.kind == PhantomKind::Juxtapleural {
            let wall = (self.wall_fraction * self.box_size as f64).round();
            if wall + self.nodule_diameter_px + 4.0 > self.box_size as f64 {
                return bad("nodule does not fit above the wall".into());
            }
        }
        if self.n_slices == 0 {
            return bad("n_slices must be >= 1".into());
        }
        if !(self.aspect > 0.0 && self.aspect <= 1.0) {
            return bad("aspect must be in (0, 1]".into());
        }
        Ok(())
    }

    pub fn diameter_mm(&self) -> f64 {
        self.nodule_diameter_px * self.spacing_mm
    }
}

/// Rendered slices with per-class ground truth.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub images: Vec<GrayImage>,
    /// Nodule ground truth, halo included.
    pub gt: Vec<BinaryMask>,
    /// Ground-glass shell only (empty for non-GGN kinds).
    pub halo: Vec<BinaryMask>,
    /// Lung wall not overlapped by the nodule (empty unless juxtapleural).
    pub wall: Vec<BinaryMask>,
    pub center_index: usize,
}

impl Phantom {
    pub fn roi_box(&self) -> BBox {
        BBox::new(0, 0, self.spec.box_size, self.spec.box_size)
    }

    pub fn stack(&self) -> SliceStack {
        SliceStack {
            slices: self
                .images
                .iter()
                .map(|img| StackSlice {
                    image: img.clone(),
                    roi_box: self.roi_box(),
                })
                .collect(),
            center_index: Some(self.center_index),
        }
    }

    /// Writes slices and masks under `dir` and returns the manifest entry,
    /// with paths prefixed by `rel` (the location of `dir` relative to the
    /// manifest).
    pub fn write(&self, dir: &Path, rel: &str, case_id: &str) -> Result<CaseManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut slices = Vec::new();
        for (k, (img, gt)) in self.images.iter().zip(&self.gt).enumerate() {
            let image_name = format!("slice_{k:02}.pgm");
            let gt_name = format!("gt_{k:02}.pgm");
            save_gray_image(img, dir.join(&image_name))?;
            save_mask(gt, dir.join(&gt_name))?;
            slices.push(SliceEntry {
                image_path: join_rel(rel, &image_name),
                roi_box: self.roi_box(),
                gt_mask_path: Some(join_rel(rel, &gt_name)),
            });
        }
        Ok(CaseManifest {
            case_id: case_id.to_string(),
            nodule_type: self.spec.kind.nodule_type(),
            diameter_mm: self.spec.diameter_mm(),
            slices,
            center_index: self.center_index,
            spacing_mm: Some((self.spec.spacing_mm, self.spec.spacing_mm)),
            base_dir: dir.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }
}

fn join_rel(rel: &str, name: &str) -> String {
    if rel.is_empty() {
        name.to_string()
    } else {
        format!("{rel}/{name}")
    }
}

/// splitmix64 finaliser, used to derive independent per-case seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
}

impl Ellipse {
    fn contains(&self, x: usize, y: usize, scale: f64) -> bool {
        if scale <= 0.0 {
            return false;
        }
        let u = (x as f64 - self.cx) / (self.a * scale);
        let v = (y as f64 - self.cy) / (self.b * scale);
        u * u + v * v <= 1.0
    }
}

/// Wall occupying the band below a gently curved surface along the bottom
/// edge (after rotation to `side`). The surface bulges away from the lung,
/// so the lung side is convex.
struct Wall {
    side: u8,
    size: usize,
    depth: f64,
    centre: f64,
    curvature_radius: f64,
}

impl Wall {
    /// Maps image coordinates to (along-edge, depth-from-edge).
    fn local(&self, x: usize, y: usize) -> (f64, f64) {
        let s = self.size as f64 - 1.0;
        let (x, y) = (x as f64, y as f64);
        match self.side {
            0 => (x, s - y),
            1 => (y, x),
            2 => (s - x, y),
            _ => (s - y, s - x),
        }
    }

    fn to_image(&self, u: f64, v: f64) -> (f64, f64) {
        let s = self.size as f64 - 1.0;
        match self.side {
            0 => (u, s - v),
            1 => (v, u),
            2 => (s - u, v),
            _ => (s - v, s - u),
        }
    }

    fn surface(&self, u: f64) -> f64 {
        let du = u - self.centre;
        self.depth + du * du / (2.0 * self.curvature_radius)
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        let (u, v) = self.local(x, y);
        v < self.surface(u)
    }
}

/// Renders one phantom. Identical specs give identical output.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let size = spec.box_size;
    let im = &spec.intensity;
    let r = spec.nodule_diameter_px / 2.0;
    let (a, b) = if rng.gen_bool(0.5) {
        (r, r * spec.aspect)
    } else {
        (r * spec.aspect, r)
    };

    let mut wall = None;
    let (cx, cy) = if spec.kind == PhantomKind::Juxtapleural {
        let side = rng.gen_range(0..4u8);
        let depth = (spec.wall_fraction * size as f64).round();
        let centre = rng.gen_range(size as f64 * 0.4..size as f64 * 0.6);
        let w = Wall {
            side,
            size,
            depth,
            centre,
            curvature_radius: 1.5 * size as f64,
        };
        // sink the nodule half a pixel into the wall so the two touch
        let extent = if side % 2 == 0 { b } else { a };
        let c = w.to_image(centre, depth + extent - 0.5);
        wall = Some(w);
        c
    } else {
        // ROIs come from a detector, so the lesion sits near the middle
        let mid = (size as f64 - 1.0) / 2.0;
        let jitter = 0.1 * size as f64;
        let place = |rng: &mut ChaCha8Rng, half: f64| {
            let lo = (mid - jitter).max(half + 2.0);
            let hi = (mid + jitter).min(size as f64 - 3.0 - half).max(lo);
            rng.gen_range(lo..=hi)
        };
        (place(&mut rng, a), place(&mut rng, b))
    };
    let nodule = Ellipse { cx, cy, a, b };

    let vessels = if spec.kind == PhantomKind::VesselAttached {
        let count = rng.gen_range(1..=2);
        (0..count)
            .map(|_| {
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let len: f64 = rng.gen_range(0.25..0.45) * size as f64;
                let start = (cx + a * 0.9 * theta.cos(), cy + b * 0.9 * theta.sin());
                let end = (cx + (a + len) * theta.cos(), cy + (b + len) * theta.sin());
                let clamp = |v: f64| v.round().clamp(0.0, size as f64 - 1.0) as usize;
                let width = rng.gen_range(1..=2usize);
                ((clamp(start.0), clamp(start.1)), (clamp(end.0), clamp(end.1)), width)
            })
            .collect()
    } else {
        Vec::new()
    };

    let noise = Normal::new(0.0, im.background_sigma.max(0.0)).expect("finite sigma");
    let centre_slice = spec.n_slices / 2;
    let half_depth = spec.n_slices as f64 / 2.0;
    let core_ratio = match spec.kind {
        PhantomKind::MixedGgn => Some((spec.mixed_core_ratio, im.solid_mean)),
        PhantomKind::PureGgn => Some((spec.pure_core_ratio, im.dense_ggo_mean)),
        _ => None,
    };

    let mut images = Vec::new();
    let mut gts = Vec::new();
    let mut halos = Vec::new();
    let mut walls = Vec::new();
    for k in 0..spec.n_slices {
        let scale = if spec.n_slices == 1 {
            1.0
        } else {
            let z = k as f64 - centre_slice as f64;
            (1.0 - (z / half_depth).powi(2)).max(0.0).sqrt()
        };
        let mut truth = vec![im.background_mean; size * size];
        let mut gt = BinaryMask::new(size, size);
        let mut halo = BinaryMask::new(size, size);
        let mut wall_gt = BinaryMask::new(size, size);

        if let Some(w) = &wall {
            for y in 0..size {
                for x in 0..size {
                    if w.contains(x, y) {
                        truth[y * size + x] = im.wall_mean;
                        wall_gt.set(x, y, true);
                    }
                }
            }
        }
        for &(p, q, width) in &vessels {
            for (x, y) in rasterize_segment(p, q) {
                for (dx, dy) in [(0usize, 0usize), (1, 0), (0, 1)]
                    .iter()
                    .take(if width > 1 { 3 } else { 1 })
                {
                    let (vx, vy) = (x + dx, y + dy);
                    if vx < size && vy < size {
                        truth[vy * size + vx] = im.vessel_mean;
                    }
                }
            }
        }
        for y in 0..size {
            for x in 0..size {
                if !nodule.contains(x, y, scale) {
                    continue;
                }
                gt.set(x, y, true);
                wall_gt.set(x, y, false);
                let v = match core_ratio {
                    None => im.solid_mean,
                    Some((ratio, core_mean)) => {
                        if nodule.contains(x, y, scale * ratio) {
                            core_mean
                        } else {
                            halo.set(x, y, true);
                            im.halo_mean
                        }
                    }
                };
                truth[y * size + x] = v;
            }
        }

        let pixels = truth
            .iter()
            .map(|&m| (m + noise.sample(&mut rng)).round().clamp(0.0, 65535.0) as u16)
            .collect();
        images.push(GrayImage::new(size, size, pixels)?.with_spacing(spec.spacing_mm, spec.spacing_mm)?);
        gts.push(gt);
        halos.push(halo);
        walls.push(wall_gt);
    }

    Ok(Phantom {
        spec: spec.clone(),
        images,
        gt: gts,
        halo: halos,
        wall: walls,
        center_index: centre_slice,
    })
}

/// Diameter range in pixels for a stratum at the given spacing; capped so
/// the lesion fits the box.
pub fn diameter_range_px(bin: DiameterBin, spacing_mm: f64, box_size: usize) -> (f64, f64) {
    let cap = box_size as f64 * 0.55;
    let (lo, hi) = match bin {
        DiameterBin::Small => (5.0, 9.9),
        DiameterBin::Medium => (10.0, 19.9),
        DiameterBin::Large => (20.0, 40.0),
    };
    ((lo / spacing_mm).min(cap), (hi / spacing_mm).min(cap))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub box_size: usize,
    pub n_slices: usize,
    pub spacing_mm: f64,
    pub intensity: IntensityModel,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            box_size: 64,
            n_slices: 5,
            spacing_mm: 0.7,
            intensity: IntensityModel::default(),
        }
    }
}

/// Spec of case `index` in a suite: kinds cycle fastest, then diameter bins,
/// so any 15 consecutive cases cover every (kind, bin) cell.
pub fn suite_case_spec(seed: u64, index: usize, opts: &SuiteOptions) -> PhantomSpec {
    let kind = PhantomKind::ALL[index % PhantomKind::ALL.len()];
    let bin = DiameterBin::ALL[(index / PhantomKind::ALL.len()) % DiameterBin::ALL.len()];
    let case_seed = mix_seed(seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let (lo, mut hi) = diameter_range_px(bin, opts.spacing_mm, opts.box_size);
    if kind == PhantomKind::Juxtapleural {
        let room = opts.box_size as f64 * (1.0 - DEFAULT_WALL_FRACTION) - 5.0;
        hi = hi.min(room);
    }
    let d = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    PhantomSpec {
        box_size: opts.box_size,
        n_slices: opts.n_slices,
        intensity: opts.intensity.clone(),
        aspect: rng.gen_range(0.85..=1.0),
        spacing_mm: opts.spacing_mm,
        ..PhantomSpec::new(rng.gen(), kind, d)
    }
}

pub fn case_id(index: usize) -> String {
    format!("case_{index:03}")
}

/// Writes `n` phantom cases plus `manifest.json` into `out_dir`.
pub fn generate_suite(seed: u64, n: usize, out_dir: &Path, opts: &SuiteOptions) -> Result<Vec<CaseManifest>> {
    if n == 0 {
        return Err(Error::Config("suite size must be >= 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut cases = Vec::with_capacity(n);
    for i in 0..n {
        let spec = suite_case_spec(seed, i, opts);
        let phantom = generate(&spec)?;
        let id = case_id(i);
        let mut m = phantom.write(&out_dir.join(&id), &id, &id)?;
        m.base_dir = out_dir.to_path_buf();
        cases.push(m);
    }
    save_manifest(&cases, out_dir.join("manifest.json"))?;
    Ok(cases)
}
