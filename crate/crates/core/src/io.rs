//! PGM (P5) rasters and JSON case manifests.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BBox, BinaryMask, GrayImage};

struct PgmHeader {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn decode_err(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        offset,
        reason: reason.into(),
    }
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<PgmHeader> {
    if bytes.len() < 2 {
        return Err(decode_err(path, 0, "truncated magic"));
    }
    if &bytes[..2] != b"P5" {
        return Err(decode_err(path, 0, "unsupported magic"));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(decode_err(path, pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(decode_err(path, pos, "expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| decode_err(path, start, "number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(decode_err(path, pos, "expected whitespace after maxval")),
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(decode_err(path, 2, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(decode_err(path, pos - 1, format!("maxval {maxval} not in 1..=65535")));
    }
    Ok(PgmHeader {
        width: w as usize,
        height: h as usize,
        maxval: maxval as u32,
        data_offset: pos,
    })
}

/// Decodes a binary PGM held in memory. `path` is only used in error messages.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let hdr = parse_header(bytes, path)?;
    let n = hdr.width * hdr.height;
    let bps = if hdr.maxval > 255 { 2 } else { 1 };
    let payload = &bytes[hdr.data_offset..];
    if payload.len() < n * bps {
        return Err(decode_err(
            path,
            bytes.len(),
            format!("truncated payload: need {} bytes, have {}", n * bps, payload.len()),
        ));
    }
    let pixels: Vec<u16> = if bps == 1 {
        payload[..n].iter().map(|&b| b as u16).collect()
    } else {
        payload[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(i) = pixels.iter().position(|&p| p as u32 > hdr.maxval) {
        return Err(decode_err(path, hdr.data_offset + i * bps, "sample exceeds maxval"));
    }
    GrayImage::new(hdr.width, hdr.height, pixels)
}

/// Encodes `img` as P5. Uses 8-bit samples when every pixel fits in a byte,
/// otherwise 16-bit big-endian with maxval 65535.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let wide = img.pixels().iter().any(|&p| p > 255);
    let maxval = if wide { 65535 } else { 255 };
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    if wide {
        for &p in img.pixels() {
            out.extend_from_slice(&p.to_be_bytes());
        }
    } else {
        out.extend(img.pixels().iter().map(|&p| p as u8));
    }
    out
}

pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

pub fn load_gray_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn save_gray_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Writes an 8-bit P5 with foreground 255 and background 0.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}

/// Loads a mask PGM; samples `>= 128` (scaled to 8 bits) are foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = load_gray_image(path)?;
    Ok(threshold_mask(&img))
}

pub fn threshold_mask(img: &GrayImage) -> BinaryMask {
    let wide = img.pixels().iter().any(|&p| p > 255);
    let cut = if wide { 128 * 257 } else { 128 };
    let bits = img.pixels().iter().map(|&p| p >= cut).collect();
    BinaryMask::from_bits(img.width(), img.height(), bits).expect("same shape")
}

fn read_dims(path: &Path) -> Result<(usize, usize)> {
    use std::io::Read;
    let mut buf = Vec::with_capacity(512);
    fs::File::open(path)
        .and_then(|f| f.take(512).read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let hdr = parse_header(&buf, path)?;
    Ok((hdr.width, hdr.height))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoduleType {
    #[serde(rename = "solid")]
    Solid,
    #[serde(rename = "mGGN")]
    MixedGgn,
    #[serde(rename = "pGGN")]
    PureGgn,
}

impl NoduleType {
    pub const ALL: [NoduleType; 3] = [NoduleType::Solid, NoduleType::MixedGgn, NoduleType::PureGgn];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "solid" => Some(Self::Solid),
            "mGGN" => Some(Self::MixedGgn),
            "pGGN" => Some(Self::PureGgn),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Solid => "Solid",
            Self::MixedGgn => "mGGN",
            Self::PureGgn => "pGGN",
        }
    }
}

/// Diameter strata: (0,10), [10,20), [20,inf) mm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiameterBin {
    Small,
    Medium,
    Large,
}

impl DiameterBin {
    pub const ALL: [DiameterBin; 3] = [DiameterBin::Small, DiameterBin::Medium, DiameterBin::Large];

    pub fn from_mm(d: f64) -> Self {
        if d < 10.0 {
            Self::Small
        } else if d < 20.0 {
            Self::Medium
        } else {
            Self::Large
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Small => "(0,10)",
            Self::Medium => "[10,20)",
            Self::Large => "[20,inf)mm",
        }
    }
}

impl fmt::Display for DiameterBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub image_path: String,
    pub roi_box: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub case_id: String,
    pub nodule_type: NoduleType,
    pub diameter_mm: f64,
    pub slices: Vec<SliceEntry>,
    pub center_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_mm: Option<(f64, f64)>,
    /// Directory that relative slice paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl CaseManifest {
    pub fn bin(&self) -> DiameterBin {
        DiameterBin::from_mm(self.diameter_mm)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn is_labeled(&self) -> bool {
        self.slices.iter().any(|s| s.gt_mask_path.is_some())
    }

    pub fn load_slice(&self, index: usize) -> Result<GrayImage> {
        let img = load_gray_image(self.resolve(&self.slices[index].image_path))?;
        match self.spacing_mm {
            Some((dx, dy)) => img.with_spacing(dx, dy),
            None => Ok(img),
        }
    }

    pub fn load_gt(&self, index: usize) -> Result<Option<BinaryMask>> {
        self.slices[index]
            .gt_mask_path
            .as_deref()
            .map(|p| load_mask(self.resolve(p)))
            .transpose()
    }
}

// Loose mirror of the schema so validation can name the offending field.
#[derive(Deserialize)]
struct RawCase {
    case_id: Option<String>,
    nodule_type: Option<String>,
    diameter_mm: Option<f64>,
    slices: Option<Vec<RawSlice>>,
    center_index: Option<usize>,
    spacing_mm: Option<(f64, f64)>,
}

#[derive(Deserialize)]
struct RawSlice {
    image_path: Option<String>,
    roi_box: Option<BBox>,
    gt_mask_path: Option<String>,
}

fn field_err(case_id: &str, field: &str, reason: impl Into<String>) -> Error {
    Error::Manifest {
        case_id: case_id.to_string(),
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Parses and eagerly validates a manifest; image headers are read to check ROI bounds.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<CaseManifest>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &base_dir)
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<CaseManifest>> {
    let raw: Vec<RawCase> = serde_json::from_str(text).map_err(|e| field_err("?", "<root>", e.to_string()))?;
    raw.into_iter()
        .enumerate()
        .map(|(i, rc)| validate_case(rc, i, base_dir))
        .collect()
}

fn validate_case(rc: RawCase, index: usize, base_dir: &Path) -> Result<CaseManifest> {
    let case_id = rc
        .case_id
        .ok_or_else(|| field_err(&format!("#{index}"), "case_id", "missing field"))?;
    let id = case_id.as_str();
    let type_str = rc
        .nodule_type
        .ok_or_else(|| field_err(id, "nodule_type", "missing field"))?;
    let nodule_type = NoduleType::parse(&type_str)
        .ok_or_else(|| field_err(id, "nodule_type", format!("unknown nodule_type '{type_str}'")))?;
    let diameter_mm = rc
        .diameter_mm
        .ok_or_else(|| field_err(id, "diameter_mm", "missing field"))?;
    if !(diameter_mm > 0.0 && diameter_mm.is_finite()) {
        return Err(field_err(id, "diameter_mm", "must be a positive number"));
    }
    if let Some((dx, dy)) = rc.spacing_mm {
        if !(dx > 0.0 && dy > 0.0) {
            return Err(field_err(id, "spacing_mm", "entries must be > 0"));
        }
    }
    let raw_slices = rc.slices.ok_or_else(|| field_err(id, "slices", "missing field"))?;
    if raw_slices.is_empty() {
        return Err(field_err(id, "slices", "must be nonempty"));
    }
    let center_index = rc
        .center_index
        .ok_or_else(|| field_err(id, "center_index", "missing field"))?;
    if center_index >= raw_slices.len() {
        return Err(field_err(
            id,
            "center_index",
            format!("{center_index} out of range for {} slices", raw_slices.len()),
        ));
    }
    let mut slices = Vec::with_capacity(raw_slices.len());
    for (k, rs) in raw_slices.into_iter().enumerate() {
        let image_path = rs
            .image_path
            .ok_or_else(|| field_err(id, &format!("slices[{k}].image_path"), "missing field"))?;
        let roi_box = rs
            .roi_box
            .ok_or_else(|| field_err(id, &format!("slices[{k}].roi_box"), "missing field"))?;
        let (w, h) = read_dims(&base_dir.join(&image_path))?;
        if roi_box.is_empty() || roi_box.x1 > w || roi_box.y1 > h {
            return Err(field_err(
                id,
                &format!("slices[{k}].roi_box"),
                format!("{roi_box:?} does not fit a {w}x{h} image"),
            ));
        }
        slices.push(SliceEntry {
            image_path,
            roi_box,
            gt_mask_path: rs.gt_mask_path,
        });
    }
    Ok(CaseManifest {
        case_id,
        nodule_type,
        diameter_mm,
        slices,
        center_index,
        spacing_mm: rc.spacing_mm,
        base_dir: base_dir.to_path_buf(),
    })
}

pub fn save_manifest(cases: &[CaseManifest], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(cases).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
