//! Dice overlap and stratified reporting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{DiameterBin, NoduleType};
use crate::raster::BinaryMask;

/// Dice similarity `2|P∩G| / (|P|+|G|)`; two empty masks score 1.
pub fn dsc(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch(
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height(),
        ));
    }
    let (i, p, g) = overlap_counts(pred, gt);
    Ok(dice_from_counts(i, p, g))
}

pub(crate) fn overlap_counts(pred: &BinaryMask, gt: &BinaryMask) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut p = 0;
    let mut g = 0;
    for (&a, &b) in pred.bits().iter().zip(gt.bits()) {
        p += a as usize;
        g += b as usize;
        inter += (a && b) as usize;
    }
    (inter, p, g)
}

fn dice_from_counts(inter: usize, p: usize, g: usize) -> f64 {
    if p + g == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + g) as f64
    }
}

/// Labels and per-slice ground truth of one nodule.
#[derive(Debug, Clone)]
pub struct CaseRecord {
    pub case_id: String,
    pub nodule_type: NoduleType,
    pub diameter_mm: f64,
    /// `None` marks an unlabeled slice.
    pub gt: Vec<Option<BinaryMask>>,
}

/// Volumetric Dice: overlap and sizes are summed over labeled slices first.
pub fn nodule_dsc(case: &CaseRecord, preds: &[BinaryMask]) -> Result<f64> {
    let (mut i, mut p, mut g) = (0, 0, 0);
    let mut labeled = 0;
    for (gt, pred) in case.gt.iter().zip(preds) {
        let Some(gt) = gt else { continue };
        if !pred.same_shape(gt) {
            return Err(Error::ShapeMismatch(
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height(),
            ));
        }
        let (a, b, c) = overlap_counts(pred, gt);
        i += a;
        p += b;
        g += c;
        labeled += 1;
    }
    if labeled == 0 {
        return Err(Error::NoLabels(case.case_id.clone()));
    }
    Ok(dice_from_counts(i, p, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceScore {
    pub slice_index: usize,
    pub dsc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub nodule_type: NoduleType,
    pub diameter_mm: f64,
    pub dsc: f64,
    pub slices: Vec<SliceScore>,
}

/// Mean DSC of one stratum; `None` renders as "n/a".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: Option<f64>,
    pub count: usize,
}

impl Cell {
    fn of<'a>(vals: impl Iterator<Item = &'a CaseScore>) -> Self {
        let (sum, count) = vals.fold((0.0, 0), |(s, n), c| (s + c.dsc, n + 1));
        Cell {
            mean: (count > 0).then(|| sum / count as f64),
            count,
        }
    }

    fn render(&self) -> String {
        self.mean.map_or_else(|| "n/a".to_string(), |m| format!("{m:.3}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub avg: Cell,
    pub solid: Cell,
    pub mggn: Cell,
    pub pggn: Cell,
    pub d_0_10: Cell,
    pub d_10_20: Cell,
    pub d_20_inf: Cell,
}

impl MethodRow {
    pub fn cells(&self) -> [&Cell; 7] {
        [
            &self.avg,
            &self.solid,
            &self.mggn,
            &self.pggn,
            &self.d_0_10,
            &self.d_10_20,
            &self.d_20_inf,
        ]
    }
}

pub const COLUMNS: [&str; 7] = ["Avg.", "Solid", "mGGN", "pGGN", "(0,10)", "[10,20)", "[20,inf)mm"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub rows: Vec<MethodRow>,
    pub cases: Vec<CaseScore>,
}

pub fn method_row(method: &str, cases: &[CaseScore]) -> MethodRow {
    let by_type = |t: NoduleType| Cell::of(cases.iter().filter(move |c| c.nodule_type == t));
    let by_bin = |b: DiameterBin| Cell::of(cases.iter().filter(move |c| DiameterBin::from_mm(c.diameter_mm) == b));
    MethodRow {
        method: method.to_string(),
        avg: Cell::of(cases.iter()),
        solid: by_type(NoduleType::Solid),
        mggn: by_type(NoduleType::MixedGgn),
        pggn: by_type(NoduleType::PureGgn),
        d_0_10: by_bin(DiameterBin::Small),
        d_10_20: by_bin(DiameterBin::Medium),
        d_20_inf: by_bin(DiameterBin::Large),
    }
}

pub fn build_report(method: &str, cases: Vec<CaseScore>) -> StratifiedReport {
    StratifiedReport {
        rows: vec![method_row(method, &cases)],
        cases,
    }
}

impl StratifiedReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let name_w = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
        let _ = write!(out, "{:<name_w$}", "Method");
        for c in COLUMNS {
            let _ = write!(out, " {c:>10}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<name_w$}", row.method);
            for cell in row.cells() {
                let _ = write!(out, " {:>10}", cell.render());
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(bits: &[u8]) -> BinaryMask {
        BinaryMask::from_bits(bits.len(), 1, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn dice_cases() {
        assert_eq!(dsc(&m(&[1, 1, 0]), &m(&[1, 1, 0])).unwrap(), 1.0);
        assert_eq!(dsc(&m(&[1, 0, 0]), &m(&[0, 0, 1])).unwrap(), 0.0);
        assert_eq!(dsc(&m(&[1, 1, 1, 1, 0, 0]), &m(&[0, 0, 1, 1, 1, 1])).unwrap(), 0.5);
        assert_eq!(dsc(&m(&[0, 0]), &m(&[0, 0])).unwrap(), 1.0);
        assert!(dsc(&m(&[0, 0]), &m(&[0])).is_err());
    }

    fn case(gt: Vec<Option<BinaryMask>>) -> CaseRecord {
        CaseRecord {
            case_id: "c".into(),
            nodule_type: NoduleType::Solid,
            diameter_mm: 12.0,
            gt,
        }
    }

    #[test]
    fn volumetric_dice() {
        let c = case(vec![Some(m(&[1, 1]))]);
        assert_eq!(
            nodule_dsc(&c, &[m(&[1, 0])]).unwrap(),
            dsc(&m(&[1, 0]), &m(&[1, 1])).unwrap()
        );

        let c = case(vec![Some(m(&[1, 1, 0, 0])), Some(m(&[1, 1, 0, 0]))]);
        let v = nodule_dsc(&c, &[m(&[1, 1, 0, 0]), m(&[0, 0, 1, 1])]).unwrap();
        assert_eq!(v, 0.5);

        let v = nodule_dsc(&c, &[m(&[0, 0, 0, 0]), m(&[0, 0, 0, 0])]).unwrap();
        assert_eq!(v, 0.0);

        let unlabeled = case(vec![None]);
        assert!(matches!(nodule_dsc(&unlabeled, &[m(&[0])]), Err(Error::NoLabels(_))));
    }

    fn score(id: &str, t: NoduleType, d: f64, dsc: f64) -> CaseScore {
        CaseScore {
            case_id: id.into(),
            nodule_type: t,
            diameter_mm: d,
            dsc,
            slices: vec![],
        }
    }

    #[test]
    fn single_case_report() {
        let r = build_report("ours", vec![score("a", NoduleType::Solid, 12.0, 0.7)]);
        let row = &r.rows[0];
        assert_eq!(row.avg.mean, Some(0.7));
        assert_eq!(row.solid.mean, Some(0.7));
        assert_eq!(row.d_10_20.mean, Some(0.7));
        assert_eq!(row.mggn.mean, None);
        assert_eq!(row.d_0_10.mean, None);
        let text = r.to_text();
        assert!(text.contains("n/a"));
        for c in COLUMNS {
            assert!(text.contains(c));
        }
    }

    #[test]
    fn stratum_mean_and_avg_over_cases() {
        let r = build_report(
            "ours",
            vec![
                score("a", NoduleType::Solid, 12.0, 0.6),
                score("b", NoduleType::Solid, 15.0, 0.8),
                score("c", NoduleType::PureGgn, 25.0, 0.1),
            ],
        );
        let row = &r.rows[0];
        assert!((row.solid.mean.unwrap() - 0.7).abs() < 1e-12);
        // case mean, not mean of strata means
        assert!((row.avg.mean.unwrap() - 0.5).abs() < 1e-12);
        let strata = row.solid.count + row.mggn.count + row.pggn.count;
        assert_eq!(strata, 3);
        assert_eq!(row.d_0_10.count + row.d_10_20.count + row.d_20_inf.count, 3);
    }
}
