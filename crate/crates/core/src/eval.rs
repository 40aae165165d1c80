//! Detection extraction, matching, detection and pixel metrics, and assay
//! statistics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::image::{connected_components, otsu_threshold, BBox, BinaryMask, Connectivity, Image};
use crate::imageio::write_atomic;

/// Default minimum blob size in pixels; smaller components are dropped.
pub const MIN_BLOB: usize = 300;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
const OTSU_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub area: usize,
    /// (row, col)
    pub centroid: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Detections {
    pub items: Vec<Detection>,
    /// Set when the output had no Otsu split (constant image).
    pub degenerate: bool,
    /// Foreground mask before the size filter.
    pub mask: Option<BinaryMask>,
}

/// Otsu-binarizes `out`, labels 8-connected blobs and keeps those with at
/// least `min_blob` pixels.
pub fn detections_from_output(out: &Image, min_blob: usize) -> Detections {
    let t = match otsu_threshold(out, OTSU_BINS) {
        Ok(t) => t,
        Err(_) => {
            return Detections {
                items: Vec::new(),
                degenerate: true,
                mask: Some(BinaryMask::new(out.height(), out.width())),
            }
        }
    };
    let mask = out.threshold(t);
    let items = connected_components(&mask, Connectivity::Eight)
        .stats()
        .into_iter()
        .filter(|s| s.area >= min_blob)
        .map(|s| Detection {
            bbox: s.bbox,
            area: s.area,
            centroid: s.centroid,
        })
        .collect();
    Detections {
        items,
        degenerate: false,
        mask: Some(mask),
    }
}

/// Ground truth for matching.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Boxes(Vec<BBox>),
    /// (row, col) object centers.
    Points(Vec<(f64, f64)>),
}

impl Truth {
    pub fn len(&self) -> usize {
        match self {
            Truth::Boxes(b) => b.len(),
            Truth::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// (prediction index, truth index)
    pub matches: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

impl Assignment {
    pub fn tp(&self) -> usize {
        self.matches.len()
    }
}

/// Candidate pairs with their scores. Box truth pairs need IoU at least
/// `iou_threshold` and score by IoU; point truth pairs need the point inside
/// the predicted box and score by negative squared centroid distance.
pub fn candidate_pairs(preds: &[BBox], centroids: &[(f64, f64)], truth: &Truth, iou_threshold: f64) -> Vec<(f64, usize, usize)> {
    let mut pairs = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        match truth {
            Truth::Boxes(boxes) => {
                for (j, b) in boxes.iter().enumerate() {
                    let iou = p.iou(b);
                    if iou >= iou_threshold && iou > 0.0 {
                        pairs.push((iou, i, j));
                    }
                }
            }
            Truth::Points(points) => {
                for (j, &(r, c)) in points.iter().enumerate() {
                    if p.contains_point(r, c) {
                        let (cr, cc) = centroids[i];
                        pairs.push((-((cr - r).powi(2) + (cc - c).powi(2)), i, j));
                    }
                }
            }
        }
    }
    pairs
}

/// Greedy one-to-one matching in descending score order, ties broken by
/// prediction then truth index.
pub fn match_detections(preds: &[Detection], truth: &Truth, iou_threshold: f64) -> Assignment {
    let boxes: Vec<BBox> = preds.iter().map(|d| d.bbox).collect();
    let centroids: Vec<(f64, f64)> = preds.iter().map(|d| d.centroid).collect();
    let mut pairs = candidate_pairs(&boxes, &centroids, truth, iou_threshold);
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; preds.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut out = Assignment::default();
    for (_, i, j) in pairs {
        if !pred_used[i] && !truth_used[j] {
            pred_used[i] = true;
            truth_used[j] = true;
            out.matches.push((i, j));
        }
    }
    out.matches.sort_unstable();
    out.false_positives = (0..preds.len()).filter(|&i| !pred_used[i]).collect();
    out.false_negatives = (0..truth.len()).filter(|&j| !truth_used[j]).collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Prf1 {
    /// Empty prediction set: precision 1 if truth is empty too, else 0.
    /// Empty truth: recall 1.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 {
            if fn_ == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

pub fn prf1(a: &Assignment) -> Prf1 {
    Prf1::from_counts(a.tp(), a.false_positives.len(), a.false_negatives.len())
}

/// `|A and B| / |A or B|`, 1 when both are empty.
pub fn image_iou(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    crate::image::check_dims(pred.dims(), truth.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.bits().iter().zip(truth.bits()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Detection and pixel metrics for one image or pooled over many.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean per-image IoU.
    pub iou: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub images: usize,
    /// Outputs with no Otsu split.
    pub degenerate: usize,
}

impl MetricsReport {
    pub fn single(a: &Assignment, iou: f64, degenerate: bool) -> Self {
        let p = prf1(a);
        Self {
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            iou,
            tp: p.tp,
            fp: p.fp,
            fn_: p.fn_,
            images: 1,
            degenerate: degenerate as usize,
        }
    }

    /// Pools detection counts and averages IoU over images.
    pub fn aggregate(reports: &[MetricsReport]) -> Self {
        let (tp, fp, fn_) = reports
            .iter()
            .fold((0, 0, 0), |(a, b, c), r| (a + r.tp, b + r.fp, c + r.fn_));
        let images: usize = reports.iter().map(|r| r.images).sum();
        let iou = if images == 0 {
            1.0
        } else {
            reports.iter().map(|r| r.iou * r.images as f64).sum::<f64>() / images as f64
        };
        let p = Prf1::from_counts(tp, fp, fn_);
        Self {
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            iou,
            tp,
            fp,
            fn_,
            images,
            degenerate: reports.iter().map(|r| r.degenerate).sum(),
        }
    }

    /// `key<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("precision", format!("{}", self.precision)),
            ("recall", format!("{}", self.recall)),
            ("f1", format!("{}", self.f1)),
            ("iou", format!("{}", self.iou)),
            ("tp", self.tp.to_string()),
            ("fp", self.fp.to_string()),
            ("fn", self.fn_.to_string()),
            ("images", self.images.to_string()),
            ("degenerate", self.degenerate.to_string()),
        ] {
            writeln!(s, "{k}\t{v}").unwrap();
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `metrics.tsv` and `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("metrics.tsv"), self.to_tsv().as_bytes())?;
        write_atomic(&dir.join("metrics.json"), self.to_json().as_bytes())
    }
}

/// `top left height width area` rows, tab-separated.
pub fn detections_to_text(dets: &[Detection]) -> String {
    let mut s = String::from("# top\tleft\theight\twidth\tarea\n");
    for d in dets {
        writeln!(s, "{}\t{}\t{}\t{}\t{}", d.bbox.top, d.bbox.left, d.bbox.height, d.bbox.width, d.area).unwrap();
    }
    s
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn need_two(a: &[f64], b: &[f64]) -> Result<()> {
    let got = a.len().min(b.len());
    if got < 2 {
        return Err(Error::TooFewSamples { needed: 2, got });
    }
    Ok(())
}

/// `1 - 3 (sd_pos + sd_neg) / |mean_pos - mean_neg|` with sample deviations.
pub fn z_factor(pos: &[f64], neg: &[f64]) -> Result<f64> {
    need_two(pos, neg)?;
    let (mp, sp) = mean_sd(pos);
    let (mn, sn) = mean_sd(neg);
    if mp == mn {
        return Err(Error::EqualMeans);
    }
    Ok(1.0 - 3.0 * (sp + sn) / (mp - mn).abs())
}

/// Two-sided Welch unequal-variance t-test. Uses the normal tail when the
/// Welch-Satterthwaite degrees of freedom exceed 30, Student's t otherwise.
pub fn two_sample_pvalue(a: &[f64], b: &[f64]) -> Result<f64> {
    need_two(a, b)?;
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sa * sa / na, sb * sb / nb);
    let se2 = va + vb;
    if se2 == 0.0 {
        return if ma == mb { Err(Error::ZeroVariance) } else { Ok(0.0) };
    }
    let t = ((ma - mb) / se2.sqrt()).abs();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let p = if df > 30.0 {
        erfc(t / std::f64::consts::SQRT_2)
    } else {
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::NonFinite(format!("t distribution: {e}")))?;
        2.0 * dist.sf(t)
    };
    Ok(p.min(1.0))
}

/// Separation statistics for two groups of per-image counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssayStats {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub z_factor: f64,
    pub p_value: f64,
}

impl AssayStats {
    pub fn compute(positive: Vec<f64>, negative: Vec<f64>) -> Result<Self> {
        let z = z_factor(&positive, &negative)?;
        let p = two_sample_pvalue(&positive, &negative)?;
        Ok(Self {
            positive,
            negative,
            z_factor: z,
            p_value: p,
        })
    }
}
