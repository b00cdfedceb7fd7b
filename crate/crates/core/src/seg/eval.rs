//! Set-level precision at IoU thresholds and the area under the
//! precision-versus-threshold curve.
//!
//! Precision is `TP / (TP + FP)` over all predictions of all images, with
//! no recall term. Predictions are matched greedily in score order: each
//! takes the unmatched ground truth of highest IoU and counts as a true
//! positive when that IoU reaches the threshold.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::instances::InstancePrediction;
use crate::error::{Error, Result};
use crate::image::Mask;

/// Thresholds `0.50, 0.55, ..., 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            expected: a.shape(),
            actual: b.shape(),
        });
    }
    let union = a.union_count(b);
    if union == 0 {
        return Err(Error::EmptyIou);
    }
    Ok(a.intersection_count(b) as f64 / union as f64)
}

/// Predictions and ground-truth instances of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub preds: Vec<InstancePrediction>,
    pub gts: Vec<Mask>,
}

impl ImageEval {
    /// Pairwise IoU table `[pred][gt]`.
    pub fn iou_table(&self) -> Result<Vec<Vec<f64>>> {
        self.preds
            .iter()
            .map(|p| self.gts.iter().map(|g| iou(&p.mask, g)).collect())
            .collect()
    }
}

/// Match assignments for predictions in score order (ties keep input
/// order). Entry `i` refers to the `i`-th prediction of that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub pred: usize,
    pub score: f64,
    pub gt: Option<usize>,
    pub iou: f64,
    pub tp: bool,
}

/// Score order of `preds`, stable under ties.
fn score_order(preds: &[InstancePrediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

pub fn match_greedy(image: &ImageEval, k: f64) -> Result<Vec<MatchRecord>> {
    let table = image.iou_table()?;
    let mut taken = vec![false; image.gts.len()];
    let mut out = Vec::with_capacity(image.preds.len());
    for i in score_order(&image.preds) {
        let best = (0..image.gts.len())
            .filter(|&j| !taken[j])
            .max_by(|&a, &b| table[i][a].total_cmp(&table[i][b]).then(b.cmp(&a)));
        let (gt, v) = match best {
            Some(j) => (Some(j), table[i][j]),
            None => (None, 0.0),
        };
        let tp = gt.is_some() && v >= k;
        if tp {
            taken[gt.expect("matched")] = true;
        }
        out.push(MatchRecord {
            pred: i,
            score: image.preds[i].score,
            gt: if tp { gt } else { None },
            iou: v,
            tp,
        });
    }
    Ok(out)
}

fn check_k(k: f64) -> Result<()> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::config(format!("IoU threshold must lie in (0, 1), got {k}")));
    }
    Ok(())
}

/// `(TP, FP)` pooled over images at threshold `k`.
pub fn tp_fp(images: &[ImageEval], k: f64) -> Result<(usize, usize)> {
    check_k(k)?;
    let mut tp = 0;
    let mut fp = 0;
    for img in images {
        for m in match_greedy(img, k)? {
            if m.tp {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    Ok((tp, fp))
}

/// Pooled precision at threshold `k`; no predictions at all is an error.
pub fn ap_at_set(images: &[ImageEval], k: f64) -> Result<f64> {
    let (tp, fp) = tp_fp(images, k)?;
    if tp + fp == 0 {
        return Err(Error::UndefinedPrecision);
    }
    Ok(tp as f64 / (tp + fp) as f64)
}

/// Precision of one image's predictions at threshold `k`.
pub fn ap_at(preds: &[InstancePrediction], gts: &[Mask], k: f64) -> Result<f64> {
    let img = ImageEval {
        preds: preds.to_vec(),
        gts: gts.to_vec(),
    };
    ap_at_set(std::slice::from_ref(&img), k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApRange {
    pub ap50: f64,
    pub ap75: f64,
    pub ap90: f64,
    pub ap50_95: f64,
}

pub fn ap_range(images: &[ImageEval]) -> Result<ApRange> {
    let curve = precision_curve(images)?;
    Ok(ApRange {
        ap50: ap_at_set(images, 0.50)?,
        ap75: ap_at_set(images, 0.75)?,
        ap90: ap_at_set(images, 0.90)?,
        ap50_95: curve.iter().map(|(_, p)| p).sum::<f64>() / curve.len() as f64,
    })
}

/// `(k, precision)` at every threshold of [`coco_thresholds`].
pub fn precision_curve(images: &[ImageEval]) -> Result<Vec<(f64, f64)>> {
    coco_thresholds()
        .into_iter()
        .map(|k| Ok((k, ap_at_set(images, k)?)))
        .collect()
}

/// Trapezoidal integral of a sampled curve given as `(x, y)` pairs in
/// increasing `x`.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

/// Area under precision versus IoU threshold over `[0.50, 0.95]`,
/// unnormalized, so a perfect predictor scores 0.45.
pub fn aupc(images: &[ImageEval]) -> Result<f64> {
    Ok(trapezoid(&precision_curve(images)?))
}

/// One Table III row. Column names follow the published table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    #[serde(rename = "Training Dataset")]
    pub name: String,
    #[serde(rename = "AP_50")]
    pub ap50: f64,
    #[serde(rename = "AP_75")]
    pub ap75: f64,
    #[serde(rename = "AP_90")]
    pub ap90: f64,
    #[serde(rename = "AP_50:95")]
    pub ap50_95: f64,
    #[serde(rename = "Avg_50,75,90")]
    pub avg: f64,
    #[serde(rename = "AUPC")]
    pub aupc: f64,
}

impl EvalRow {
    pub fn new(name: &str, ap: ApRange, aupc: f64) -> Self {
        Self {
            name: name.to_string(),
            ap50: ap.ap50,
            ap75: ap.ap75,
            ap90: ap.ap90,
            ap50_95: ap.ap50_95,
            avg: (ap.ap50 + ap.ap75 + ap.ap90) / 3.0,
            aupc,
        }
    }

    /// Values in `[0, 1]`, AUPC at most 0.45 and the Avg column equal to
    /// the mean of the three AP columns.
    pub fn is_consistent(&self) -> bool {
        let vals = [self.ap50, self.ap75, self.ap90, self.ap50_95, self.avg, self.aupc];
        vals.iter().all(|v| (0.0..=1.0).contains(v))
            && self.aupc <= 0.45 + 1e-12
            && self.avg == (self.ap50 + self.ap75 + self.ap90) / 3.0
    }
}

/// Evaluation of one model on a test set. Thresholds at which nothing was
/// predicted are recorded as precision 0 and listed in `undefined`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEvaluation {
    pub row: EvalRow,
    pub curve: Vec<(f64, f64)>,
    pub undefined: Vec<f64>,
}

pub fn evaluate_set(name: &str, images: &[ImageEval]) -> Result<SetEvaluation> {
    let mut undefined = Vec::new();
    let mut at = |k: f64| -> Result<f64> {
        match ap_at_set(images, k) {
            Ok(v) => Ok(v),
            Err(Error::UndefinedPrecision) => {
                undefined.push(k);
                Ok(0.0)
            }
            Err(e) => Err(e),
        }
    };
    let curve: Vec<(f64, f64)> = coco_thresholds()
        .into_iter()
        .map(|k| Ok((k, at(k)?)))
        .collect::<Result<_>>()?;
    let ap = ApRange {
        ap50: at(0.50)?,
        ap75: at(0.75)?,
        ap90: at(0.90)?,
        ap50_95: curve.iter().map(|(_, p)| p).sum::<f64>() / curve.len() as f64,
    };
    undefined.sort_by(|a, b| a.total_cmp(b));
    undefined.dedup();
    Ok(SetEvaluation {
        row: EvalRow::new(name, ap, trapezoid(&curve)),
        curve,
        undefined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MatchLine<'a> {
    combination: &'a str,
    image: usize,
    k: f64,
    n_gt: usize,
    matches: Vec<MatchRecord>,
}

/// One JSON object per (image, threshold) with the greedy assignments.
pub fn write_match_details(path: &Path, combination: &str, images: &[ImageEval], thresholds: &[f64]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for (i, img) in images.iter().enumerate() {
        for &k in thresholds {
            let line = MatchLine {
                combination,
                image: i,
                k,
                n_gt: img.gts.len(),
                matches: match_greedy(img, k)?,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_rows_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<EvalRow>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: usize, y0: usize, w: usize, h: usize) -> Mask {
        Mask::from_fn(12, 12, |x, y| x >= x0 && x < x0 + w && y >= y0 && y < y0 + h)
    }

    fn pred(mask: Mask, score: f64) -> InstancePrediction {
        InstancePrediction { mask, score }
    }

    #[test]
    fn iou_hand_counts() {
        let a = rect(0, 0, 4, 2);
        let b = rect(2, 0, 2, 4);
        // 2×2 overlap, 8 + 8 - 4 = 12 in the union.
        assert_eq!(iou(&a, &b).unwrap(), 1.0 / 3.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &rect(6, 6, 2, 2)).unwrap(), 0.0);
        assert!(matches!(iou(&Mask::empty(12, 12), &Mask::empty(12, 12)), Err(Error::EmptyIou)));
    }

    #[test]
    fn perfect_and_missing() {
        let gts = vec![rect(0, 0, 3, 3), rect(6, 6, 3, 3)];
        let preds = vec![pred(gts[0].clone(), 0.9), pred(gts[1].clone(), 0.8)];
        assert_eq!(ap_at(&preds, &gts, 0.9).unwrap(), 1.0);
        let far = vec![pred(rect(0, 8, 2, 2), 0.9)];
        assert_eq!(ap_at(&far, &gts, 0.5).unwrap(), 0.0);
        assert!(matches!(ap_at(&[], &gts, 0.5), Err(Error::UndefinedPrecision)));
        assert!(ap_at(&preds, &gts, 1.0).is_err());
    }

    #[test]
    fn duplicate_predictions_count_once() {
        let gts = vec![rect(0, 0, 3, 3)];
        let preds = vec![pred(gts[0].clone(), 0.9), pred(gts[0].clone(), 0.8)];
        assert_eq!(ap_at(&preds, &gts, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn loose_overlap_fixture() {
        // Prediction covers 6 of a 10-pixel object exactly: IoU 0.6.
        let gts = vec![rect(0, 0, 5, 2)];
        let preds = vec![pred(rect(0, 0, 3, 2), 0.9)];
        let imgs = [ImageEval { preds, gts }];
        let r = ap_range(&imgs).unwrap();
        assert_eq!((r.ap50, r.ap75, r.ap90), (1.0, 0.0, 0.0));
        // Thresholds 0.50, 0.55 and 0.60 pass.
        assert!((r.ap50_95 - 0.3).abs() < 1e-12);
    }

    #[test]
    fn constant_precision_area() {
        assert!((trapezoid(&coco_thresholds().into_iter().map(|k| (k, 0.7)).collect::<Vec<_>>()) - 0.45 * 0.7).abs() < 1e-15);
        let gts = vec![rect(0, 0, 3, 3)];
        let imgs = [ImageEval {
            preds: vec![pred(gts[0].clone(), 0.9)],
            gts,
        }];
        assert!((aupc(&imgs).unwrap() - 0.45).abs() < 1e-15);
    }

    #[test]
    fn row_average_and_undefined_flags() {
        let imgs = [ImageEval {
            preds: vec![],
            gts: vec![rect(0, 0, 2, 2)],
        }];
        let e = evaluate_set("Original", &imgs).unwrap();
        assert_eq!(e.undefined, coco_thresholds());
        assert_eq!(e.row.ap50, 0.0);
        assert!(e.row.is_consistent());
        let row = EvalRow::new(
            "x",
            ApRange {
                ap50: 0.833,
                ap75: 0.737,
                ap90: 0.167,
                ap50_95: 0.635,
            },
            0.264,
        );
        assert!(row.is_consistent());
    }

    #[test]
    fn csv_header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t3.csv");
        let rows = vec![EvalRow::new(
            "DDPM+DDIM+Original",
            ApRange {
                ap50: 0.5,
                ap75: 0.25,
                ap90: 0.125,
                ap50_95: 0.3,
            },
            0.1,
        )];
        write_rows_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("Training Dataset,AP_50,AP_75,AP_90,AP_50:95,\"Avg_50,75,90\",AUPC\n"));
        assert_eq!(read_rows_csv(&path).unwrap(), rows);
    }

    #[test]
    fn match_details_are_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let gts = vec![rect(0, 0, 3, 3)];
        let imgs = [ImageEval {
            preds: vec![pred(gts[0].clone(), 0.9), pred(rect(8, 8, 2, 2), 0.4)],
            gts,
        }];
        write_match_details(&path, "DDIM", &imgs, &[0.5, 0.75]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["matches"][0]["tp"], true);
        assert_eq!(lines[0]["matches"][1]["tp"], false);
    }
}
