//! Detection scoring: COCO-style mAP/mAR over the 0.50:0.05:0.95 IoU grid
//! with 101-point interpolated precision, plus localization precision/recall
//! at a centroid-distance tolerance (box overlap says little about centroid
//! accuracy, which is what matters downstream).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::postprocess::Detection;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// IoU thresholds for the AP/AR grid.
    pub iou_thresholds: Vec<f64>,
    /// Per-frame detection cap, highest scores kept.
    pub max_detections: usize,
    /// Centroid-distance tolerance in pixels for the localization metrics.
    pub loc_tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_thresholds: coco_iou_grid(), max_detections: 100, loc_tolerance: 1.0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(EvalError::Contract("need at least one IoU threshold".into()));
        }
        if self.iou_thresholds.iter().any(|t| !(0.0 < *t && *t <= 1.0)) {
            return Err(EvalError::Contract("IoU thresholds must lie in (0,1]".into()));
        }
        if self.max_detections == 0 {
            return Err(EvalError::Contract("max_detections must be positive".into()));
        }
        if self.loc_tolerance <= 0.0 {
            return Err(EvalError::Contract("loc_tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// 0.50, 0.55, …, 0.95.
pub fn coco_iou_grid() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Ground truth and detections of one frame, in frame coordinates.
#[derive(Debug, Clone)]
pub struct FrameEval {
    pub frame: usize,
    pub detections: Vec<Detection>,
    pub gt_boxes: Vec<[f64; 4]>,
    pub gt_centroids: Vec<[f64; 2]>,
}

impl FrameEval {
    pub fn from_frame(frame: &crate::simulator::Frame, detections: Vec<Detection>) -> Self {
        Self {
            frame: frame.frame_index,
            detections,
            gt_boxes: frame.annotations.iter().map(|a| a.bbox).collect(),
            gt_centroids: frame.annotations.iter().map(|a| a.centroid).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean AP over the IoU grid; `null` when the dataset has no ground truth.
    pub map: Option<f64>,
    /// Mean recall over the IoU grid at the detection cap.
    pub mar: Option<f64>,
    /// AP at IoU 0.5.
    pub ap50: Option<f64>,
    pub per_threshold_ap: Vec<(f64, f64)>,
    pub loc_precision: Option<f64>,
    pub loc_recall: Option<f64>,
    pub loc_tolerance: f64,
    pub total_gt: usize,
    pub total_detections: usize,
    pub frames: usize,
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "   n/a".into(),
        };
        let mut s = String::new();
        s.push_str(&format!("{:<28} {:>8}\n", "metric", "value"));
        s.push_str(&format!("{:<28} {:>8}\n", "mAP @[0.50:0.95]", fmt(self.map)));
        s.push_str(&format!("{:<28} {:>8}\n", "mAR @[0.50:0.95]", fmt(self.mar)));
        s.push_str(&format!("{:<28} {:>8}\n", "AP  @0.50", fmt(self.ap50)));
        s.push_str(&format!(
            "{:<28} {:>8}\n",
            format!("loc precision @{}px", self.loc_tolerance),
            fmt(self.loc_precision)
        ));
        s.push_str(&format!(
            "{:<28} {:>8}\n",
            format!("loc recall    @{}px", self.loc_tolerance),
            fmt(self.loc_recall)
        ));
        s.push_str(&format!("{:<28} {:>8}\n", "ground truths", self.total_gt));
        s.push_str(&format!("{:<28} {:>8}\n", "detections", self.total_detections));
        s.push_str(&format!("{:<28} {:>8}\n", "frames", self.frames));
        s
    }
}

/// IoU of two corner-convention `(x, y, w, h)` boxes.
pub fn iou_xywh(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// Greedy matching flags: detections must arrive sorted by descending
/// score; each one claims the highest-IoU still-unmatched ground truth with
/// IoU at or above the threshold.
pub struct MatchFlags {
    pub tp: Vec<bool>,
    pub matched_gt: Vec<Option<usize>>,
}

pub fn match_greedy(dets: &[Detection], gts: &[[f64; 4]], iou_threshold: f64) -> Result<MatchFlags> {
    if dets.windows(2).any(|w| w[0].score < w[1].score) {
        return Err(EvalError::Contract("detections must be sorted by descending score".into()));
    }
    let mut gt_taken = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(dets.len());
    let mut matched_gt = Vec::with_capacity(dets.len());
    for d in dets {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let iou = iou_xywh(d.bbox, *gt);
            if iou >= iou_threshold {
                let better = match best {
                    None => true,
                    Some((_, b)) => iou > b,
                };
                if better {
                    best = Some((gi, iou));
                }
            }
        }
        match best {
            Some((gi, _)) => {
                gt_taken[gi] = true;
                tp.push(true);
                matched_gt.push(Some(gi));
            }
            None => {
                tp.push(false);
                matched_gt.push(None);
            }
        }
    }
    Ok(MatchFlags { tp, matched_gt })
}

/// Area under the interpolated precision-recall curve with the 101-point
/// convention. `hits` are `(score, is_tp)` over the whole dataset; they are
/// sorted internally (stable on ties). `None` when there is no ground truth.
pub fn average_precision(hits: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..hits.len()).collect();
    order.sort_by(|&i, &j| hits[j].0.partial_cmp(&hits[i].0).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    let mut precisions = Vec::with_capacity(hits.len());
    let mut recalls = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    for &i in &order {
        if hits[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        precisions.push(tp as f64 / (tp + fp) as f64);
        recalls.push(tp as f64 / n_gt as f64);
    }
    // precision envelope from the right
    let mut envelope = precisions.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut total = 0.0;
    for j in 0..=100 {
        let r = j as f64 / 100.0;
        // first index with recall >= r
        let idx = recalls.partition_point(|&rec| rec < r);
        if idx < envelope.len() {
            total += envelope[idx];
        }
    }
    Some(total / 101.0)
}

/// Full report over a set of frames.
pub fn evaluate(frames: &[FrameEval], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(EvalError::Contract("evaluate needs at least one frame".into()));
    }
    let mut warnings = Vec::new();
    let total_gt: usize = frames.iter().map(|f| f.gt_boxes.len()).sum();

    // per-frame truncation to the detection cap, score-sorted
    let mut per_frame: Vec<Vec<Detection>> = Vec::with_capacity(frames.len());
    for f in frames {
        if f.gt_boxes.len() != f.gt_centroids.len() {
            return Err(EvalError::Contract(format!("frame {}: gt boxes vs centroids", f.frame)));
        }
        let mut dets = f.detections.clone();
        dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
        dets.truncate(cfg.max_detections);
        per_frame.push(dets);
    }
    let total_detections: usize = per_frame.iter().map(Vec::len).sum();

    let mut per_threshold_ap = Vec::with_capacity(cfg.iou_thresholds.len());
    let mut recalls = Vec::with_capacity(cfg.iou_thresholds.len());
    for &thr in &cfg.iou_thresholds {
        let mut hits: Vec<(f64, bool)> = Vec::with_capacity(total_detections);
        let mut matched = 0usize;
        for (f, dets) in frames.iter().zip(&per_frame) {
            let flags = match_greedy(dets, &f.gt_boxes, thr)?;
            matched += flags.tp.iter().filter(|t| **t).count();
            hits.extend(dets.iter().zip(&flags.tp).map(|(d, t)| (d.score, *t)));
        }
        if let Some(ap) = average_precision(&hits, total_gt) {
            per_threshold_ap.push((thr, ap));
            recalls.push(matched as f64 / total_gt as f64);
        }
    }
    let (map, mar, ap50) = if total_gt == 0 {
        warnings.push("dataset has no ground truth: AP/AR undefined".into());
        (None, None, None)
    } else {
        let map = per_threshold_ap.iter().map(|(_, ap)| ap).sum::<f64>() / per_threshold_ap.len() as f64;
        let mar = recalls.iter().sum::<f64>() / recalls.len() as f64;
        let ap50 = per_threshold_ap
            .iter()
            .find(|(t, _)| (*t - 0.5).abs() < 1e-12)
            .map(|(_, ap)| *ap);
        (Some(map), Some(mar), ap50)
    };

    // localization: same greedy scheme with centroid distance as the measure
    let mut loc_tp = 0usize;
    let mut loc_fp = 0usize;
    for (f, dets) in frames.iter().zip(&per_frame) {
        let mut taken = vec![false; f.gt_centroids.len()];
        for d in dets {
            let mut best: Option<(usize, f64)> = None;
            for (gi, c) in f.gt_centroids.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let dist = ((d.centroid[0] - c[0]).powi(2) + (d.centroid[1] - c[1]).powi(2)).sqrt();
                if dist <= cfg.loc_tolerance {
                    let better = match best {
                        None => true,
                        Some((_, b)) => dist < b,
                    };
                    if better {
                        best = Some((gi, dist));
                    }
                }
            }
            match best {
                Some((gi, _)) => {
                    taken[gi] = true;
                    loc_tp += 1;
                }
                None => loc_fp += 1,
            }
        }
    }
    let loc_precision = if loc_tp + loc_fp > 0 {
        Some(loc_tp as f64 / (loc_tp + loc_fp) as f64)
    } else {
        None
    };
    let loc_recall = if total_gt > 0 { Some(loc_tp as f64 / total_gt as f64) } else { None };

    Ok(EvalReport {
        map,
        mar,
        ap50,
        per_threshold_ap,
        loc_precision,
        loc_recall,
        loc_tolerance: cfg.loc_tolerance,
        total_gt,
        total_detections,
        frames: frames.len(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn det(bbox: [f64; 4], score: f64) -> Detection {
        Detection {
            centroid: [bbox[0] + bbox[2] / 2.0, bbox[1] + bbox[3] / 2.0],
            bbox,
            score,
            source_patch: 0,
        }
    }

    fn scene(gt: Vec<[f64; 4]>, dets: Vec<Detection>, frame: usize) -> FrameEval {
        FrameEval {
            frame,
            detections: dets,
            gt_centroids: gt.iter().map(|b| [b[0] + b[2] / 2.0, b[1] + b[3] / 2.0]).collect(),
            gt_boxes: gt,
        }
    }

    #[test]
    fn perfect_predictions_are_all_tp() {
        let gts = vec![[10.0, 10.0, 6.0, 6.0], [30.0, 20.0, 8.0, 8.0]];
        let dets = vec![det(gts[0], 0.9), det(gts[1], 0.8)];
        let flags = match_greedy(&dets, &gts, 0.5).unwrap();
        assert!(flags.tp.iter().all(|t| *t));
        let report = evaluate(&[scene(gts, dets, 0)], &EvalConfig::default()).unwrap();
        assert_eq!(report.map, Some(1.0));
        assert_eq!(report.mar, Some(1.0));
        assert_eq!(report.ap50, Some(1.0));
        assert_eq!(report.loc_precision, Some(1.0));
        assert_eq!(report.loc_recall, Some(1.0));
    }

    #[test]
    fn zero_detections_mean_zero_recall() {
        let gts = vec![[10.0, 10.0, 6.0, 6.0]];
        let report = evaluate(&[scene(gts, vec![], 0)], &EvalConfig::default()).unwrap();
        assert_eq!(report.map, Some(0.0));
        assert_eq!(report.mar, Some(0.0));
        assert_eq!(report.loc_recall, Some(0.0));
        assert_eq!(report.loc_precision, None);
    }

    #[test]
    fn greedy_flags_match_exhaustive_reference() {
        let mut rng = stream(1, "greedy");
        for _ in 0..200 {
            let n_gt = rng.gen_range(0..=5);
            let n_det = rng.gen_range(0..=5);
            let gts: Vec<[f64; 4]> = (0..n_gt)
                .map(|_| [rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0), rng.gen_range(4.0..10.0), rng.gen_range(4.0..10.0)])
                .collect();
            let mut dets: Vec<Detection> = (0..n_det)
                .map(|_| {
                    det(
                        [rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0), rng.gen_range(4.0..10.0), rng.gen_range(4.0..10.0)],
                        rng.gen_range(0.0..1.0),
                    )
                })
                .collect();
            dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
            let flags = match_greedy(&dets, &gts, 0.5).unwrap();
            // reference: literal restatement of the rule, walked independently
            let mut taken = vec![false; gts.len()];
            for (di, d) in dets.iter().enumerate() {
                let mut best_iou = 0.5 - f64::EPSILON;
                let mut best_gi = None;
                for gi in 0..gts.len() {
                    let iou = iou_xywh(d.bbox, gts[gi]);
                    if !taken[gi] && iou >= 0.5 && iou > best_iou {
                        best_iou = iou;
                        best_gi = Some(gi);
                    }
                }
                assert_eq!(flags.matched_gt[di], best_gi, "det {di}");
                if let Some(gi) = best_gi {
                    taken[gi] = true;
                }
            }
        }
    }

    #[test]
    fn ap_of_handcrafted_sequence_matches_manual_computation() {
        // flags TP, FP, TP, FP over 2 ground truths:
        // precision/recall points: (1.0, 0.5), (0.5, 0.5), (2/3, 1.0), (0.5, 1.0)
        // envelope: 1.0 for r ≤ 0.5, 2/3 above → AP = (51·1 + 50·(2/3)) / 101
        let hits = vec![(0.9, true), (0.8, false), (0.7, true), (0.6, false)];
        let expected = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        let ap = average_precision(&hits, 2).unwrap();
        assert!((ap - expected).abs() < 1e-12, "{ap} vs {expected}");
    }

    #[test]
    fn all_fp_gives_zero_ap() {
        let hits = vec![(0.9, false), (0.8, false)];
        assert_eq!(average_precision(&hits, 3), Some(0.0));
        assert_eq!(average_precision(&[], 0), None);
    }

    #[test]
    fn duplicate_of_matched_gt_never_increases_ap() {
        let gt = vec![[10.0, 10.0, 6.0, 6.0]];
        let base = vec![det(gt[0], 0.9)];
        let mut with_dup = base.clone();
        with_dup.push(det([10.2, 10.1, 6.0, 6.0], 0.85));
        let cfg = EvalConfig::default();
        let r1 = evaluate(&[scene(gt.clone(), base, 0)], &cfg).unwrap();
        let r2 = evaluate(&[scene(gt, with_dup, 0)], &cfg).unwrap();
        assert!(r2.map.unwrap() <= r1.map.unwrap() + 1e-12);
    }

    #[test]
    fn evaluate_is_invariant_to_detection_order() {
        let mut rng = stream(2, "order");
        let gts: Vec<[f64; 4]> = (0..4)
            .map(|_| [rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0), 6.0, 6.0])
            .collect();
        let dets: Vec<Detection> = (0..6)
            .map(|i| {
                det(
                    [rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0), 6.0, 6.0],
                    0.9 - 0.1 * i as f64,
                )
            })
            .collect();
        let mut reversed = dets.clone();
        reversed.reverse();
        let cfg = EvalConfig::default();
        let a = evaluate(&[scene(gts.clone(), dets, 0)], &cfg).unwrap();
        let b = evaluate(&[scene(gts, reversed, 0)], &cfg).unwrap();
        assert_eq!(a.map, b.map);
        assert_eq!(a.loc_precision, b.loc_precision);
    }

    #[test]
    fn localization_recall_is_monotone_in_tolerance() {
        let mut rng = stream(3, "tol");
        let gts: Vec<[f64; 4]> = (0..5)
            .map(|_| [rng.gen_range(5.0..40.0), rng.gen_range(5.0..40.0), 6.0, 6.0])
            .collect();
        let dets: Vec<Detection> = gts
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let jitter = rng.gen_range(-2.0..2.0);
                det([g[0] + jitter, g[1] + jitter, 6.0, 6.0], 0.9 - 0.05 * i as f64)
            })
            .collect();
        let mut prev = -1.0;
        for tol in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let cfg = EvalConfig { loc_tolerance: tol, ..EvalConfig::default() };
            let r = evaluate(&[scene(gts.clone(), dets.clone(), 0)], &cfg).unwrap();
            let rec = r.loc_recall.unwrap();
            assert!(rec >= prev, "recall {rec} dropped at tol {tol}");
            prev = rec;
        }
    }

    #[test]
    fn box_overlap_and_centroid_accuracy_measure_different_things() {
        // detections shifted by > tolerance but still above 0.5 IoU
        let gts: Vec<[f64; 4]> = (0..3).map(|i| [10.0 + 15.0 * i as f64, 10.0, 10.0, 10.0]).collect();
        let dets: Vec<Detection> = gts
            .iter()
            .enumerate()
            .map(|(i, g)| det([g[0] + 1.6, g[1], 10.0, 10.0], 0.9 - 0.1 * i as f64))
            .collect();
        let cfg = EvalConfig { loc_tolerance: 1.0, ..EvalConfig::default() };
        let r = evaluate(&[scene(gts, dets, 0)], &cfg).unwrap();
        assert_eq!(r.ap50, Some(1.0), "IoU {:.3} still clears 0.5", iou_xywh([0.0, 0.0, 10.0, 10.0], [1.6, 0.0, 10.0, 10.0]));
        assert_eq!(r.loc_precision, Some(0.0));
        assert_eq!(r.loc_recall, Some(0.0));
    }

    /// Brute-force mAP: re-derives matching, the PR table, and the 101-point
    /// sum from scratch, sharing nothing with the implementation above.
    pub(crate) fn oracle_map(frames: &[FrameEval], thresholds: &[f64], max_det: usize) -> f64 {
        let n_gt: usize = frames.iter().map(|f| f.gt_boxes.len()).sum();
        let mut sum = 0.0;
        for &thr in thresholds {
            let mut labeled: Vec<(f64, bool)> = Vec::new();
            for f in frames {
                let mut dets = f.detections.clone();
                dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
                dets.truncate(max_det);
                let mut used = vec![false; f.gt_boxes.len()];
                for d in &dets {
                    let mut choice: Option<usize> = None;
                    for gi in 0..f.gt_boxes.len() {
                        if used[gi] {
                            continue;
                        }
                        let iou = iou_xywh(d.bbox, f.gt_boxes[gi]);
                        if iou >= thr {
                            choice = match choice {
                                None => Some(gi),
                                Some(prev) => {
                                    if iou > iou_xywh(d.bbox, f.gt_boxes[prev]) {
                                        Some(gi)
                                    } else {
                                        Some(prev)
                                    }
                                }
                            };
                        }
                    }
                    if let Some(gi) = choice {
                        used[gi] = true;
                        labeled.push((d.score, true));
                    } else {
                        labeled.push((d.score, false));
                    }
                }
            }
            labeled.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let mut ap = 0.0;
            for j in 0..=100 {
                let r_target = j as f64 / 100.0;
                // max precision over prefixes whose recall reaches r_target
                let mut best_p = 0.0;
                let mut tp = 0;
                for (k, &(_, is_tp)) in labeled.iter().enumerate() {
                    if is_tp {
                        tp += 1;
                    }
                    let recall = tp as f64 / n_gt as f64;
                    let precision = tp as f64 / (k + 1) as f64;
                    if recall >= r_target && precision > best_p {
                        best_p = precision;
                    }
                }
                ap += best_p;
            }
            sum += ap / 101.0;
        }
        sum / thresholds.len() as f64
    }

    #[test]
    fn map_matches_brute_force_oracle_on_random_scenes() {
        let mut rng = stream(4, "oracle");
        for trial in 0..50 {
            let frames: Vec<FrameEval> = (0..rng.gen_range(1..4))
                .map(|fi| {
                    let n_gt = rng.gen_range(1..=5);
                    let gts: Vec<[f64; 4]> = (0..n_gt)
                        .map(|_| [rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0), rng.gen_range(4.0..10.0), rng.gen_range(4.0..10.0)])
                        .collect();
                    let dets: Vec<Detection> = (0..rng.gen_range(0..=5))
                        .map(|_| {
                            let base = gts[rng.gen_range(0..n_gt)];
                            det(
                                [base[0] + rng.gen_range(-4.0..4.0), base[1] + rng.gen_range(-4.0..4.0), base[2], base[3]],
                                rng.gen_range(0.0..1.0),
                            )
                        })
                        .collect();
                    scene(gts, dets, fi)
                })
                .collect();
            let cfg = EvalConfig::default();
            let got = evaluate(&frames, &cfg).unwrap().map.unwrap();
            let want = oracle_map(&frames, &cfg.iou_thresholds, cfg.max_detections);
            assert!((got - want).abs() < 1e-9, "trial {trial}: {got} vs oracle {want}");
        }
    }

    #[test]
    fn empty_dataset_is_contract_error() {
        assert!(evaluate(&[], &EvalConfig::default()).is_err());
    }

    #[test]
    fn metrics_are_bounded() {
        let mut rng = stream(5, "bounds");
        for _ in 0..30 {
            let frames: Vec<FrameEval> = (0..2)
                .map(|fi| {
                    let gts: Vec<[f64; 4]> = (0..rng.gen_range(0..4))
                        .map(|_| [rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0), 6.0, 6.0])
                        .collect();
                    let dets: Vec<Detection> = (0..rng.gen_range(0..6))
                        .map(|_| det([rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0), 6.0, 6.0], rng.gen_range(0.0..1.0)))
                        .collect();
                    scene(gts, dets, fi)
                })
                .collect();
            let r = evaluate(&frames, &EvalConfig::default()).unwrap();
            for v in [r.map, r.mar, r.ap50, r.loc_precision, r.loc_recall].into_iter().flatten() {
                assert!((0.0..=1.0).contains(&v), "metric {v} out of range");
            }
        }
    }
}
