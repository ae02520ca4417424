//! Bipartite matching and the set-prediction training loss.
//!
//! Each decoder layer's predictions are matched one-to-one against ground
//! truth by a Hungarian assignment over a class/L1/GIoU cost, then scored
//! with a cross-entropy term over all queries (unmatched queries supervised
//! as no-object with a 0.1 weight) plus L1 and GIoU box terms over matched
//! pairs, normalized by the ground-truth count. The assignment itself is a
//! constant of the step; gradients flow only through the prediction tensors.

mod giou;
mod hungarian;

pub use giou::giou;
pub use hungarian::{hungarian, MatchResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{DetectionSet, LayerPrediction};
use crate::numerics::{Graph, NodeId, NumArray, NumericsError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Loss/matching weights. The same λ triple drives both the matching cost
/// and the loss proper; `no_object` down-weights background queries in the
/// cross entropy only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub class: f64,
    pub l1: f64,
    pub giou: f64,
    pub no_object: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { class: 1.0, l1: 5.0, giou: 2.0, no_object: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("class", self.class),
            ("l1", self.l1),
            ("giou", self.giou),
            ("no_object", self.no_object),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LossError::Contract(format!("loss weight {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Pairwise matching costs between queries (rows) and ground truths (cols).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub values: NumArray,
    pub weights: LossWeights,
}

/// `cost[q][g] = λ_cls·(−p̂_q) + λ_L1·‖b_q − b_g‖₁ + λ_giou·(1 − giou)`.
/// Classification enters through the plain probability, not its log.
pub fn matching_cost(pred: &DetectionSet, gt: &[[f64; 4]], weights: &LossWeights) -> Result<CostMatrix> {
    if gt.is_empty() {
        return Err(LossError::Contract("matching cost needs at least one ground truth".into()));
    }
    weights.validate()?;
    let nq = pred.len();
    let mut values = vec![0.0; nq * gt.len()];
    for q in 0..nq {
        for (g, gt_box) in gt.iter().enumerate() {
            let l1: f64 = pred.boxes[q].iter().zip(gt_box).map(|(a, b)| (a - b).abs()).sum();
            let gi = giou(pred.boxes[q], *gt_box)?;
            values[q * gt.len() + g] =
                weights.class * (-pred.probs[q][0]) + weights.l1 * l1 + weights.giou * (1.0 - gi);
        }
    }
    let values = NumArray::from_vec(vec![nq, gt.len()], values).map_err(LossError::from)?;
    Ok(CostMatrix { values, weights: *weights })
}

/// Scalar loss node plus per-layer assignments and logged components.
pub struct SetLossOutput {
    pub total: NodeId,
    /// `assignments[layer][gt] = query`; empty inner vec when Ngt = 0.
    pub assignments: Vec<Vec<usize>>,
    /// λ-scaled component values averaged over layers, for logging.
    pub class_component: f64,
    pub l1_component: f64,
    pub giou_component: f64,
}

fn softmax_pair(a: f64, b: f64) -> [f64; 2] {
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    [ea / (ea + eb), eb / (ea + eb)]
}

/// Plain-value detections for the matching step.
fn layer_detections(g: &Graph, layer: &LayerPrediction) -> DetectionSet {
    let logits = g.value(layer.class_logits);
    let boxes = g.value(layer.boxes);
    let n = logits.shape()[0];
    DetectionSet {
        probs: (0..n).map(|i| softmax_pair(logits.at2(i, 0), logits.at2(i, 1))).collect(),
        boxes: (0..n)
            .map(|i| [boxes.at2(i, 0), boxes.at2(i, 1), boxes.at2(i, 2), boxes.at2(i, 3)])
            .collect(),
    }
}

/// Differentiable GIoU of row-aligned box arrays `[N,4]`, as a `[N,1]` node.
fn giou_column(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let take = |g: &mut Graph, x: NodeId, c: usize| g.slice_cols(x, c, c + 1);
    let (acx, acy, aw, ah) = (take(g, a, 0)?, take(g, a, 1)?, take(g, a, 2)?, take(g, a, 3)?);
    let (bcx, bcy, bw, bh) = (take(g, b, 0)?, take(g, b, 1)?, take(g, b, 2)?, take(g, b, 3)?);
    let half = |g: &mut Graph, x: NodeId| g.affine(x, 0.5, 0.0);
    let (awh, ahh) = (half(g, aw)?, half(g, ah)?);
    let (bwh, bhh) = (half(g, bw)?, half(g, bh)?);
    let ax1 = g.sub(acx, awh)?;
    let ax2 = g.add(acx, awh)?;
    let ay1 = g.sub(acy, ahh)?;
    let ay2 = g.add(acy, ahh)?;
    let bx1 = g.sub(bcx, bwh)?;
    let bx2 = g.add(bcx, bwh)?;
    let by1 = g.sub(bcy, bhh)?;
    let by2 = g.add(bcy, bhh)?;

    let ix2 = g.emin(ax2, bx2)?;
    let ix1 = g.emax(ax1, bx1)?;
    let iy2 = g.emin(ay2, by2)?;
    let iy1 = g.emax(ay1, by1)?;
    let iw_raw = g.sub(ix2, ix1)?;
    let iw = g.relu(iw_raw)?;
    let ih_raw = g.sub(iy2, iy1)?;
    let ih = g.relu(ih_raw)?;
    let inter = g.mul(iw, ih)?;

    let area_a = g.mul(aw, ah)?;
    let area_b = g.mul(bw, bh)?;
    let areas = g.add(area_a, area_b)?;
    let union = g.sub(areas, inter)?;
    let iou = g.div(inter, union)?;

    let hx2 = g.emax(ax2, bx2)?;
    let hx1 = g.emin(ax1, bx1)?;
    let hy2 = g.emax(ay2, by2)?;
    let hy1 = g.emin(ay1, by1)?;
    let hw = g.sub(hx2, hx1)?;
    let hh = g.sub(hy2, hy1)?;
    let hull = g.mul(hw, hh)?;
    let excess = g.sub(hull, union)?;
    let penalty = g.div(excess, hull)?;
    Ok(g.sub(iou, penalty)?)
}

/// The set-prediction loss over all decoder layers.
///
/// `fixed` freezes the per-layer assignments (gradient checks re-evaluate
/// the loss under perturbations; the assignment must stay a constant of the
/// step). When `None`, a fresh Hungarian match is computed per layer.
/// With no ground truth, the loss is classification-only: every query is
/// supervised as no-object.
pub fn set_loss(
    g: &mut Graph,
    layers: &[LayerPrediction],
    gt_boxes: &[[f64; 4]],
    weights: &LossWeights,
    fixed: Option<&[Vec<usize>]>,
) -> Result<SetLossOutput> {
    if layers.is_empty() {
        return Err(LossError::Contract("set loss needs at least one prediction layer".into()));
    }
    weights.validate()?;
    for b in gt_boxes {
        if b[2] <= 0.0 || b[3] <= 0.0 {
            return Err(LossError::Contract(format!("ground-truth box {b:?} has non-positive extent")));
        }
    }
    if let Some(f) = fixed {
        if f.len() != layers.len() {
            return Err(LossError::Contract("fixed assignments must cover every layer".into()));
        }
    }
    let ngt = gt_boxes.len();
    let mut layer_totals = Vec::with_capacity(layers.len());
    let mut assignments = Vec::with_capacity(layers.len());
    let mut class_component = 0.0;
    let mut l1_component = 0.0;
    let mut giou_component = 0.0;

    for (li, layer) in layers.iter().enumerate() {
        let nq = g.value(layer.class_logits).shape()[0];
        let assignment: Vec<usize> = if ngt == 0 {
            Vec::new()
        } else if let Some(f) = fixed {
            let a = f[li].clone();
            if a.len() != ngt || a.iter().any(|&q| q >= nq) {
                return Err(LossError::Contract(format!("fixed assignment for layer {li} is invalid")));
            }
            a
        } else {
            let dets = layer_detections(g, layer);
            let cost = matching_cost(&dets, gt_boxes, weights)?;
            hungarian(&cost.values)?.assignment
        };

        let mut targets = vec![1usize; nq];
        for &q in &assignment {
            targets[q] = 0;
        }
        let ce = g.cross_entropy(layer.class_logits, &targets, &[1.0, weights.no_object])?;
        let ce_scaled = g.affine(ce, weights.class, 0.0)?;
        class_component += g.value(ce_scaled).scalar_value()?;

        let layer_total = if ngt > 0 {
            let matched = g.select_rows(layer.boxes, &assignment)?;
            let gt_node = g.leaf(
                NumArray::from_vec(vec![ngt, 4], gt_boxes.iter().flatten().copied().collect())
                    .map_err(LossError::from)?,
            );
            let diff = g.sub(matched, gt_node)?;
            let absdiff = g.abs(diff)?;
            let l1_sum = g.sum_all(absdiff)?;
            let l1_term = g.affine(l1_sum, weights.l1 / ngt as f64, 0.0)?;
            l1_component += g.value(l1_term).scalar_value()?;

            let gi = giou_column(g, matched, gt_node)?;
            let one_minus = g.affine(gi, -1.0, 1.0)?;
            let gi_sum = g.sum_all(one_minus)?;
            let gi_term = g.affine(gi_sum, weights.giou / ngt as f64, 0.0)?;
            giou_component += g.value(gi_term).scalar_value()?;

            let boxes_term = g.add(l1_term, gi_term)?;
            g.add(ce_scaled, boxes_term)?
        } else {
            ce_scaled
        };
        layer_totals.push(layer_total);
        assignments.push(assignment);
    }

    let mut acc = layer_totals[0];
    for t in &layer_totals[1..] {
        acc = g.add(acc, *t)?;
    }
    let scale = 1.0 / layers.len() as f64;
    let total = g.affine(acc, scale, 0.0)?;
    Ok(SetLossOutput {
        total,
        assignments,
        class_component: class_component * scale,
        l1_component: l1_component * scale,
        giou_component: giou_component * scale,
    })
}
