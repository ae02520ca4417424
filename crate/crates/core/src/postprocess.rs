//! From query outputs to frame-level detections: confidence thresholding,
//! patch-to-frame coordinate mapping, and border deduplication.
//!
//! The same bubble can be detected in two adjacent patches when it straddles
//! their border. Merging suppresses the lower-scoring of any cross-patch
//! pair whose centroids both lie within a band of the patches' shared
//! boundary and within a radius of each other; detections away from every
//! border are never touched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PatchLayout;
use crate::detector::DetectionSet;

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, PostprocessError>;

/// One thresholded detection. Coordinates are patch-local out of
/// [`extract`] and frame-level out of [`merge_patches`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub centroid: [f64; 2],
    pub bbox: [f64; 4],
    pub score: f64,
    pub source_patch: usize,
}

/// JSON-lines record for persisted detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub cx: f64,
    pub cy: f64,
    pub score: f64,
}

impl DetectionRecord {
    pub fn new(frame: usize, d: &Detection) -> Self {
        Self {
            frame,
            x: d.bbox[0],
            y: d.bbox[1],
            w: d.bbox[2],
            h: d.bbox[3],
            cx: d.centroid[0],
            cy: d.centroid[1],
            score: d.score,
        }
    }

    pub fn detection(&self) -> Detection {
        Detection {
            centroid: [self.cx, self.cy],
            bbox: [self.x, self.y, self.w, self.h],
            score: self.score,
            source_patch: 0,
        }
    }
}

/// Keeps queries whose microbubble probability clears the threshold and
/// de-normalizes their boxes into patch pixels. The centroid is the box
/// center.
pub fn extract(
    pred: &DetectionSet,
    patch_w: usize,
    patch_h: usize,
    threshold: f64,
    source_patch: usize,
) -> Result<Vec<Detection>> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(PostprocessError::Contract(format!("threshold {threshold} outside (0,1)")));
    }
    let (wf, hf) = (patch_w as f64, patch_h as f64);
    let mut out = Vec::new();
    for (p, b) in pred.probs.iter().zip(&pred.boxes) {
        if p[0] >= threshold {
            let w = b[2] * wf;
            let h = b[3] * hf;
            let cx = b[0] * wf;
            let cy = b[1] * hf;
            out.push(Detection {
                centroid: [cx, cy],
                bbox: [cx - w / 2.0, cy - h / 2.0, w, h],
                score: p[0],
                source_patch,
            });
        }
    }
    Ok(out)
}

/// Closed rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

fn patch_rect(layout: &PatchLayout, patch: usize) -> Rect {
    let [ox, oy] = layout.offset(patch);
    Rect { x0: ox, x1: ox + layout.patch_w as f64, y0: oy, y1: oy + layout.patch_h as f64 }
}

/// Shared boundary of two patches: the intersection of their closed rects
/// (a segment for adjacent patches, a single corner point diagonally).
fn shared_boundary(layout: &PatchLayout, a: usize, b: usize) -> Option<Rect> {
    let (ra, rb) = (patch_rect(layout, a), patch_rect(layout, b));
    let r = Rect {
        x0: ra.x0.max(rb.x0),
        x1: ra.x1.min(rb.x1),
        y0: ra.y0.max(rb.y0),
        y1: ra.y1.min(rb.y1),
    };
    if r.x0 <= r.x1 && r.y0 <= r.y1 {
        Some(r)
    } else {
        None
    }
}

fn dist_to_rect(p: [f64; 2], r: &Rect) -> f64 {
    let dx = (r.x0 - p[0]).max(0.0).max(p[0] - r.x1);
    let dy = (r.y0 - p[1]).max(0.0).max(p[1] - r.y1);
    (dx * dx + dy * dy).sqrt()
}

fn is_border_duplicate(layout: &PatchLayout, a: &Detection, b: &Detection, band: f64, radius: f64) -> bool {
    if a.source_patch == b.source_patch {
        return false;
    }
    let Some(boundary) = shared_boundary(layout, a.source_patch, b.source_patch) else {
        return false;
    };
    if dist_to_rect(a.centroid, &boundary) > band || dist_to_rect(b.centroid, &boundary) > band {
        return false;
    }
    let dx = a.centroid[0] - b.centroid[0];
    let dy = a.centroid[1] - b.centroid[1];
    (dx * dx + dy * dy).sqrt() <= radius
}

/// Maps per-patch detections into frame coordinates and removes cross-patch
/// border duplicates, keeping the highest score (ties go to the lower patch
/// index, then to earlier insertion order).
pub fn merge_patches(
    per_patch: &[Vec<Detection>],
    layout: &PatchLayout,
    band: f64,
    radius: f64,
) -> Result<Vec<Detection>> {
    if band < 0.0 {
        return Err(PostprocessError::Contract(format!("band {band} must be non-negative")));
    }
    if radius <= 0.0 {
        return Err(PostprocessError::Contract(format!("radius {radius} must be positive")));
    }
    if per_patch.len() != 4 {
        return Err(PostprocessError::Contract(format!("expected 4 patches, got {}", per_patch.len())));
    }
    let mut all = Vec::new();
    for (patch, dets) in per_patch.iter().enumerate() {
        let [ox, oy] = layout.offset(patch);
        for d in dets {
            if d.source_patch != patch {
                return Err(PostprocessError::Contract(format!(
                    "detection tagged patch {} found in slot {patch}",
                    d.source_patch
                )));
            }
            all.push(Detection {
                centroid: [d.centroid[0] + ox, d.centroid[1] + oy],
                bbox: [d.bbox[0] + ox, d.bbox[1] + oy, d.bbox[2], d.bbox[3]],
                score: d.score,
                source_patch: patch,
            });
        }
    }
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&i, &j| {
        all[j].score
            .partial_cmp(&all[i].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(all[i].source_patch.cmp(&all[j].source_patch))
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let duplicate = kept
            .iter()
            .any(|&k| is_border_duplicate(layout, &all[k], &all[i], band, radius));
        if !duplicate {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| all[i].clone()).collect())
}
