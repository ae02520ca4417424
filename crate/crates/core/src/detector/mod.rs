//! Multi-scale deformable-attention detector.
//!
//! A small trained-from-scratch convolutional backbone feeds a two-level
//! feature pyramid into a deformable-attention encoder; learned object
//! queries decode into class probabilities and normalized boxes through a
//! decoder with dense self-attention and deformable cross-attention. Every
//! query attends to a fixed budget of sampled locations instead of the whole
//! grid, which is what keeps the cost sub-quadratic in image size.

mod attention;
mod backbone;
mod checkpoint;
mod model;

#[cfg(test)]
mod tests;

pub use attention::sine_position_encoding;
pub use model::deform_sample_footprint;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{Detector, ForwardOutput};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Graph, NodeId, NumArray, NumericsError};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}

pub type Result<T> = std::result::Result<T, DetectorError>;

// ── configuration ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Input patch size; both extents must be divisible by 8.
    pub patch_h: usize,
    pub patch_w: usize,
    /// Model width D, shared by every pyramid level.
    pub d_model: usize,
    /// Attention heads M.
    pub heads: usize,
    /// Sampling points per head per level K.
    pub points_per_level: usize,
    /// Pyramid levels L; the backbone taps stages 2 and 3, so this is 2.
    pub levels: usize,
    /// Channels of backbone stages 1 and 2 (stage 3 has `d_model`).
    pub stage_channels: (usize, usize),
    pub norm_groups: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Object queries per patch; must exceed the worst-case ground-truth
    /// count in any training patch.
    pub queries: usize,
    pub ffn_hidden: usize,
    /// Supervise every decoder layer, not just the last one.
    pub aux_loss: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            patch_h: 64,
            patch_w: 64,
            d_model: 64,
            heads: 4,
            points_per_level: 4,
            levels: 2,
            stage_channels: (16, 32),
            norm_groups: 8,
            encoder_layers: 2,
            decoder_layers: 2,
            queries: 25,
            ffn_hidden: 128,
            aux_loss: true,
        }
    }
}

impl DetectorConfig {
    /// Pyramid level sizes for a given input, smallest stride first.
    pub fn level_dims(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        vec![(h / 4, w / 4), (h / 8, w / 8)]
    }

    /// Total sampled keys per query.
    pub fn sample_budget(&self) -> usize {
        self.heads * self.levels * self.points_per_level
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(DetectorError::Config(m));
        if self.levels != 2 {
            return err(format!("levels must be 2 for the two-tap backbone, got {}", self.levels));
        }
        if self.patch_h % 8 != 0 || self.patch_w % 8 != 0 {
            return err(format!("patch {}x{} must be divisible by 8", self.patch_w, self.patch_h));
        }
        if self.d_model == 0 || self.d_model % self.heads != 0 {
            return err(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.d_model % 4 != 0 {
            return err(format!("d_model {} must be divisible by 4 for the sine encodings", self.d_model));
        }
        if self.heads == 0 || self.points_per_level == 0 {
            return err("heads and points_per_level must be positive".into());
        }
        for (name, c) in [
            ("stage 1", self.stage_channels.0),
            ("stage 2", self.stage_channels.1),
            ("d_model", self.d_model),
        ] {
            if c == 0 || c % self.norm_groups != 0 {
                return err(format!("norm_groups {} must divide {name} channels {c}", self.norm_groups));
            }
        }
        if self.decoder_layers == 0 {
            return err("decoder_layers must be at least 1".into());
        }
        if self.queries == 0 {
            return err("queries must be positive".into());
        }
        if self.ffn_hidden == 0 {
            return err("ffn_hidden must be positive".into());
        }
        let total_pixels: usize = self.level_dims(self.patch_h, self.patch_w).iter().map(|(h, w)| h * w).sum();
        if self.sample_budget() >= total_pixels {
            return err(format!(
                "sampling budget M·L·K = {} must stay below the {total_pixels} pyramid pixels",
                self.sample_budget()
            ));
        }
        Ok(())
    }
}

// ── detection sets ──────────────────────────────────────────────────────

/// Per-query class probabilities over {microbubble, no-object} and a
/// normalized `(cx, cy, w, h)` box, all sigmoid/softmax bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub probs: Vec<[f64; 2]>,
    pub boxes: Vec<[f64; 4]>,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != self.boxes.len() {
            return Err(DetectorError::Contract("probs and boxes must align".into()));
        }
        for p in &self.probs {
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p[0] + p[1] - 1.0).abs() > 1e-9 {
                return Err(DetectorError::Contract(format!("class probabilities {p:?} not a distribution")));
            }
        }
        for b in &self.boxes {
            if b.iter().any(|v| !(0.0 < *v && *v < 1.0)) {
                return Err(DetectorError::Contract(format!("box {b:?} outside (0,1)")));
            }
        }
        Ok(())
    }
}

/// One decoder layer's raw prediction nodes inside a live graph.
#[derive(Debug, Clone, Copy)]
pub struct LayerPrediction {
    /// `[Nq, 2]` class logits.
    pub class_logits: NodeId,
    /// `[Nq, 4]` sigmoid-bounded `(cx, cy, w, h)`.
    pub boxes: NodeId,
}

/// Materializes a graph prediction into plain probabilities and boxes.
pub fn detection_set(g: &mut Graph, layer: &LayerPrediction) -> Result<DetectionSet> {
    let probs_node = g.softmax(layer.class_logits, 1)?;
    let probs_arr = g.value(probs_node);
    let n = probs_arr.shape()[0];
    let probs = (0..n).map(|i| [probs_arr.at2(i, 0), probs_arr.at2(i, 1)]).collect();
    let boxes_arr = g.value(layer.boxes);
    let boxes = (0..n)
        .map(|i| [boxes_arr.at2(i, 0), boxes_arr.at2(i, 1), boxes_arr.at2(i, 2), boxes_arr.at2(i, 3)])
        .collect();
    Ok(DetectionSet { probs, boxes })
}

// ── parameter store ─────────────────────────────────────────────────────

/// Named tensors in declaration order. The order is the serialization
/// contract for checkpoints, and the binding order for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, NumArray)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: NumArray) {
        assert!(
            self.index.insert(name.to_string(), self.entries.len()).is_none(),
            "duplicate parameter {name}"
        );
        self.entries.push((name.to_string(), value));
    }

    pub fn get(&self, name: &str) -> &NumArray {
        let i = self.index[name];
        &self.entries[i].1
    }

    pub fn position(&self, name: &str) -> usize {
        self.index[name]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NumArray)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn values(&self) -> impl Iterator<Item = &NumArray> {
        self.entries.iter().map(|(_, v)| v)
    }

    pub fn set(&mut self, i: usize, value: NumArray) {
        assert_eq!(self.entries[i].1.shape(), value.shape(), "parameter {} shape", self.entries[i].0);
        self.entries[i].1 = value;
    }

    pub fn value_at(&self, i: usize) -> &NumArray {
        &self.entries[i].1
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.numel()).sum()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameters leafed into a graph, addressable by name.
pub struct Bound<'a> {
    params: &'a ParamSet,
    pub ids: Vec<NodeId>,
}

impl<'a> Bound<'a> {
    pub fn new(params: &'a ParamSet, g: &mut Graph) -> Self {
        let ids = params.values().map(|v| g.leaf(v.clone())).collect();
        Self { params, ids }
    }

    pub fn of(&self, name: &str) -> NodeId {
        self.ids[self.params.position(name)]
    }
}
