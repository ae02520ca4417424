//! Detector assembly: backbone → encoder → decoder → prediction heads.


use super::attention::{
    add_norm, declare_deform_params, declare_ffn_params, declare_norm_params,
    declare_self_attn_params, deformable_attention, dense_self_attention, encoder_reference_points,
    ffn, sine_position_encoding, xavier,
};
use super::{backbone, detection_set, Bound, DetectionSet, DetectorConfig, DetectorError, LayerPrediction, ParamSet, Result};
use crate::numerics::{Graph, NodeId, NumArray};
use crate::rng::substream;

/// Nodes produced by one forward pass, still attached to the graph.
pub struct ForwardOutput {
    /// The input image leaf (for gradient checks against the input).
    pub image_node: NodeId,
    /// Per-decoder-layer predictions, last layer last.
    pub layers: Vec<LayerPrediction>,
    /// Encoder memory, per level `[H_l·W_l, D]`.
    pub memory: Vec<NodeId>,
    pub level_dims: Vec<(usize, usize)>,
}

impl ForwardOutput {
    pub fn final_layer(&self) -> &LayerPrediction {
        self.layers.last().expect("decoder has at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub config: DetectorConfig,
    pub params: ParamSet,
}

fn inverse_sigmoid(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Detector {
    /// Builds a detector with freshly initialized parameters. The same seed
    /// and config always produce bit-identical parameters.
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut substream(seed, "detector-init", 0);
        let mut params = ParamSet::new();
        backbone::declare_params(&mut params, &config, rng);
        for l in 0..config.levels {
            params.insert(&format!("encoder.level_embed{l}"), NumArray::randn(&[config.d_model], 1.0, rng));
        }
        for e in 0..config.encoder_layers {
            let p = format!("encoder.l{e}");
            declare_deform_params(&mut params, &format!("{p}.attn"), &config, rng);
            declare_norm_params(&mut params, &format!("{p}.norm1"), config.d_model);
            declare_ffn_params(&mut params, &format!("{p}.ffn"), &config, rng);
            declare_norm_params(&mut params, &format!("{p}.norm2"), config.d_model);
        }
        for dl in 0..config.decoder_layers {
            let p = format!("decoder.l{dl}");
            declare_self_attn_params(&mut params, &format!("{p}.self"), &config, rng);
            declare_norm_params(&mut params, &format!("{p}.norm1"), config.d_model);
            declare_deform_params(&mut params, &format!("{p}.cross"), &config, rng);
            declare_norm_params(&mut params, &format!("{p}.norm2"), config.d_model);
            declare_ffn_params(&mut params, &format!("{p}.ffn"), &config, rng);
            declare_norm_params(&mut params, &format!("{p}.norm3"), config.d_model);
        }
        params.insert("decoder.query_embed", NumArray::randn(&[config.queries, config.d_model], 1.0, rng));
        params.insert("decoder.ref_logits", Self::reference_grid(config.queries));
        params.insert("head.class.w", xavier(config.d_model, 2, rng));
        params.insert("head.class.b", NumArray::zeros(&[2]));
        params.insert("head.box1.w", xavier(config.d_model, config.d_model, rng));
        params.insert("head.box1.b", NumArray::zeros(&[config.d_model]));
        params.insert("head.box2.w", xavier(config.d_model, config.d_model, rng));
        params.insert("head.box2.b", NumArray::zeros(&[config.d_model]));
        params.insert("head.box3.w", xavier(config.d_model, 4, rng));
        params.insert("head.box3.b", NumArray::zeros(&[4]));
        Ok(Self { config, params })
    }

    /// Learned reference points start on a regular grid (through the
    /// sigmoid), covering the patch evenly.
    fn reference_grid(queries: usize) -> NumArray {
        let side = (queries as f64).sqrt().ceil() as usize;
        let mut data = Vec::with_capacity(queries * 2);
        for q in 0..queries {
            let i = q / side;
            let j = q % side;
            data.push(inverse_sigmoid((j as f64 + 0.5) / side as f64));
            data.push(inverse_sigmoid((i as f64 + 0.5) / side as f64));
        }
        NumArray::from_vec(vec![queries, 2], data).expect("reference grid")
    }

    pub fn bind<'a>(&'a self, g: &mut Graph) -> Bound<'a> {
        Bound::new(&self.params, g)
    }

    /// Builds the forward graph for one `[1, H, W]` patch.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, image: &NumArray) -> Result<ForwardOutput> {
        let image_node = g.leaf(image.clone());
        self.forward_from(g, bound, image_node)
    }

    /// Forward pass starting from an existing image node (so callers can
    /// gradient-check against the input).
    pub fn forward_from(&self, g: &mut Graph, bound: &Bound, image_node: NodeId) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let pyramid = backbone::forward(g, bound, image_node, cfg)?;
        let level_dims: Vec<(usize, usize)> = pyramid.iter().map(|(_, d)| *d).collect();
        let total_pixels: usize = level_dims.iter().map(|(h, w)| h * w).sum();
        if cfg.sample_budget() >= total_pixels {
            return Err(DetectorError::Config(format!(
                "sampling budget {} must stay below the {total_pixels} pyramid pixels",
                cfg.sample_budget()
            )));
        }
        let mut feats = Vec::with_capacity(cfg.levels);
        for (node, _) in &pyramid {
            feats.push(g.to_hwc(*node)?);
        }

        // encoder: every pyramid pixel is a query with its own reference point
        if cfg.encoder_layers > 0 {
            let mut row_ranges = Vec::with_capacity(cfg.levels);
            let mut start = 0;
            for (h, w) in &level_dims {
                row_ranges.push((start, start + h * w));
                start += h * w;
            }
            let mut pos_parts = Vec::with_capacity(cfg.levels);
            for (l, (h, w)) in level_dims.iter().enumerate() {
                let pe = g.leaf(sine_position_encoding(*h, *w, cfg.d_model));
                pos_parts.push(g.add_bias(pe, bound.of(&format!("encoder.level_embed{l}")))?);
            }
            let pos_cat = g.concat_rows(&pos_parts)?;
            let refs = g.leaf(encoder_reference_points(&level_dims));
            let mut x_cat = g.concat_rows(&feats)?;
            for e in 0..cfg.encoder_layers {
                let p = format!("encoder.l{e}");
                let q_in = g.add(x_cat, pos_cat)?;
                let mut value_feats = Vec::with_capacity(cfg.levels);
                for (s, t) in &row_ranges {
                    value_feats.push(g.slice_rows(x_cat, *s, *t)?);
                }
                let attn = deformable_attention(g, bound, &format!("{p}.attn"), q_in, refs, &value_feats, &level_dims, cfg)?;
                x_cat = add_norm(g, bound, &format!("{p}.norm1"), x_cat, attn)?;
                let f = ffn(g, bound, &format!("{p}.ffn"), x_cat)?;
                x_cat = add_norm(g, bound, &format!("{p}.norm2"), x_cat, f)?;
            }
            feats = row_ranges
                .iter()
                .map(|(s, t)| g.slice_rows(x_cat, *s, *t))
                .collect::<std::result::Result<Vec<_>, _>>()?;
        }

        // decoder: learned queries with learned sigmoid reference points
        let query_embed = bound.of("decoder.query_embed");
        let refs = g.sigmoid(bound.of("decoder.ref_logits"))?;
        let mut y = g.leaf(NumArray::zeros(&[cfg.queries, cfg.d_model]));
        let mut layers = Vec::with_capacity(cfg.decoder_layers);
        for dl in 0..cfg.decoder_layers {
            let p = format!("decoder.l{dl}");
            let sa = dense_self_attention(g, bound, &format!("{p}.self"), y, query_embed, cfg)?;
            y = add_norm(g, bound, &format!("{p}.norm1"), y, sa)?;
            let q_in = g.add(y, query_embed)?;
            let ca = deformable_attention(g, bound, &format!("{p}.cross"), q_in, refs, &feats, &level_dims, cfg)?;
            y = add_norm(g, bound, &format!("{p}.norm2"), y, ca)?;
            let f = ffn(g, bound, &format!("{p}.ffn"), y)?;
            y = add_norm(g, bound, &format!("{p}.norm3"), y, f)?;
            layers.push(self.predict_heads(g, bound, y)?);
        }
        Ok(ForwardOutput { image_node, layers, memory: feats, level_dims })
    }

    /// Class head (linear → softmax downstream) and 3-layer box MLP with a
    /// sigmoid keeping `(cx, cy, w, h)` in (0,1). Heads are shared across
    /// decoder layers.
    fn predict_heads(&self, g: &mut Graph, bound: &Bound, y: NodeId) -> Result<LayerPrediction> {
        let class_logits = g.linear(y, bound.of("head.class.w"), bound.of("head.class.b"))?;
        let b1 = g.linear(y, bound.of("head.box1.w"), bound.of("head.box1.b"))?;
        let b1 = g.relu(b1)?;
        let b2 = g.linear(b1, bound.of("head.box2.w"), bound.of("head.box2.b"))?;
        let b2 = g.relu(b2)?;
        let b3 = g.linear(b2, bound.of("head.box3.w"), bound.of("head.box3.b"))?;
        let boxes = g.sigmoid(b3)?;
        Ok(LayerPrediction { class_logits, boxes })
    }

    /// Inference convenience: one patch in, final-layer detections out.
    pub fn predict_patch(&self, image: &NumArray) -> Result<DetectionSet> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let out = self.forward(&mut g, &bound, image)?;
        let last = *out.final_layer();
        detection_set(&mut g, &last)
    }

    /// Re-initializes with another seed, keeping the config. Used by tests.
    pub fn reseeded(&self, seed: u64) -> Result<Self> {
        Self::new(self.config.clone(), seed)
    }
}

/// Conservative footprint of every query's bilinear reads for one
/// deformable-attention block: all in-range corner pixels of every sampling
/// point, per level. Computed from plain parameter values, outside any graph.
pub fn deform_sample_footprint(
    queries: &NumArray,
    ref_points: &NumArray,
    offset_w: &NumArray,
    offset_b: &NumArray,
    level_dims: &[(usize, usize)],
    cfg: &DetectorConfig,
) -> Vec<Vec<(usize, usize, usize)>> {
    let nq = queries.shape()[0];
    let d = queries.shape()[1];
    let (m, l, k) = (cfg.heads, cfg.levels, cfg.points_per_level);
    let mut out = Vec::with_capacity(nq);
    for q in 0..nq {
        let mut pixels = Vec::new();
        let rx = ref_points.at2(q, 0);
        let ry = ref_points.at2(q, 1);
        for head in 0..m {
            for (lvl, (h, w)) in level_dims.iter().enumerate() {
                let base_row = ry * *h as f64 - 0.5;
                let base_col = rx * *w as f64 - 0.5;
                for pt in 0..k {
                    let idx = (head * l + lvl) * k + pt;
                    let mut drow = offset_b.data()[idx * 2];
                    let mut dcol = offset_b.data()[idx * 2 + 1];
                    for c in 0..d {
                        drow += queries.at2(q, c) * offset_w.at2(c, idx * 2);
                        dcol += queries.at2(q, c) * offset_w.at2(c, idx * 2 + 1);
                    }
                    let row = base_row + drow;
                    let col = base_col + dcol;
                    let (r0, c0) = (row.floor() as isize, col.floor() as isize);
                    for (ri, ci) in [(r0, c0), (r0, c0 + 1), (r0 + 1, c0), (r0 + 1, c0 + 1)] {
                        if ri >= 0 && ri < *h as isize && ci >= 0 && ci < *w as isize {
                            pixels.push((lvl, ri as usize, ci as usize));
                        }
                    }
                }
            }
        }
        pixels.sort_unstable();
        pixels.dedup();
        out.push(pixels);
    }
    out
}
