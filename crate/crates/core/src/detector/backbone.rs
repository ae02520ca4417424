//! Convolutional feature extractor: three stride-2 stages with group norm
//! and ReLU, tapped after stages 2 and 3. A 1×1 lateral projection brings
//! the stage-2 tap up to the shared model width, so both pyramid levels
//! carry `d_model` channels.

use rand::Rng;

use super::{Bound, DetectorConfig, DetectorError, ParamSet, Result};
use crate::numerics::{Graph, NodeId, NumArray};

const GN_EPS: f64 = 1e-5;

fn kaiming_conv<R: Rng>(cout: usize, cin: usize, k: usize, rng: &mut R) -> NumArray {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    NumArray::randn(&[cout, cin, k, k], std, rng)
}

/// Declares backbone parameters in a fixed order.
pub(crate) fn declare_params<R: Rng>(params: &mut ParamSet, cfg: &DetectorConfig, rng: &mut R) {
    let (c1, c2) = cfg.stage_channels;
    let d = cfg.d_model;
    params.insert("backbone.conv1.w", kaiming_conv(c1, 1, 3, rng));
    params.insert("backbone.conv1.b", NumArray::zeros(&[c1]));
    params.insert("backbone.norm1.gamma", NumArray::full(&[c1], 1.0));
    params.insert("backbone.norm1.beta", NumArray::zeros(&[c1]));
    params.insert("backbone.conv2.w", kaiming_conv(c2, c1, 3, rng));
    params.insert("backbone.conv2.b", NumArray::zeros(&[c2]));
    params.insert("backbone.norm2.gamma", NumArray::full(&[c2], 1.0));
    params.insert("backbone.norm2.beta", NumArray::zeros(&[c2]));
    params.insert("backbone.conv3.w", kaiming_conv(d, c2, 3, rng));
    params.insert("backbone.conv3.b", NumArray::zeros(&[d]));
    params.insert("backbone.norm3.gamma", NumArray::full(&[d], 1.0));
    params.insert("backbone.norm3.beta", NumArray::zeros(&[d]));
    params.insert("backbone.lateral.w", kaiming_conv(d, c2, 1, rng));
    params.insert("backbone.lateral.b", NumArray::zeros(&[d]));
}

/// Feature pyramid from a `[1, H, W]` image: level 0 at stride 4, level 1 at
/// stride 8, both `d_model` channels.
pub(crate) fn forward(
    g: &mut Graph,
    bound: &Bound,
    image: NodeId,
    cfg: &DetectorConfig,
) -> Result<Vec<(NodeId, (usize, usize))>> {
    let shape = g.value(image).shape().to_vec();
    let (h, w) = match shape.as_slice() {
        [1, h, w] => (*h, *w),
        s => return Err(DetectorError::Contract(format!("backbone expects [1,H,W], got {s:?}"))),
    };
    if h % 8 != 0 || w % 8 != 0 {
        return Err(DetectorError::Contract(format!("input {w}x{h} must be divisible by 8")));
    }
    let stage = |g: &mut Graph, x: NodeId, idx: usize| -> Result<NodeId> {
        let conv = g.conv2d(
            x,
            bound.of(&format!("backbone.conv{idx}.w")),
            bound.of(&format!("backbone.conv{idx}.b")),
            2,
            1,
        )?;
        let normed = g.group_norm(
            conv,
            bound.of(&format!("backbone.norm{idx}.gamma")),
            bound.of(&format!("backbone.norm{idx}.beta")),
            cfg.norm_groups,
            GN_EPS,
        )?;
        Ok(g.relu(normed)?)
    };
    let s1 = stage(g, image, 1)?;
    let s2 = stage(g, s1, 2)?;
    let s3 = stage(g, s2, 3)?;
    let level0 = g.conv2d(s2, bound.of("backbone.lateral.w"), bound.of("backbone.lateral.b"), 1, 0)?;
    Ok(vec![(level0, (h / 4, w / 4)), (s3, (h / 8, w / 8))])
}
