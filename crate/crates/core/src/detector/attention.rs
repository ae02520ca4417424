//! Attention building blocks: multi-scale deformable attention, dense
//! multi-head self-attention, sinusoidal position encodings, and the
//! feed-forward / layer-norm plumbing shared by encoder and decoder layers.
//!
//! Deformable attention computes, per query and head, a set of sampling
//! offsets and softmax-normalized weights as affine functions of the query
//! embedding. The normalized reference point is scaled into each level's
//! pixel grid, offsets are added in pixel units, and values are read by
//! bilinear interpolation — so each query touches at most
//! `heads · levels · points` locations rather than every pixel.

use rand::Rng;

use super::{Bound, DetectorConfig, DetectorError, ParamSet, Result};
use crate::numerics::{Graph, NodeId, NumArray};

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> NumArray {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    NumArray::uniform(&[rows, cols], -a, a, rng)
}

/// Fixed 2-D sine/cosine encoding of pixel centers, `[H·W, D]`; the first
/// half of the channels encodes x, the second half y.
pub fn sine_position_encoding(h: usize, w: usize, d: usize) -> NumArray {
    assert!(d % 4 == 0, "d_model must be divisible by 4");
    let quarter = d / 4;
    let temperature: f64 = 10000.0;
    let mut data = vec![0.0; h * w * d];
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * d;
            let x = (j as f64 + 0.5) / w as f64;
            let y = (i as f64 + 0.5) / h as f64;
            for q in 0..quarter {
                let freq = temperature.powf(2.0 * q as f64 / (d / 2) as f64);
                data[base + 2 * q] = (x / freq).sin();
                data[base + 2 * q + 1] = (x / freq).cos();
                data[base + d / 2 + 2 * q] = (y / freq).sin();
                data[base + d / 2 + 2 * q + 1] = (y / freq).cos();
            }
        }
    }
    NumArray::from_vec(vec![h * w, d], data).expect("valid encoding")
}

/// Normalized `(x, y)` reference points of every pyramid pixel, stacked in
/// level order: `[Σ H_l·W_l, 2]`.
pub(crate) fn encoder_reference_points(level_dims: &[(usize, usize)]) -> NumArray {
    let total: usize = level_dims.iter().map(|(h, w)| h * w).sum();
    let mut data = Vec::with_capacity(total * 2);
    for (h, w) in level_dims {
        for i in 0..*h {
            for j in 0..*w {
                data.push((j as f64 + 0.5) / *w as f64);
                data.push((i as f64 + 0.5) / *h as f64);
            }
        }
    }
    NumArray::from_vec(vec![total, 2], data).expect("valid reference points")
}

// ── deformable attention ────────────────────────────────────────────────

/// Declares the parameters of one deformable-attention block under `prefix`.
/// Offset weights start at zero with a directional-spread bias, and the
/// weight head starts at zero so attention begins uniform.
pub(crate) fn declare_deform_params<R: Rng>(
    params: &mut ParamSet,
    prefix: &str,
    cfg: &DetectorConfig,
    rng: &mut R,
) {
    let d = cfg.d_model;
    let (m, l, k) = (cfg.heads, cfg.levels, cfg.points_per_level);
    let dh = d / m;
    // fractional radii and off-axis angles keep initial samples away from
    // exact bilinear knots, where the kink would defeat gradient checks
    let mut offset_bias = vec![0.0; m * l * k * 2];
    for head in 0..m {
        let angle = std::f64::consts::TAU * (head as f64 + 0.37) / m as f64;
        for lvl in 0..l {
            for pt in 0..k {
                let radius = pt as f64 + 0.731;
                let idx = ((head * l + lvl) * k + pt) * 2;
                offset_bias[idx] = angle.sin() * radius; // row displacement
                offset_bias[idx + 1] = angle.cos() * radius; // col displacement
            }
        }
    }
    params.insert(&format!("{prefix}.offset.w"), NumArray::zeros(&[d, m * l * k * 2]));
    params.insert(
        &format!("{prefix}.offset.b"),
        NumArray::from_vec(vec![m * l * k * 2], offset_bias).expect("offset bias"),
    );
    params.insert(&format!("{prefix}.weight.w"), NumArray::zeros(&[d, m * l * k]));
    params.insert(&format!("{prefix}.weight.b"), NumArray::zeros(&[m * l * k]));
    for head in 0..m {
        params.insert(&format!("{prefix}.value{head}.w"), xavier(d, dh, rng));
        params.insert(&format!("{prefix}.value{head}.b"), NumArray::zeros(&[dh]));
    }
    params.insert(&format!("{prefix}.out.w"), xavier(d, d, rng));
    params.insert(&format!("{prefix}.out.b"), NumArray::zeros(&[d]));
}

/// Multi-scale deformable attention.
///
/// * `queries` — `[Nq, D]` embeddings (content plus positional already mixed)
/// * `ref_points` — `[Nq, 2]` normalized `(x, y)` reference points
/// * `value_feats` — per-level `[H_l·W_l, D]` content features
pub(crate) fn deformable_attention(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    queries: NodeId,
    ref_points: NodeId,
    value_feats: &[NodeId],
    level_dims: &[(usize, usize)],
    cfg: &DetectorConfig,
) -> Result<NodeId> {
    let (m, l, k) = (cfg.heads, cfg.levels, cfg.points_per_level);
    let total_pixels: usize = level_dims.iter().map(|(h, w)| h * w).sum();
    if m * l * k >= total_pixels {
        return Err(DetectorError::Config(format!(
            "sampling budget {} must stay below the {total_pixels} available pixels",
            m * l * k
        )));
    }
    if value_feats.len() != l || level_dims.len() != l {
        return Err(DetectorError::Contract("level count mismatch".into()));
    }
    let offsets = {
        let mm = g.matmul(queries, bound.of(&format!("{prefix}.offset.w")))?;
        g.add_bias(mm, bound.of(&format!("{prefix}.offset.b")))?
    };
    let weight_logits = {
        let mm = g.matmul(queries, bound.of(&format!("{prefix}.weight.w")))?;
        g.add_bias(mm, bound.of(&format!("{prefix}.weight.b")))?
    };
    let ref_x = g.slice_cols(ref_points, 0, 1)?;
    let ref_y = g.slice_cols(ref_points, 1, 2)?;

    let mut head_outputs = Vec::with_capacity(m);
    for head in 0..m {
        let logits = g.slice_cols(weight_logits, head * l * k, (head + 1) * l * k)?;
        let attn = g.softmax(logits, 1)?;
        let mut acc: Option<NodeId> = None;
        for (lvl, (&vf, &(h, w))) in value_feats.iter().zip(level_dims).enumerate() {
            let value = {
                let mm = g.matmul(vf, bound.of(&format!("{prefix}.value{head}.w")))?;
                g.add_bias(mm, bound.of(&format!("{prefix}.value{head}.b")))?
            };
            let vmap = g.to_chw(value, h, w)?;
            // normalized reference scaled to this level's pixel grid, (row, col)
            let base_row = g.affine(ref_y, h as f64, -0.5)?;
            let base_col = g.affine(ref_x, w as f64, -0.5)?;
            let base = g.concat_cols(&[base_row, base_col])?;
            for pt in 0..k {
                let idx = (head * l + lvl) * k + pt;
                let off = g.slice_cols(offsets, idx * 2, idx * 2 + 2)?;
                let pts = g.add(base, off)?;
                let sample = g.bilinear_sample(vmap, pts)?;
                let wcol = g.slice_cols(attn, lvl * k + pt, lvl * k + pt + 1)?;
                let term = g.row_scale(sample, wcol)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => g.add(a, term)?,
                });
            }
        }
        head_outputs.push(acc.expect("at least one sample per head"));
    }
    let concat = g.concat_cols(&head_outputs)?;
    let mm = g.matmul(concat, bound.of(&format!("{prefix}.out.w")))?;
    Ok(g.add_bias(mm, bound.of(&format!("{prefix}.out.b")))?)
}

// ── dense multi-head self-attention ─────────────────────────────────────

pub(crate) fn declare_self_attn_params<R: Rng>(
    params: &mut ParamSet,
    prefix: &str,
    cfg: &DetectorConfig,
    rng: &mut R,
) {
    let d = cfg.d_model;
    let dh = d / cfg.heads;
    for head in 0..cfg.heads {
        for proj in ["q", "k", "v"] {
            params.insert(&format!("{prefix}.{proj}{head}.w"), xavier(d, dh, rng));
            params.insert(&format!("{prefix}.{proj}{head}.b"), NumArray::zeros(&[dh]));
        }
    }
    params.insert(&format!("{prefix}.out.w"), xavier(d, d, rng));
    params.insert(&format!("{prefix}.out.b"), NumArray::zeros(&[d]));
}

/// Standard dense attention among a small query set. Queries and keys carry
/// the positional embedding; values are content only.
pub(crate) fn dense_self_attention(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    content: NodeId,
    positional: NodeId,
    cfg: &DetectorConfig,
) -> Result<NodeId> {
    let dh = cfg.d_model / cfg.heads;
    let qk_input = g.add(content, positional)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let q = {
            let mm = g.matmul(qk_input, bound.of(&format!("{prefix}.q{head}.w")))?;
            g.add_bias(mm, bound.of(&format!("{prefix}.q{head}.b")))?
        };
        let k = {
            let mm = g.matmul(qk_input, bound.of(&format!("{prefix}.k{head}.w")))?;
            g.add_bias(mm, bound.of(&format!("{prefix}.k{head}.b")))?
        };
        let v = {
            let mm = g.matmul(content, bound.of(&format!("{prefix}.v{head}.w")))?;
            g.add_bias(mm, bound.of(&format!("{prefix}.v{head}.b")))?
        };
        let kt = g.transpose2(k)?;
        let scores_raw = g.matmul(q, kt)?;
        let scores = g.affine(scores_raw, scale, 0.0)?;
        let attn = g.softmax(scores, 1)?;
        heads.push(g.matmul(attn, v)?);
    }
    let concat = g.concat_cols(&heads)?;
    let mm = g.matmul(concat, bound.of(&format!("{prefix}.out.w")))?;
    Ok(g.add_bias(mm, bound.of(&format!("{prefix}.out.b")))?)
}

// ── feed-forward and norms ──────────────────────────────────────────────

pub(crate) fn declare_ffn_params<R: Rng>(params: &mut ParamSet, prefix: &str, cfg: &DetectorConfig, rng: &mut R) {
    params.insert(&format!("{prefix}.lin1.w"), xavier(cfg.d_model, cfg.ffn_hidden, rng));
    params.insert(&format!("{prefix}.lin1.b"), NumArray::zeros(&[cfg.ffn_hidden]));
    params.insert(&format!("{prefix}.lin2.w"), xavier(cfg.ffn_hidden, cfg.d_model, rng));
    params.insert(&format!("{prefix}.lin2.b"), NumArray::zeros(&[cfg.d_model]));
}

pub(crate) fn ffn(g: &mut Graph, bound: &Bound, prefix: &str, x: NodeId) -> Result<NodeId> {
    let h = g.linear(x, bound.of(&format!("{prefix}.lin1.w")), bound.of(&format!("{prefix}.lin1.b")))?;
    let h = g.relu(h)?;
    Ok(g.linear(h, bound.of(&format!("{prefix}.lin2.w")), bound.of(&format!("{prefix}.lin2.b")))?)
}

pub(crate) fn declare_norm_params(params: &mut ParamSet, prefix: &str, d: usize) {
    params.insert(&format!("{prefix}.gamma"), NumArray::full(&[d], 1.0));
    params.insert(&format!("{prefix}.beta"), NumArray::zeros(&[d]));
}

/// Residual add followed by layer norm.
pub(crate) fn add_norm(g: &mut Graph, bound: &Bound, prefix: &str, x: NodeId, dx: NodeId) -> Result<NodeId> {
    let sum = g.add(x, dx)?;
    Ok(g.layer_norm(sum, bound.of(&format!("{prefix}.gamma")), bound.of(&format!("{prefix}.beta")), LN_EPS)?)
}
