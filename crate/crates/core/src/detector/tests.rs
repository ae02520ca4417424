//! Detector tests: shape contracts, the constant-field and sparsity oracles
//! for deformable attention, gradient checks, and checkpoint round-trips.

use rand::Rng;

use super::attention::{declare_deform_params, deformable_attention};
use super::model::deform_sample_footprint;
use super::*;
use crate::numerics::gradcheck::{grad_check, DEFAULT_EPS};
use crate::numerics::{Graph, NumArray};
use crate::rng::stream;

fn tiny_config() -> DetectorConfig {
    DetectorConfig {
        patch_h: 16,
        patch_w: 16,
        d_model: 8,
        heads: 2,
        points_per_level: 2,
        levels: 2,
        stage_channels: (4, 8),
        norm_groups: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        queries: 4,
        ffn_hidden: 16,
        aux_loss: true,
    }
}

// ── backbone ────────────────────────────────────────────────────────────

#[test]
fn backbone_shapes_follow_stride_arithmetic() {
    let cfg = DetectorConfig::default();
    let det = Detector::new(cfg, 1).unwrap();
    let mut g = Graph::new();
    let bound = det.bind(&mut g);
    let img = NumArray::uniform(&[1, 64, 64], 0.0, 1.0, &mut stream(1, "img"));
    let out = det.forward(&mut g, &bound, &img).unwrap();
    assert_eq!(out.level_dims, vec![(16, 16), (8, 8)]);
    assert_eq!(g.value(out.memory[0]).shape(), &[256, 64]);
    assert_eq!(g.value(out.memory[1]).shape(), &[64, 64]);
}

#[test]
fn zero_image_and_zero_biases_give_zero_features() {
    let cfg = tiny_config();
    let mut det = Detector::new(cfg, 2).unwrap();
    // zero all backbone tensors except conv weights and norm gains
    for i in 0..det.params.len() {
        let name = det.params.name_at(i).to_string();
        if name.starts_with("backbone.") && (name.ends_with(".b") || name.ends_with(".beta")) {
            let shape = det.params.value_at(i).shape().to_vec();
            det.params.set(i, NumArray::zeros(&shape));
        }
    }
    let mut g = Graph::new();
    let bound = det.bind(&mut g);
    let img_node = g.leaf(NumArray::zeros(&[1, 16, 16]));
    let pyramid = super::backbone::forward(&mut g, &bound, img_node, &det.config).unwrap();
    for (node, _) in pyramid {
        assert!(g.value(node).data().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn backbone_grad_check_wrt_image() {
    let cfg = tiny_config();
    let det = Detector::new(cfg, 3).unwrap();
    let img0 = NumArray::uniform(&[1, 16, 16], 0.1, 1.0, &mut stream(3, "img"));
    let probe1 = NumArray::uniform(&[16, 8], 0.5, 1.5, &mut stream(3, "p1"));
    let probe2 = NumArray::uniform(&[4, 8], 0.5, 1.5, &mut stream(3, "p2"));
    let err = grad_check(
        |x| {
            let mut g = Graph::new();
            let bound = det.bind(&mut g);
            let img = g.leaf(x.clone());
            let pyramid = super::backbone::forward(&mut g, &bound, img, &det.config)
                .map_err(|e| crate::numerics::NumericsError::Contract(e.to_string()))?;
            let f0 = g.to_hwc(pyramid[0].0)?;
            let f1 = g.to_hwc(pyramid[1].0)?;
            let p1 = g.leaf(probe1.clone());
            let p2 = g.leaf(probe2.clone());
            let m1 = g.mul(f0, p1)?;
            let m2 = g.mul(f1, p2)?;
            let s1 = g.sum_all(m1)?;
            let s2 = g.sum_all(m2)?;
            let s = g.add(s1, s2)?;
            let mut grads = g.backward(s)?;
            Ok((g.value(s).clone(), grads.take(img).unwrap()))
        },
        &img0,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "backbone grad error {err}");
}

// ── deformable attention ────────────────────────────────────────────────

struct DeformFixture {
    cfg: DetectorConfig,
    params: ParamSet,
    queries: NumArray,
    refs: NumArray,
    feats: Vec<NumArray>,
    dims: Vec<(usize, usize)>,
}

fn deform_fixture(seed: u64, nq: usize) -> DeformFixture {
    let cfg = tiny_config();
    let rng = &mut stream(seed, "deform");
    let mut params = ParamSet::new();
    declare_deform_params(&mut params, "attn", &cfg, rng);
    // randomize the offset/weight heads so sampling positions are generic
    for name in ["attn.offset.w", "attn.offset.b", "attn.weight.w", "attn.weight.b"] {
        let i = params.position(name);
        let shape = params.value_at(i).shape().to_vec();
        params.set(i, NumArray::uniform(&shape, -0.8, 0.8, rng));
    }
    let dims = vec![(8, 8), (4, 4)];
    let feats = dims
        .iter()
        .map(|(h, w)| NumArray::randn(&[h * w, cfg.d_model], 1.0, rng))
        .collect();
    DeformFixture {
        cfg,
        params,
        queries: NumArray::randn(&[nq, 8], 1.0, rng),
        refs: NumArray::uniform(&[nq, 2], 0.25, 0.75, rng),
        feats,
        dims,
    }
}

fn run_deform(f: &DeformFixture, feats: &[NumArray], queries: &NumArray) -> NumArray {
    let mut g = Graph::new();
    let bound = Bound::new(&f.params, &mut g);
    let q = g.leaf(queries.clone());
    let r = g.leaf(f.refs.clone());
    let vf: Vec<_> = feats.iter().map(|x| g.leaf(x.clone())).collect();
    let out = deformable_attention(&mut g, &bound, "attn", q, r, &vf, &f.dims, &f.cfg).unwrap();
    g.value(out).clone()
}

#[test]
fn constant_field_collapses_to_projected_value() {
    let cfg = tiny_config();
    let rng = &mut stream(10, "const-field");
    let mut params = ParamSet::new();
    declare_deform_params(&mut params, "attn", &cfg, rng);
    // zero offsets and uniform weights
    for name in ["attn.offset.w", "attn.offset.b", "attn.weight.w", "attn.weight.b"] {
        let i = params.position(name);
        let shape = params.value_at(i).shape().to_vec();
        params.set(i, NumArray::zeros(&shape));
    }
    let c: Vec<f64> = (0..cfg.d_model).map(|i| 0.3 * i as f64 - 1.0).collect();
    let dims = vec![(8, 8), (4, 4)];
    let feats: Vec<NumArray> = dims
        .iter()
        .map(|(h, w)| {
            let mut data = Vec::with_capacity(h * w * cfg.d_model);
            for _ in 0..h * w {
                data.extend_from_slice(&c);
            }
            NumArray::from_vec(vec![h * w, cfg.d_model], data).unwrap()
        })
        .collect();
    // interior reference points: every scaled sample stays inside both
    // grids, so zero padding never dilutes the constant field
    let nq = 24;
    let refs = NumArray::uniform(&[nq, 2], 0.25, 0.75, &mut stream(10, "refs"));
    let queries = NumArray::randn(&[nq, cfg.d_model], 1.0, &mut stream(10, "q"));

    let mut g = Graph::new();
    let bound = Bound::new(&params, &mut g);
    let q = g.leaf(queries);
    let r = g.leaf(refs);
    let vf: Vec<_> = feats.iter().map(|x| g.leaf(x.clone())).collect();
    let out = deformable_attention(&mut g, &bound, "attn", q, r, &vf, &dims, &cfg).unwrap();

    // expected: out_proj(concat_heads(value_proj(c))) once, replicated
    let dh = cfg.d_model / cfg.heads;
    let mut concat = Vec::with_capacity(cfg.d_model);
    for head in 0..cfg.heads {
        let w = params.get(&format!("attn.value{head}.w"));
        let b = params.get(&format!("attn.value{head}.b"));
        for j in 0..dh {
            let mut s = b.data()[j];
            for i in 0..cfg.d_model {
                s += c[i] * w.at2(i, j);
            }
            concat.push(s);
        }
    }
    let ow = params.get("attn.out.w");
    let ob = params.get("attn.out.b");
    let expected: Vec<f64> = (0..cfg.d_model)
        .map(|j| {
            let mut s = ob.data()[j];
            for i in 0..cfg.d_model {
                s += concat[i] * ow.at2(i, j);
            }
            s
        })
        .collect();
    for qi in 0..nq {
        for j in 0..cfg.d_model {
            assert!(
                (g.value(out).at2(qi, j) - expected[j]).abs() < 1e-9,
                "query {qi} channel {j}"
            );
        }
    }
}

#[test]
fn untouched_pixels_cannot_change_a_query_output() {
    let f = deform_fixture(11, 6);
    let base = run_deform(&f, &f.feats, &f.queries);
    let footprint = deform_sample_footprint(
        &f.queries,
        &f.refs,
        f.params.get("attn.offset.w"),
        f.params.get("attn.offset.b"),
        &f.dims,
        &f.cfg,
    );
    let mut rng = stream(11, "probe");
    let mut probes = 0;
    while probes < 100 {
        let q = rng.gen_range(0..6);
        let lvl = rng.gen_range(0..2);
        let (h, w) = f.dims[lvl];
        let (pi, pj) = (rng.gen_range(0..h), rng.gen_range(0..w));
        if footprint[q].contains(&(lvl, pi, pj)) {
            continue;
        }
        probes += 1;
        let mut feats = f.feats.clone();
        let mut data = feats[lvl].data().to_vec();
        for ch in 0..f.cfg.d_model {
            data[(pi * w + pj) * f.cfg.d_model + ch] += 3.5 + ch as f64;
        }
        feats[lvl] = NumArray::from_vec(vec![h * w, f.cfg.d_model], data).unwrap();
        let perturbed = run_deform(&f, &feats, &f.queries);
        for j in 0..f.cfg.d_model {
            assert_eq!(
                base.at2(q, j),
                perturbed.at2(q, j),
                "query {q} changed after perturbing untouched pixel ({lvl},{pi},{pj})"
            );
        }
    }
}

#[test]
fn touched_pixels_do_change_the_query_output() {
    // sanity check that the footprint probe has teeth
    let f = deform_fixture(12, 4);
    let base = run_deform(&f, &f.feats, &f.queries);
    let footprint = deform_sample_footprint(
        &f.queries,
        &f.refs,
        f.params.get("attn.offset.w"),
        f.params.get("attn.offset.b"),
        &f.dims,
        &f.cfg,
    );
    let q = 0;
    let &(lvl, pi, pj) = footprint[q].first().expect("nonempty footprint");
    let (h, w) = f.dims[lvl];
    let mut feats = f.feats.clone();
    let mut data = feats[lvl].data().to_vec();
    for ch in 0..f.cfg.d_model {
        data[(pi * w + pj) * f.cfg.d_model + ch] += 10.0;
    }
    feats[lvl] = NumArray::from_vec(vec![h * w, f.cfg.d_model], data).unwrap();
    let perturbed = run_deform(&f, &feats, &f.queries);
    let diff: f64 = (0..f.cfg.d_model)
        .map(|j| (base.at2(q, j) - perturbed.at2(q, j)).abs())
        .sum();
    assert!(diff > 1e-9, "perturbing a sampled pixel must move the output");
}

#[test]
fn deformable_attention_grad_check_all_inputs() {
    let f = deform_fixture(13, 3);
    let probe = NumArray::uniform(&[3, 8], 0.5, 1.5, &mut stream(13, "probe"));
    // flatten (queries, feats0, feats1, offset.w, value0.w, out.w) into one
    // vector and check the whole thing at once
    let blocks: Vec<(&str, Vec<usize>)> = vec![
        ("queries", vec![3, 8]),
        ("feat0", vec![64, 8]),
        ("feat1", vec![16, 8]),
        ("attn.offset.w", f.params.get("attn.offset.w").shape().to_vec()),
        ("attn.weight.w", f.params.get("attn.weight.w").shape().to_vec()),
        ("attn.value0.w", f.params.get("attn.value0.w").shape().to_vec()),
        ("attn.out.w", f.params.get("attn.out.w").shape().to_vec()),
    ];
    let mut flat = Vec::new();
    flat.extend_from_slice(f.queries.data());
    flat.extend_from_slice(f.feats[0].data());
    flat.extend_from_slice(f.feats[1].data());
    for (name, _) in blocks.iter().skip(3) {
        flat.extend_from_slice(f.params.get(name).data());
    }
    let x0 = NumArray::from_vec(vec![flat.len()], flat).unwrap();
    let err = grad_check(
        |x| {
            let mut params = f.params.clone();
            let d = x.data();
            let mut off = 0;
            let mut take = |shape: &[usize]| {
                let n: usize = shape.iter().product();
                let arr = NumArray::from_vec(shape.to_vec(), d[off..off + n].to_vec()).unwrap();
                off += n;
                arr
            };
            let queries = take(&blocks[0].1);
            let feat0 = take(&blocks[1].1);
            let feat1 = take(&blocks[2].1);
            for (name, shape) in blocks.iter().skip(3) {
                let arr = take(shape);
                let i = params.position(name);
                params.set(i, arr);
            }
            let mut g = Graph::new();
            let bound = Bound::new(&params, &mut g);
            let q = g.leaf(queries);
            let r = g.leaf(f.refs.clone());
            let vf = vec![g.leaf(feat0), g.leaf(feat1)];
            let out = deformable_attention(&mut g, &bound, "attn", q, r, &vf, &f.dims, &f.cfg)
                .map_err(|e| crate::numerics::NumericsError::Contract(e.to_string()))?;
            let pr = g.leaf(probe.clone());
            let m = g.mul(out, pr)?;
            let s = g.sum_all(m)?;
            let mut grads = g.backward(s)?;
            // reassemble the flat gradient in block order
            let mut flat_grad = Vec::with_capacity(x.numel());
            flat_grad.extend_from_slice(grads.take(q).unwrap().data());
            flat_grad.extend_from_slice(grads.take(vf[0]).unwrap().data());
            flat_grad.extend_from_slice(grads.take(vf[1]).unwrap().data());
            for (name, shape) in blocks.iter().skip(3) {
                let id = bound.of(name);
                match grads.take(id) {
                    Some(gr) => flat_grad.extend_from_slice(gr.data()),
                    None => flat_grad.extend(std::iter::repeat(0.0).take(shape.iter().product())),
                }
            }
            Ok((g.value(s).clone(), NumArray::from_vec(vec![flat_grad.len()], flat_grad)?))
        },
        &x0,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "deformable attention grad error {err}");
}

#[test]
fn sampling_budget_violation_is_config_error() {
    let mut f = deform_fixture(14, 2);
    f.dims = vec![(2, 2), (1, 2)];
    f.feats = f
        .dims
        .iter()
        .map(|(h, w)| NumArray::randn(&[h * w, 8], 1.0, &mut stream(14, "f")))
        .collect();
    let mut g = Graph::new();
    let bound = Bound::new(&f.params, &mut g);
    let q = g.leaf(f.queries.clone());
    let r = g.leaf(f.refs.clone());
    let vf: Vec<_> = f.feats.iter().map(|x| g.leaf(x.clone())).collect();
    let err = deformable_attention(&mut g, &bound, "attn", q, r, &vf, &f.dims, &f.cfg);
    assert!(matches!(err, Err(DetectorError::Config(_))));
}

// ── encoder / decoder / heads ───────────────────────────────────────────

#[test]
fn zero_encoder_layers_is_identity_on_the_pyramid() {
    let mut cfg = tiny_config();
    cfg.encoder_layers = 0;
    let det = Detector::new(cfg, 20).unwrap();
    let img = NumArray::uniform(&[1, 16, 16], 0.0, 1.0, &mut stream(20, "img"));
    let mut g = Graph::new();
    let bound = det.bind(&mut g);
    let out = det.forward(&mut g, &bound, &img).unwrap();
    // recompute the raw backbone features and compare
    let mut g2 = Graph::new();
    let bound2 = det.bind(&mut g2);
    let img_node = g2.leaf(img.clone());
    let pyramid = super::backbone::forward(&mut g2, &bound2, img_node, &det.config).unwrap();
    for (lvl, (node, _)) in pyramid.iter().enumerate() {
        let hwc = g2.to_hwc(*node).unwrap();
        assert_eq!(g.value(out.memory[lvl]).data(), g2.value(hwc).data());
    }
}

#[test]
fn forward_shapes_hold_over_random_configs() {
    let mut rng = stream(21, "fuzz-cfg");
    for trial in 0..20 {
        let heads = [1, 2, 4][rng.gen_range(0..3)];
        let d_model = heads * 4 * rng.gen_range(1..3);
        let cfg = DetectorConfig {
            patch_h: 16,
            patch_w: 16,
            d_model,
            heads,
            points_per_level: rng.gen_range(1..3),
            levels: 2,
            stage_channels: (4, 8),
            norm_groups: 2,
            encoder_layers: rng.gen_range(0..3),
            decoder_layers: rng.gen_range(1..3),
            queries: rng.gen_range(1..9),
            ffn_hidden: rng.gen_range(4..33),
            aux_loss: true,
        };
        if d_model % 2 != 0 {
            continue;
        }
        let det = Detector::new(cfg.clone(), 100 + trial).unwrap();
        let img = NumArray::uniform(&[1, 16, 16], 0.0, 1.0, &mut rng);
        let mut g = Graph::new();
        let bound = det.bind(&mut g);
        let out = det.forward(&mut g, &bound, &img).unwrap();
        assert_eq!(out.layers.len(), cfg.decoder_layers);
        for layer in &out.layers {
            assert_eq!(g.value(layer.class_logits).shape(), &[cfg.queries, 2]);
            assert_eq!(g.value(layer.boxes).shape(), &[cfg.queries, 4]);
        }
        assert_eq!(out.level_dims, vec![(4, 4), (2, 2)]);
    }
}

#[test]
fn permuting_queries_permutes_outputs() {
    let cfg = tiny_config();
    let det = Detector::new(cfg.clone(), 22).unwrap();
    let img = NumArray::uniform(&[1, 16, 16], 0.0, 1.0, &mut stream(22, "img"));
    let base = det.predict_patch(&img).unwrap();

    let perm = [2usize, 0, 3, 1];
    let mut permuted = det.clone();
    for name in ["decoder.query_embed", "decoder.ref_logits"] {
        let i = permuted.params.position(name);
        let v = permuted.params.value_at(i).clone();
        let cols = v.shape()[1];
        let mut data = vec![0.0; v.numel()];
        for (new_row, &old_row) in perm.iter().enumerate() {
            for c in 0..cols {
                data[new_row * cols + c] = v.at2(old_row, c);
            }
        }
        permuted.params.set(i, NumArray::from_vec(v.shape().to_vec(), data).unwrap());
    }
    let shuffled = permuted.predict_patch(&img).unwrap();
    for (new_row, &old_row) in perm.iter().enumerate() {
        for j in 0..2 {
            assert!(
                (base.probs[old_row][j] - shuffled.probs[new_row][j]).abs() < 1e-9,
                "prob mismatch at query {old_row}"
            );
        }
        for j in 0..4 {
            assert!(
                (base.boxes[old_row][j] - shuffled.boxes[new_row][j]).abs() < 1e-9,
                "box mismatch at query {old_row}"
            );
        }
    }
}

#[test]
fn zero_head_weights_give_uniform_predictions() {
    let cfg = tiny_config();
    let mut det = Detector::new(cfg, 23).unwrap();
    for i in 0..det.params.len() {
        if det.params.name_at(i).starts_with("head.") {
            let shape = det.params.value_at(i).shape().to_vec();
            det.params.set(i, NumArray::zeros(&shape));
        }
    }
    let img = NumArray::uniform(&[1, 16, 16], 0.0, 1.0, &mut stream(23, "img"));
    let det_set = det.predict_patch(&img).unwrap();
    for p in &det_set.probs {
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }
    for b in &det_set.boxes {
        for v in b {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }
}

#[test]
fn probabilities_sum_to_one() {
    let det = Detector::new(tiny_config(), 24).unwrap();
    let mut rng = stream(24, "fuzz");
    for _ in 0..10 {
        let img = NumArray::uniform(&[1, 16, 16], 0.0, 2.0, &mut rng);
        let ds = det.predict_patch(&img).unwrap();
        ds.validate().unwrap();
        for p in &ds.probs {
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn heads_grad_check() {
    let det = Detector::new(tiny_config(), 25).unwrap();
    let y0 = NumArray::randn(&[4, 8], 1.0, &mut stream(25, "y"));
    let probe_l = NumArray::uniform(&[4, 2], 0.5, 1.5, &mut stream(25, "pl"));
    let probe_b = NumArray::uniform(&[4, 4], 0.5, 1.5, &mut stream(25, "pb"));
    let err = grad_check(
        |y| {
            let mut g = Graph::new();
            let bound = det.bind(&mut g);
            let yn = g.leaf(y.clone());
            let pred = det_heads(&det, &mut g, &bound, yn)?;
            let pl = g.leaf(probe_l.clone());
            let pb = g.leaf(probe_b.clone());
            let m1 = g.mul(pred.class_logits, pl)?;
            let m2 = g.mul(pred.boxes, pb)?;
            let s1 = g.sum_all(m1)?;
            let s2 = g.sum_all(m2)?;
            let s = g.add(s1, s2)?;
            let mut grads = g.backward(s)?;
            Ok((g.value(s).clone(), grads.take(yn).unwrap()))
        },
        &y0,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "heads grad error {err}");
}

fn det_heads(
    _det: &Detector,
    g: &mut Graph,
    bound: &Bound,
    y: crate::numerics::NodeId,
) -> crate::numerics::Result<LayerPrediction> {
    let class_logits = g.linear(y, bound.of("head.class.w"), bound.of("head.class.b"))?;
    let b1 = g.linear(y, bound.of("head.box1.w"), bound.of("head.box1.b"))?;
    let b1 = g.relu(b1)?;
    let b2 = g.linear(b1, bound.of("head.box2.w"), bound.of("head.box2.b"))?;
    let b2 = g.relu(b2)?;
    let b3 = g.linear(b2, bound.of("head.box3.w"), bound.of("head.box3.b"))?;
    let boxes = g.sigmoid(b3)?;
    Ok(LayerPrediction { class_logits, boxes })
}

#[test]
fn full_forward_grad_check_wrt_image() {
    let det = Detector::new(tiny_config(), 26).unwrap();
    let img0 = NumArray::uniform(&[1, 16, 16], 0.1, 1.0, &mut stream(26, "img"));
    let probe_l = NumArray::uniform(&[4, 2], 0.5, 1.5, &mut stream(26, "pl"));
    let probe_b = NumArray::uniform(&[4, 4], 0.5, 1.5, &mut stream(26, "pb"));
    let err = grad_check(
        |x| {
            let mut g = Graph::new();
            let bound = det.bind(&mut g);
            let img = g.leaf(x.clone());
            let out = det
                .forward_from(&mut g, &bound, img)
                .map_err(|e| crate::numerics::NumericsError::Contract(e.to_string()))?;
            let last = *out.final_layer();
            let pl = g.leaf(probe_l.clone());
            let pb = g.leaf(probe_b.clone());
            let m1 = g.mul(last.class_logits, pl)?;
            let m2 = g.mul(last.boxes, pb)?;
            let s1 = g.sum_all(m1)?;
            let s2 = g.sum_all(m2)?;
            let s = g.add(s1, s2)?;
            let mut grads = g.backward(s)?;
            Ok((g.value(s).clone(), grads.take(img).unwrap()))
        },
        &img0,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "full forward grad error {err}");
}

// ── determinism and checkpoints ─────────────────────────────────────────

#[test]
fn construction_and_forward_are_deterministic() {
    let a = Detector::new(tiny_config(), 30).unwrap();
    let b = Detector::new(tiny_config(), 30).unwrap();
    assert_eq!(a, b);
    let img = NumArray::uniform(&[1, 16, 16], 0.0, 1.0, &mut stream(30, "img"));
    let da = a.predict_patch(&img).unwrap();
    let db = b.predict_patch(&img).unwrap();
    assert_eq!(da, db);
    let c = Detector::new(tiny_config(), 31).unwrap();
    assert_ne!(a, c);
}

#[test]
fn checkpoint_round_trip_preserves_detector() {
    let det = Detector::new(tiny_config(), 32).unwrap();
    let mut ckpt = Checkpoint::from_detector(&det);
    ckpt.meta = serde_json::json!({"epoch": 3});
    ckpt.extra.push(("adam.m.0".into(), NumArray::full(&[4], 0.25)));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(ckpt, back);
    let restored = Detector::from_checkpoint(&back).unwrap();
    assert_eq!(det, restored);
    let img = NumArray::uniform(&[1, 16, 16], 0.0, 1.0, &mut stream(32, "img"));
    assert_eq!(det.predict_patch(&img).unwrap(), restored.predict_patch(&img).unwrap());
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let det = Detector::new(tiny_config(), 33).unwrap();
    let ckpt = Checkpoint::from_detector(&det);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());

    // truncation is also caught
    save_checkpoint(&path, &ckpt).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn config_validation_catches_bad_setups() {
    let mut cfg = tiny_config();
    cfg.heads = 3;
    assert!(cfg.validate().is_err()); // 8 % 3 != 0
    let mut cfg = tiny_config();
    cfg.patch_w = 20;
    assert!(cfg.validate().is_err()); // not divisible by 8
    let mut cfg = tiny_config();
    cfg.points_per_level = 10;
    assert!(cfg.validate().is_err()); // budget 2*2*10 = 40 >= 20 pixels
    let mut cfg = tiny_config();
    cfg.decoder_layers = 0;
    assert!(cfg.validate().is_err());
}
