//! Numerics tests. Derived expectations are computed by independent oracles
//! (naive triple-loop matmul, compensated-summation softmax, four-corner
//! bilinear weighting) written here in test code only.

use rand::Rng;

use super::gradcheck::{grad_check, DEFAULT_EPS};
use super::graph::Graph;
use super::NumArray;
use crate::rng::stream;

fn randn(shape: &[usize], rng: &mut impl Rng) -> NumArray {
    NumArray::randn(shape, 1.0, rng)
}

// ── oracles ─────────────────────────────────────────────────────────────

/// Naive triple-loop matmul, independent of the graph's kernels.
fn matmul_oracle(a: &NumArray, b: &NumArray) -> Vec<f64> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.at2(i, p) * b.at2(p, j);
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Direct exp/sum softmax with Kahan-compensated summation.
fn softmax_oracle(x: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let mut sum = 0.0;
    let mut c = 0.0;
    for &e in &exps {
        let y = e - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    exps.iter().map(|e| e / sum).collect()
}

/// Straightforward four-corner weighted sum with zero padding.
fn bilinear_oracle(feat: &NumArray, row: f64, col: f64, ch: usize) -> f64 {
    let (h, w) = (feat.shape()[1], feat.shape()[2]);
    let fetch = |r: isize, c: isize| -> f64 {
        if r >= 0 && r < h as isize && c >= 0 && c < w as isize {
            feat.at3(ch, r as usize, c as usize)
        } else {
            0.0
        }
    };
    let r0 = row.floor();
    let c0 = col.floor();
    let dr = row - r0;
    let dc = col - c0;
    let (r0, c0) = (r0 as isize, c0 as isize);
    fetch(r0, c0) * (1.0 - dr) * (1.0 - dc)
        + fetch(r0, c0 + 1) * (1.0 - dr) * dc
        + fetch(r0 + 1, c0) * dr * (1.0 - dc)
        + fetch(r0 + 1, c0 + 1) * dr * dc
}

// ── linear ──────────────────────────────────────────────────────────────

#[test]
fn linear_identity_weights() {
    let mut g = Graph::new();
    let x = g.leaf(NumArray::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap());
    let w = g.leaf(NumArray::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let b = g.leaf(NumArray::zeros(&[2]));
    let y = g.linear(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0]);
}

#[test]
fn linear_zero_input_passes_bias() {
    let mut g = Graph::new();
    let x = g.leaf(NumArray::zeros(&[1, 2]));
    let w = g.leaf(NumArray::from_vec(vec![2, 2], vec![5.0, -1.0, 2.0, 7.0]).unwrap());
    let b = g.leaf(NumArray::from_vec(vec![2], vec![3.0, 4.0]).unwrap());
    let y = g.linear(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 4.0]);
}

#[test]
fn linear_matches_triple_loop_oracle() {
    let mut rng = stream(11, "linear-oracle");
    let a = randn(&[4, 3], &mut rng);
    let b = randn(&[3, 2], &mut rng);
    let expected = matmul_oracle(&a, &b);
    let mut g = Graph::new();
    let xa = g.leaf(a);
    let xb = g.leaf(b);
    let bias = g.leaf(NumArray::zeros(&[2]));
    let y = g.linear(xa, xb, bias).unwrap();
    for (got, want) in g.value(y).data().iter().zip(&expected) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn linear_shape_mismatch_is_error() {
    let mut g = Graph::new();
    let x = g.leaf(NumArray::zeros(&[2, 3]));
    let w = g.leaf(NumArray::zeros(&[4, 2]));
    let b = g.leaf(NumArray::zeros(&[2]));
    assert!(g.linear(x, w, b).is_err());
}

// ── softmax ─────────────────────────────────────────────────────────────

#[test]
fn softmax_symmetry() {
    let mut g = Graph::new();
    let x = g.leaf(NumArray::zeros(&[3]));
    let y = g.softmax(x, 0).unwrap();
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_saturation_no_overflow() {
    let mut g = Graph::new();
    let x = g.leaf(NumArray::from_vec(vec![3], vec![1000.0, 0.0, 0.0]).unwrap());
    let y = g.softmax(x, 0).unwrap();
    let d = g.value(y).data();
    assert!((d[0] - 1.0).abs() < 1e-12);
    assert!(d[1].abs() < 1e-12 && d[2].abs() < 1e-12);
}

#[test]
fn softmax_matches_direct_oracle() {
    let mut rng = stream(12, "softmax-oracle");
    let x = NumArray::uniform(&[16], -4.0, 4.0, &mut rng);
    let expected = softmax_oracle(x.data());
    let mut g = Graph::new();
    let xi = g.leaf(x);
    let y = g.softmax(xi, 0).unwrap();
    for (got, want) in g.value(y).data().iter().zip(&expected) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn softmax_sums_to_one_and_is_shift_invariant() {
    let mut rng = stream(13, "softmax-props");
    for _ in 0..50 {
        let x = NumArray::uniform(&[2, 7], -30.0, 30.0, &mut rng);
        let shifted = NumArray::from_vec(
            vec![2, 7],
            x.data().iter().map(|v| v + 17.25).collect(),
        )
        .unwrap();
        let mut g = Graph::new();
        let a = g.leaf(x);
        let b = g.leaf(shifted);
        let sa = g.softmax(a, 1).unwrap();
        let sb = g.softmax(b, 1).unwrap();
        for row in 0..2 {
            let sum: f64 = (0..7).map(|j| g.value(sa).at2(row, j)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        for (x1, x2) in g.value(sa).data().iter().zip(g.value(sb).data()) {
            assert!((x1 - x2).abs() < 1e-12);
        }
    }
}

// ── bilinear sampling ───────────────────────────────────────────────────

#[test]
fn bilinear_on_grid_node_returns_pixel() {
    let mut rng = stream(14, "bilinear-node");
    let feat = randn(&[3, 5, 6], &mut rng);
    let mut g = Graph::new();
    let f = g.leaf(feat.clone());
    let p = g.leaf(NumArray::from_vec(vec![1, 2], vec![2.0, 4.0]).unwrap());
    let y = g.bilinear_sample(f, p).unwrap();
    for ch in 0..3 {
        assert_eq!(g.value(y).at2(0, ch), feat.at3(ch, 2, 4));
    }
}

#[test]
fn bilinear_patch_center_is_mean_of_four() {
    let mut rng = stream(15, "bilinear-center");
    let feat = randn(&[2, 4, 4], &mut rng);
    let mut g = Graph::new();
    let f = g.leaf(feat.clone());
    let p = g.leaf(NumArray::from_vec(vec![1, 2], vec![1.5, 2.5]).unwrap());
    let y = g.bilinear_sample(f, p).unwrap();
    for ch in 0..2 {
        let mean = (feat.at3(ch, 1, 2) + feat.at3(ch, 1, 3) + feat.at3(ch, 2, 2) + feat.at3(ch, 2, 3)) / 4.0;
        assert!((g.value(y).at2(0, ch) - mean).abs() < 1e-12);
    }
}

#[test]
fn bilinear_matches_four_corner_oracle() {
    let mut rng = stream(16, "bilinear-oracle");
    let feat = randn(&[3, 8, 8], &mut rng);
    // includes out-of-bounds and margin points
    let pts: Vec<f64> = (0..100)
        .flat_map(|_| {
            let r = rng.gen_range(-3.0..11.0);
            let c = rng.gen_range(-3.0..11.0);
            [r, c]
        })
        .collect();
    let points = NumArray::from_vec(vec![100, 2], pts.clone()).unwrap();
    let mut g = Graph::new();
    let f = g.leaf(feat.clone());
    let p = g.leaf(points);
    let y = g.bilinear_sample(f, p).unwrap();
    for i in 0..100 {
        for ch in 0..3 {
            let want = bilinear_oracle(&feat, pts[i * 2], pts[i * 2 + 1], ch);
            assert!((g.value(y).at2(i, ch) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn bilinear_far_outside_returns_zero() {
    let mut rng = stream(17, "bilinear-out");
    let feat = randn(&[2, 4, 4], &mut rng);
    let mut g = Graph::new();
    let f = g.leaf(feat);
    let p = g.leaf(NumArray::from_vec(vec![2, 2], vec![-1.5, 2.0, 2.0, 4.5]).unwrap());
    let y = g.bilinear_sample(f, p).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn bilinear_is_linear_in_features() {
    let mut rng = stream(18, "bilinear-linearity");
    let f1 = randn(&[2, 6, 6], &mut rng);
    let f2 = randn(&[2, 6, 6], &mut rng);
    let (a, b) = (0.7, -1.3);
    let combo = NumArray::from_vec(
        vec![2, 6, 6],
        f1.data().iter().zip(f2.data()).map(|(x, y)| a * x + b * y).collect(),
    )
    .unwrap();
    let pts = NumArray::uniform(&[20, 2], -1.0, 7.0, &mut rng);
    let sample = |feat: NumArray, pts: NumArray| -> Vec<f64> {
        let mut g = Graph::new();
        let f = g.leaf(feat);
        let p = g.leaf(pts);
        let y = g.bilinear_sample(f, p).unwrap();
        g.value(y).data().to_vec()
    };
    let s1 = sample(f1, pts.clone());
    let s2 = sample(f2, pts.clone());
    let sc = sample(combo, pts);
    for i in 0..s1.len() {
        assert!((sc[i] - (a * s1[i] + b * s2[i])).abs() < 1e-12);
    }
}

// ── grad_check harness ──────────────────────────────────────────────────

#[test]
fn grad_check_quadratic() {
    let x = NumArray::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    let err = grad_check(
        |x| {
            let mut g = Graph::new();
            let xi = g.leaf(x.clone());
            let sq = g.mul(xi, xi)?;
            let s = g.sum_all(sq)?;
            let mut grads = g.backward(s)?;
            Ok((g.value(s).clone(), grads.take(xi).unwrap()))
        },
        &x,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < 1e-8, "err = {err}");
    // analytic gradient is [2, 4, 6]
    let mut g = Graph::new();
    let xi = g.leaf(x);
    let sq = g.mul(xi, xi).unwrap();
    let s = g.sum_all(sq).unwrap();
    let mut grads = g.backward(s).unwrap();
    assert_eq!(grads.take(xi).unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn grad_check_linear_softmax_chain() {
    let mut rng = stream(19, "chain");
    let w = randn(&[4, 3], &mut rng);
    let b = randn(&[3], &mut rng);
    let x = randn(&[2, 4], &mut rng);
    let err = grad_check(
        |x| {
            let mut g = Graph::new();
            let xi = g.leaf(x.clone());
            let wi = g.leaf(w.clone());
            let bi = g.leaf(b.clone());
            let y = g.linear(xi, wi, bi)?;
            let sm = g.softmax(y, 1)?;
            // weighted sum makes the scalar depend on every output
            let probe = g.leaf(NumArray::uniform(&[2, 3], 0.5, 2.0, &mut stream(20, "probe")));
            let weighted = g.mul(sm, probe)?;
            let s = g.sum_all(weighted)?;
            let mut grads = g.backward(s)?;
            Ok((g.value(s).clone(), grads.take(xi).unwrap()))
        },
        &x,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "err = {err}");
}

#[test]
fn grad_check_detects_wrong_backward_rule() {
    // deliberately wrong gradient: 3x instead of 2x for sum(x²)
    let x = NumArray::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    let err = grad_check(
        |x| {
            let v: f64 = x.data().iter().map(|v| v * v).sum();
            let g: Vec<f64> = x.data().iter().map(|v| 3.0 * v).collect();
            Ok((NumArray::scalar(v), NumArray::from_vec(vec![3], g)?))
        },
        &x,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err > 1e-2, "harness failed to flag wrong gradient: {err}");
}

#[test]
fn grad_check_rejects_non_scalar() {
    let x = NumArray::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
    let r = grad_check(|x| Ok((x.clone(), x.clone())), &x, DEFAULT_EPS);
    assert!(r.is_err());
}

// ── per-primitive gradient checks ───────────────────────────────────────

/// Runs grad_check on a scalarized probe of `build`'s output, with respect
/// to the input fed through `seed`.
fn check_primitive<F>(name: &str, x0: NumArray, build: F)
where
    F: Fn(&mut Graph, super::graph::NodeId) -> super::Result<super::graph::NodeId>,
{
    let probe_rng = &mut stream(99, name);
    let mut g0 = Graph::new();
    let xi0 = g0.leaf(x0.clone());
    let out0 = build(&mut g0, xi0).unwrap();
    let probe_shape = g0.value(out0).shape().to_vec();
    let probe = NumArray::uniform(&probe_shape, 0.5, 1.5, probe_rng);
    let err = grad_check(
        |x| {
            let mut g = Graph::new();
            let xi = g.leaf(x.clone());
            let out = build(&mut g, xi)?;
            let pr = g.leaf(probe.clone());
            let m = g.mul(out, pr)?;
            let s = g.sum_all(m)?;
            let mut grads = g.backward(s)?;
            Ok((g.value(s).clone(), grads.take(xi).unwrap()))
        },
        &x0,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < 1e-6, "{name}: grad error {err}");
}

#[test]
fn primitives_pass_grad_check() {
    let rng = &mut stream(21, "prims");
    let other = randn(&[3, 4], rng);
    let pos = NumArray::uniform(&[3, 4], 0.5, 2.0, rng);
    let x = randn(&[3, 4], rng);

    check_primitive("add", x.clone(), |g, xi| {
        let o = g.leaf(other.clone());
        g.add(xi, o)
    });
    check_primitive("sub", x.clone(), |g, xi| {
        let o = g.leaf(other.clone());
        g.sub(xi, o)
    });
    check_primitive("mul", x.clone(), |g, xi| {
        let o = g.leaf(other.clone());
        g.mul(xi, o)
    });
    check_primitive("div", x.clone(), |g, xi| {
        let o = g.leaf(pos.clone());
        g.div(xi, o)
    });
    check_primitive("div-denom", pos.clone(), |g, xi| {
        let o = g.leaf(other.clone());
        g.div(o, xi)
    });
    check_primitive("affine", x.clone(), |g, xi| g.affine(xi, 2.5, -1.0));
    check_primitive("matmul-a", x.clone(), |g, xi| {
        let o = g.leaf(randn(&[4, 5], &mut stream(22, "mm")));
        g.matmul(xi, o)
    });
    check_primitive("matmul-b", x.clone(), |g, xi| {
        let o = g.leaf(randn(&[5, 3], &mut stream(23, "mm2")));
        g.matmul(o, xi)
    });
    check_primitive("transpose", x.clone(), |g, xi| g.transpose2(xi));
    check_primitive("add_bias", x.clone(), |g, xi| {
        let b = g.leaf(randn(&[4], &mut stream(24, "bias")));
        g.add_bias(xi, b)
    });
    check_primitive("add_bias-b", randn(&[4], rng), |g, xi| {
        let m = g.leaf(randn(&[3, 4], &mut stream(25, "bias2")));
        g.add_bias(m, xi)
    });
    check_primitive("relu", NumArray::uniform(&[3, 4], 0.2, 2.0, rng), |g, xi| g.relu(xi));
    check_primitive("sigmoid", x.clone(), |g, xi| g.sigmoid(xi));
    check_primitive("abs", NumArray::uniform(&[3, 4], 0.3, 2.0, rng), |g, xi| g.abs(xi));
    check_primitive("emin", x.clone(), |g, xi| {
        let o = g.leaf(other.clone());
        g.emin(xi, o)
    });
    check_primitive("emax", x.clone(), |g, xi| {
        let o = g.leaf(other.clone());
        g.emax(xi, o)
    });
    check_primitive("softmax", x.clone(), |g, xi| g.softmax(xi, 1));
    check_primitive("row_scale-x", x.clone(), |g, xi| {
        let s = g.leaf(randn(&[3], &mut stream(26, "rs")));
        g.row_scale(xi, s)
    });
    check_primitive("row_scale-s", randn(&[3], rng), |g, xi| {
        let m = g.leaf(randn(&[3, 4], &mut stream(27, "rs2")));
        g.row_scale(m, xi)
    });
    check_primitive("select_rows", x.clone(), |g, xi| g.select_rows(xi, &[2, 0, 2]));
    check_primitive("slice_rows", x.clone(), |g, xi| g.slice_rows(xi, 1, 3));
    check_primitive("slice_cols", x.clone(), |g, xi| g.slice_cols(xi, 1, 3));
    check_primitive("concat_rows", x.clone(), |g, xi| {
        let o = g.leaf(other.clone());
        g.concat_rows(&[xi, o])
    });
    check_primitive("concat_cols", x.clone(), |g, xi| {
        let o = g.leaf(other.clone());
        g.concat_cols(&[xi, o])
    });
    check_primitive("reshape", x.clone(), |g, xi| g.reshape(xi, &[4, 3]));
    check_primitive("sum_all", x.clone(), |g, xi| g.sum_all(xi));
}

#[test]
fn structured_primitives_pass_grad_check() {
    let rng = &mut stream(28, "structured");
    let img = randn(&[2, 6, 6], rng);

    check_primitive("conv2d-x", img.clone(), |g, xi| {
        let w = g.leaf(randn(&[3, 2, 3, 3], &mut stream(29, "cw")));
        let b = g.leaf(randn(&[3], &mut stream(30, "cb")));
        g.conv2d(xi, w, b, 2, 1)
    });
    check_primitive("conv2d-w", randn(&[3, 2, 3, 3], rng), |g, xi| {
        let x = g.leaf(randn(&[2, 6, 6], &mut stream(31, "cx")));
        let b = g.leaf(randn(&[3], &mut stream(32, "cb2")));
        g.conv2d(x, xi, b, 1, 1)
    });
    check_primitive("conv2d-b", randn(&[3], rng), |g, xi| {
        let x = g.leaf(randn(&[2, 6, 6], &mut stream(33, "cx2")));
        let w = g.leaf(randn(&[3, 2, 3, 3], &mut stream(34, "cw2")));
        g.conv2d(x, w, xi, 1, 0)
    });
    check_primitive("group_norm-x", img.clone(), |g, xi| {
        let gamma = g.leaf(NumArray::uniform(&[2], 0.5, 1.5, &mut stream(35, "gn")));
        let beta = g.leaf(randn(&[2], &mut stream(36, "gn2")));
        g.group_norm(xi, gamma, beta, 2, 1e-5)
    });
    check_primitive("group_norm-gamma", randn(&[2], rng), |g, xi| {
        let x = g.leaf(randn(&[2, 6, 6], &mut stream(37, "gn3")));
        let beta = g.leaf(randn(&[2], &mut stream(38, "gn4")));
        g.group_norm(x, xi, beta, 1, 1e-5)
    });
    check_primitive("layer_norm-x", randn(&[3, 5], rng), |g, xi| {
        let gamma = g.leaf(NumArray::uniform(&[5], 0.5, 1.5, &mut stream(39, "ln")));
        let beta = g.leaf(randn(&[5], &mut stream(40, "ln2")));
        g.layer_norm(xi, gamma, beta, 1e-5)
    });
    check_primitive("layer_norm-gamma", randn(&[5], rng), |g, xi| {
        let x = g.leaf(randn(&[3, 5], &mut stream(41, "ln3")));
        let beta = g.leaf(randn(&[5], &mut stream(42, "ln4")));
        g.layer_norm(x, xi, beta, 1e-5)
    });
    check_primitive("bilinear-feat", randn(&[2, 5, 5], rng), |g, xi| {
        let p = g.leaf(NumArray::uniform(&[7, 2], 0.2, 3.7, &mut stream(43, "bp")));
        g.bilinear_sample(xi, p)
    });
    check_primitive("bilinear-points", NumArray::uniform(&[7, 2], 0.2, 3.7, rng), |g, xi| {
        let f = g.leaf(randn(&[2, 5, 5], &mut stream(44, "bf")));
        g.bilinear_sample(f, xi)
    });
    check_primitive("cross_entropy", randn(&[4, 3], rng), |g, xi| {
        g.cross_entropy(xi, &[0, 2, 1, 0], &[1.0, 0.5, 2.0])
    });
}

// ── graph mechanics ─────────────────────────────────────────────────────

#[test]
fn diamond_graph_gradient_matches_finite_differences() {
    // y = sum((x + x·x) · x): the same leaf feeds several paths, so the
    // sweep must accumulate contributions regardless of traversal order.
    let mut rng = stream(45, "diamond");
    let x0 = randn(&[4], &mut rng);
    let err = grad_check(
        |x| {
            let mut g = Graph::new();
            let xi = g.leaf(x.clone());
            let sq = g.mul(xi, xi)?;
            let sum = g.add(xi, sq)?;
            let prod = g.mul(sum, xi)?;
            let s = g.sum_all(prod)?;
            let mut grads = g.backward(s)?;
            Ok((g.value(s).clone(), grads.take(xi).unwrap()))
        },
        &x0,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < 1e-8, "err = {err}");
}

#[test]
fn non_finite_result_is_an_error_at_the_op() {
    let mut g = Graph::new();
    let a = g.leaf(NumArray::scalar(1.0));
    let b = g.leaf(NumArray::scalar(0.0));
    assert!(g.div(a, b).is_err());

    let mut g = Graph::new();
    let big = g.leaf(NumArray::full(&[2, 2], 1e308));
    assert!(g.add(big, big).is_err());
}

#[test]
fn backward_requires_scalar_root() {
    let mut g = Graph::new();
    let x = g.leaf(NumArray::zeros(&[2, 2]));
    assert!(g.backward(x).is_err());
}
