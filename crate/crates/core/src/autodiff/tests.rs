use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::Tensor;

macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol) = ($a as f64, $b as f64, $tol as f64);
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }};
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct evaluation of the convolution sum with explicit zero padding.
fn naive_conv(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    b: &Tensor<f64>,
    padding: Padding,
    stride: usize,
) -> Tensor<f64> {
    let (n, h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let (pt, pl) = match padding {
        Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
        Padding::Valid => (0, 0),
    };
    let (ho, wo) = match padding {
        Padding::Same => (h.div_ceil(stride), w.div_ceil(stride)),
        Padding::Valid => ((h - kh) / stride + 1, (w - kw) / stride + 1),
    };
    let mut out = Vec::new();
    for bi in 0..n {
        for i in 0..ho {
            for j in 0..wo {
                for co in 0..cout {
                    let mut acc = b.data()[co];
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let ii = (i * stride + ki) as i64 - pt as i64;
                            let jj = (j * stride + kj) as i64 - pl as i64;
                            if ii < 0 || jj < 0 || ii >= h as i64 || jj >= w as i64 {
                                continue;
                            }
                            for ci in 0..cin {
                                acc += x.get(&[bi, ii as usize, jj as usize, ci])
                                    * k.get(&[ki, kj, ci, co]);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(&[n, ho, wo, cout], out).unwrap()
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::<f64>::new();
    let x = g.leaf(random(&[2, 3, 4, 1], &mut rng));
    let k = g.leaf(t(&[1, 1, 1, 1], &[1.0]));
    let b = g.leaf(t(&[1], &[0.0]));
    let y = g.conv2d(x, k, b, Padding::Same, 1).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn conv_valid_hand_sum() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
    let k = g.leaf(t(&[2, 2, 1, 1], &[1.0; 4]));
    let b = g.leaf(t(&[1], &[0.0]));
    let y = g.conv2d(x, k, b, Padding::Valid, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).item(), 10.0);
}

#[test]
fn conv_zero_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::<f64>::new();
    let x = g.leaf(random(&[1, 5, 3, 2], &mut rng));
    let k = g.leaf(Tensor::zeros(&[3, 3, 2, 4]));
    let b = g.leaf(Tensor::zeros(&[4]));
    let y = g.conv2d(x, k, b, Padding::Same, 1).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    assert_eq!(g.shape(y), &[1, 5, 3, 4]);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros(&[1, 3, 3, 2]));
    let k = g.leaf(Tensor::zeros(&[3, 3, 3, 1]));
    let b = g.leaf(Tensor::zeros(&[1]));
    assert!(matches!(
        g.conv2d(x, k, b, Padding::Same, 1),
        Err(crate::Error::InvalidShape(_))
    ));
}

#[test]
fn conv_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (padding, stride, h, w) in [
        (Padding::Same, 1, 5, 4),
        (Padding::Same, 2, 7, 5),
        (Padding::Valid, 1, 6, 5),
        (Padding::Valid, 2, 7, 6),
    ] {
        let x = random(&[2, h, w, 3], &mut rng);
        let k = random(&[3, 3, 3, 4], &mut rng);
        let b = random(&[4], &mut rng);
        let mut g = Graph::<f64>::new();
        let (xv, kv, bv) = (g.leaf(x.clone()), g.leaf(k.clone()), g.leaf(b.clone()));
        let y = g.conv2d(xv, kv, bv, padding, stride).unwrap();
        let expected = naive_conv(&x, &k, &b, padding, stride);
        assert_eq!(g.shape(y), expected.shape());
        for (a, e) in g.value(y).data().iter().zip(expected.data()) {
            assert_close!(*a, *e, 1e-12);
        }
    }
}

#[test]
fn pool_spatial_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
    let avg = g.pool_spatial(x, PoolMode::Avg).unwrap();
    let max = g.pool_spatial(x, PoolMode::Max).unwrap();
    assert_eq!(g.value(avg).item(), 2.5);
    assert_eq!(g.value(max).item(), 4.0);

    let c = g.leaf(Tensor::full(&[1, 3, 2, 2], 0.7));
    let avg = g.pool_spatial(c, PoolMode::Avg).unwrap();
    let max = g.pool_spatial(c, PoolMode::Max).unwrap();
    assert_eq!(g.shape(avg), &[1, 1, 1, 2]);
    for (a, m) in g.value(avg).data().iter().zip(g.value(max).data()) {
        assert_close!(*a, 0.7, 1e-15);
        assert_eq!(*m, 0.7);
    }

    let px = g.leaf(t(&[1, 1, 1, 3], &[-1.0, 0.5, 2.0]));
    let avg = g.pool_spatial(px, PoolMode::Avg).unwrap();
    let max = g.pool_spatial(px, PoolMode::Max).unwrap();
    assert_eq!(g.value(avg).data(), g.value(px).data());
    assert_eq!(g.value(max).data(), g.value(px).data());
}

#[test]
fn pool_channel_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[1, 1, 1, 2], &[-1.0, 5.0]));
    let avg = g.pool_channel(x, PoolMode::Avg).unwrap();
    let max = g.pool_channel(x, PoolMode::Max).unwrap();
    assert_eq!(g.value(avg).item(), 2.0);
    assert_eq!(g.value(max).item(), 5.0);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let single = g.leaf(random(&[2, 3, 2, 1], &mut rng));
    let avg = g.pool_channel(single, PoolMode::Avg).unwrap();
    assert_eq!(g.value(avg).data(), g.value(single).data());

    let constant = g.leaf(Tensor::full(&[1, 2, 2, 3], -0.25));
    let avg = g.pool_channel(constant, PoolMode::Avg).unwrap();
    let max = g.pool_channel(constant, PoolMode::Max).unwrap();
    assert_eq!(g.value(avg).data(), g.value(max).data());
}

#[test]
fn dense_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[1, 2], &[1.0, 3.0]));
    let eye = g.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let zero_b = g.leaf(Tensor::zeros(&[2]));
    let ones_b = g.leaf(t(&[2], &[1.0, 1.0]));
    let y = g.dense(x, eye, zero_b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 3.0]);
    let y = g.dense(x, eye, ones_b).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 4.0]);
    let zero_w = g.leaf(Tensor::zeros(&[2, 2]));
    let y = g.dense(x, zero_w, ones_b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 1.0]);
    let bad = g.leaf(Tensor::zeros(&[3, 2]));
    assert!(g.dense(x, bad, ones_b).is_err());
}

#[test]
fn pointwise_examples() {
    assert_eq!(sigmoid(0.0f64), 0.5);
    assert_close!(sigmoid(2.0f32), 0.880_797_1, 1e-7);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::<f64>::new();
    let x = g.leaf(random(&[2, 3, 2, 4], &mut rng));
    let gate = g.leaf(Tensor::full(&[2, 1, 1, 4], 1.0));
    let y = g.mul(x, gate).unwrap();
    assert_eq!(g.value(y), g.value(x));
    let bad = g.leaf(Tensor::zeros(&[2, 2, 1, 4]));
    assert!(g.mul(x, bad).is_err());
}

#[test]
fn backward_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[3], &[0.5, -1.0, 2.0]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0; 3]);

    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2], &[1.0, 2.0]));
    let off_path = g.leaf(t(&[2], &[7.0, 7.0]));
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    assert!(g.grad(off_path).is_none());
    assert_eq!(g.grad_or_zeros(off_path).data(), &[0.0, 0.0]);

    let not_scalar = sq;
    assert!(matches!(g.backward(not_scalar), Err(crate::Error::Precondition(_))));
}

#[test]
fn max_pool_backward_routes_to_first_maximum() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[1, 2, 2, 1], &[3.0, 1.0, 3.0, 3.0]));
    let m = g.pool_spatial(x, PoolMode::Max).unwrap();
    let l = g.sum(m);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn relu_gradient_is_zero_at_the_kink() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[3], &[-1.0, 0.0, 1.0]));
    let r = g.relu(x);
    let l = g.sum(r);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn exp_clamp_passes_gradient_at_clamp_point() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2], &[1.0, 40.0]));
    let e = g.exp_clamped(x, 30.0);
    assert_eq!(g.value(e).data(), &[1f64.exp(), 30f64.exp()]);
    let l = g.sum(e);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1f64.exp(), 30f64.exp()]);
}

#[test]
fn slice_concat_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = Graph::<f64>::new();
    let x = g.leaf(random(&[2, 6, 3, 2], &mut rng));
    let parts: Vec<_> = (0..3).map(|i| g.slice(x, 1, 2 * i, 2).unwrap()).collect();
    let back = g.concat(&parts, 1).unwrap();
    assert_eq!(g.value(back), g.value(x));
}

#[test]
fn quadratic_gradcheck_is_tight() {
    let params = vec![("p".to_string(), t(&[1], &[0.7]))];
    let reports = finite_diff_check(
        &params,
        |g, p| {
            let sq = g.mul(p[0], p[0])?;
            let s = g.scale(sq, 3.0);
            Ok(g.sum(s))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(reports[0].passed);
    assert!(reports[0].max_rel_err < 1e-6, "{:?}", reports[0]);
}

#[test]
fn gradcheck_rejects_bad_step() {
    let params = vec![("p".to_string(), t(&[1], &[0.7]))];
    let opts = GradCheckOptions {
        eps: 0.0,
        ..Default::default()
    };
    let r = finite_diff_check(&params, |g, p| Ok(g.sum(p[0])), &opts);
    assert!(matches!(r, Err(crate::Error::Precondition(_))));
}

#[test]
fn gradcheck_aborts_on_non_finite_loss() {
    let params = vec![("p".to_string(), t(&[1], &[0.7]))];
    let r = finite_diff_check(
        &params,
        |g, p| {
            let s = g.scale(p[0], f64::INFINITY);
            Ok(g.sum(s))
        },
        &GradCheckOptions::default(),
    );
    assert!(matches!(r, Err(crate::Error::NonFinite(_))));
}

/// A small graph touching every op, with random inputs.
fn every_op_loss(g: &mut Graph<f64>, p: &[Var]) -> crate::Result<Var> {
    let (x, k, b, w, wb, other) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    let c = g.conv2d(x, k, b, Padding::Same, 2)?;
    let c = g.relu(c);
    let top = g.slice(c, 1, 0, 1)?;
    let bottom = g.slice(c, 1, 1, 1)?;
    let c = g.concat(&[bottom, top], 1)?;
    let avg = g.pool_spatial(c, PoolMode::Avg)?;
    let max = g.pool_spatial(c, PoolMode::Max)?;
    let pooled = g.add(avg, max)?;
    let gate = g.sigmoid(pooled);
    let gated = g.mul(c, gate)?;
    let ch_avg = g.pool_channel(gated, PoolMode::Avg)?;
    let ch_max = g.pool_channel(gated, PoolMode::Max)?;
    let both = g.concat(&[ch_avg, ch_max], 3)?;
    let both = g.pool_channel(both, PoolMode::Avg)?;
    let delta = g.sub(ch_max, both)?;
    let sp = g.mul(gated, delta)?;
    let flat_len = g.value(sp).numel() / 2;
    let flat = g.reshape(sp, &[2, flat_len])?;
    let logits = g.dense(flat, w, wb)?;
    let ce = g.cross_entropy(logits, &[1, 0])?;
    let picked = g.gather_rows(other, &[1, 1])?;
    let diff = g.sub(logits, picked)?;
    let sq = g.mul(diff, diff)?;
    let rows = g.sum_last(sq);
    let shifted = g.add_scalar(rows, -0.01);
    let hinge = g.relu(shifted);
    let s = g.sum(hinge);
    let s = g.scale(s, 0.1);
    let e = g.exp_clamped(s, 30.0);
    let total = g.add(ce, e)?;
    Ok(total)
}

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<(String, Tensor<f64>)> = vec![
            ("x".into(), random(&[2, 4, 3, 2], &mut rng)),
            ("k".into(), random(&[3, 3, 2, 3], &mut rng)),
            ("b".into(), random(&[3], &mut rng)),
            ("w".into(), random(&[2 * 2 * 3, 3], &mut rng)),
            ("wb".into(), random(&[3], &mut rng)),
            ("other".into(), random(&[2, 3], &mut rng)),
        ];
        let reports = finite_diff_check(&params, every_op_loss, &GradCheckOptions::default()).unwrap();
        for r in &reports {
            assert!(r.passed, "seed {seed}: {r:?}");
            assert!(r.checked > 0, "seed {seed}: {r:?}");
        }
    }
}

#[test]
fn corrupted_backward_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params: Vec<(String, Tensor<f64>)> = vec![
        ("x".into(), random(&[2, 4, 3, 2], &mut rng)),
        ("k".into(), random(&[3, 3, 2, 3], &mut rng)),
        ("b".into(), random(&[3], &mut rng)),
        ("w".into(), random(&[2 * 2 * 3, 3], &mut rng)),
        ("wb".into(), random(&[3], &mut rng)),
        ("other".into(), random(&[2, 3], &mut rng)),
    ];
    let reports = finite_diff_check_with(
        &params,
        every_op_loss,
        &GradCheckOptions::default(),
        &|g| g.inject_backward_fault(OpKind::Sigmoid, 1.5),
    )
    .unwrap();
    assert!(reports.iter().any(|r| !r.passed));
}

proptest! {
    #[test]
    fn sigmoid_bounded_and_monotone(a in -1e4f32..1e4, b in -1e4f32..1e4) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (sl, sh) = (sigmoid(lo), sigmoid(hi));
        prop_assert!(sl > 0.0 && sl < 1.0);
        prop_assert!(sh > 0.0 && sh < 1.0);
        prop_assert!(sl <= sh);
    }

    #[test]
    fn conv_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1 = random(&[1, 4, 3, 2], &mut rng);
        let x2 = random(&[1, 4, 3, 2], &mut rng);
        let k1 = random(&[3, 3, 2, 2], &mut rng);
        let k2 = random(&[3, 3, 2, 2], &mut rng);
        let zero = Tensor::zeros(&[2]);
        let conv = |x: &Tensor<f64>, k: &Tensor<f64>| {
            let mut g = Graph::<f64>::new();
            let (xv, kv, bv) = (g.leaf(x.clone()), g.leaf(k.clone()), g.leaf(zero.clone()));
            let y = g.conv2d(xv, kv, bv, Padding::Same, 1).unwrap();
            g.value(y).clone()
        };
        let mix = |p: &Tensor<f64>, q: &Tensor<f64>| {
            Tensor::new(p.shape(), p.data().iter().zip(q.data()).map(|(u, v)| a * u + b * v).collect()).unwrap()
        };
        let lhs = conv(&mix(&x1, &x2), &k1);
        let rhs = mix(&conv(&x1, &k1), &conv(&x2, &k1));
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() <= 1e-5);
        }
        let lhs = conv(&x1, &mix(&k1, &k2));
        let rhs = mix(&conv(&x1, &k1), &conv(&x1, &k2));
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() <= 1e-5);
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = random(&[2, 3], &mut rng);
        let w0 = random(&[3, 2], &mut rng);
        let grads = |which: u8| {
            let mut g = Graph::<f64>::new();
            let x = g.leaf(x0.clone());
            let w = g.leaf(w0.clone());
            let b = g.leaf(Tensor::zeros(&[2]));
            let y = g.dense(x, w, b).unwrap();
            let s = g.sigmoid(y);
            let l1 = g.sum(s);
            let sq = g.mul(y, y).unwrap();
            let l2 = g.sum(sq);
            let loss = match which {
                1 => l1,
                2 => l2,
                _ => g.add(l1, l2).unwrap(),
            };
            g.backward(loss).unwrap();
            g.grad_or_zeros(w)
        };
        let (g1, g2, g12) = (grads(1), grads(2), grads(3));
        for ((a, b), c) in g1.data().iter().zip(g2.data()).zip(g12.data()) {
            prop_assert!((a + b - c).abs() <= 1e-6);
        }
    }

    #[test]
    fn random_graphs_pass_gradcheck(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<(String, Tensor<f64>)> = vec![
            ("x".into(), random(&[2, 4, 3, 2], &mut rng)),
            ("k".into(), random(&[3, 3, 2, 3], &mut rng)),
            ("b".into(), random(&[3], &mut rng)),
            ("w".into(), random(&[2 * 2 * 3, 3], &mut rng)),
            ("wb".into(), random(&[3], &mut rng)),
            ("other".into(), random(&[2, 3], &mut rng)),
        ];
        let reports = finite_diff_check(&params, every_op_loss, &GradCheckOptions::default()).unwrap();
        for r in reports {
            prop_assert!(r.passed, "{:?}", r);
        }
    }
}
