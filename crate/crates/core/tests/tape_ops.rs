//! Autodiff engine: per-op finite-difference checks, frozen derivative
//! values, broadcasting semantics, and error taxonomy.

use adares_core::tape::{grad_check, Tape, TapeError, Var};
use ndarray::{Array1, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const OP_TOL: f64 = 1e-6;
const FD_H: f64 = 1e-5;

fn randn(shape: &[usize], seed: u64, lo: f64, hi: f64) -> ArrayD<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Reduces any output to a scalar through a fixed random projection so the
/// incoming gradient of the checked op is dense and nontrivial.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, TapeError> {
    let shape = tape.value(y).shape().to_vec();
    let r = tape.constant(randn(&shape, seed, -1.0, 1.0))?;
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

#[test]
fn elementwise_binary_ops_pass_fd() {
    for (name, f) in [
        ("add", Tape::add as fn(&mut Tape, Var, Var) -> Result<Var, TapeError>),
        ("sub", Tape::sub),
        ("mul", Tape::mul),
        ("div", Tape::div),
    ] {
        // Same-shape and broadcast second operand.
        for (sx, sy, seed) in [
            (vec![3usize, 4], vec![3usize, 4], 11u64),
            (vec![3, 4], vec![1, 4], 12),
            (vec![2, 3, 4], vec![4], 13),
            (vec![3, 1], vec![3, 4], 14),
        ] {
            let other = randn(&sy, seed, 0.5, 1.5); // away from 0 for div
            let x0 = randn(&sx, seed + 100, 0.5, 1.5);
            let err = grad_check(
                |t, x| {
                    let o = t.constant(other.clone())?;
                    let y = f(t, x, o)?;
                    project(t, y, seed + 200)
                },
                &x0,
                FD_H,
            )
            .unwrap();
            assert!(err < OP_TOL, "{name} lhs grad err {err} for {sx:?},{sy:?}");
            // And gradient through the second operand.
            let lhs = randn(&sx, seed + 300, 0.5, 1.5);
            let y0 = randn(&sy, seed + 400, 0.5, 1.5);
            let err = grad_check(
                |t, yv| {
                    let l = t.constant(lhs.clone())?;
                    let y = f(t, l, yv)?;
                    project(t, y, seed + 500)
                },
                &y0,
                FD_H,
            )
            .unwrap();
            assert!(err < OP_TOL, "{name} rhs grad err {err} for {sx:?},{sy:?}");
        }
    }
}

#[test]
fn scalar_and_unary_ops_pass_fd() {
    let x0 = randn(&[4, 5], 21, 0.3, 1.7); // positive: safe for ln/pow
    let cases: Vec<(&str, Box<dyn Fn(&mut Tape, Var) -> Result<Var, TapeError>>)> = vec![
        ("add_scalar", Box::new(|t, x| t.add_scalar(x, 2.5))),
        ("mul_scalar", Box::new(|t, x| t.mul_scalar(x, -1.75))),
        ("pow_scalar", Box::new(|t, x| t.pow_scalar(x, 3.0))),
        ("pow_scalar_half", Box::new(|t, x| t.pow_scalar(x, 0.5))),
        ("sigmoid", Box::new(|t, x| t.sigmoid(x))),
        ("leaky_relu", Box::new(|t, x| t.leaky_relu(x, 0.01))),
        ("ln", Box::new(|t, x| t.ln(x))),
        ("exp", Box::new(|t, x| t.exp(x))),
        ("max_scalar", Box::new(|t, x| t.max_scalar(x, 1.0))),
        ("cumsum0", Box::new(|t, x| t.cumsum(x, 0))),
        ("cumsum1", Box::new(|t, x| t.cumsum(x, 1))),
        ("transpose2", Box::new(|t, x| t.transpose2(x))),
        ("reshape", Box::new(|t, x| t.reshape(x, &[2, 10]))),
        ("slice", Box::new(|t, x| t.slice(x, 1, 1, 4))),
        ("sum_axis", Box::new(|t, x| t.sum_axis(x, 0))),
        ("mean_axis", Box::new(|t, x| t.mean_axis(x, 1))),
        ("max_axis", Box::new(|t, x| t.max_axis(x, 1))),
    ];
    for (i, (name, f)) in cases.iter().enumerate() {
        let err = grad_check(
            |t, x| {
                let y = f(t, x)?;
                project(t, y, 1000 + i as u64)
            },
            &x0,
            FD_H,
        )
        .unwrap();
        assert!(err < OP_TOL, "{name} grad err {err}");
    }
    // Negative inputs for the piecewise ops (away from the kink at 0).
    let xneg = randn(&[4, 5], 22, -1.9, -0.2);
    type UnaryOp = fn(&mut Tape, Var) -> Result<Var, TapeError>;
    for (name, f) in [
        ("leaky_relu_neg", (|t, x| t.leaky_relu(x, 0.01)) as UnaryOp),
        ("max_scalar_neg", |t, x| t.max_scalar(x, 0.0)),
        ("sigmoid_neg", |t, x| t.sigmoid(x)),
    ] {
        let err = grad_check(
            |t, x| {
                let y = f(t, x)?;
                project(t, y, 77)
            },
            &xneg,
            FD_H,
        )
        .unwrap();
        assert!(err < OP_TOL, "{name} grad err {err}");
    }
}

#[test]
fn full_reductions_pass_fd() {
    let x0 = randn(&[3, 7], 31, -2.0, 2.0);
    for (name, f) in [
        ("sum", Tape::sum as fn(&mut Tape, Var) -> Result<Var, TapeError>),
        ("mean", Tape::mean),
        ("max", Tape::max),
    ] {
        let err = grad_check(|t, x| f(t, x), &x0, FD_H).unwrap();
        assert!(err < OP_TOL, "{name} grad err {err}");
    }
}

#[test]
fn matmul_passes_fd_on_both_sides() {
    let a0 = randn(&[3, 4], 41, -1.0, 1.0);
    let b0 = randn(&[4, 5], 42, -1.0, 1.0);
    let err = grad_check(
        |t, a| {
            let b = t.constant(b0.clone())?;
            let y = t.matmul(a, b)?;
            project(t, y, 43)
        },
        &a0,
        FD_H,
    )
    .unwrap();
    assert!(err < OP_TOL, "matmul lhs err {err}");
    let err = grad_check(
        |t, b| {
            let a = t.constant(a0.clone())?;
            let y = t.matmul(a, b)?;
            project(t, y, 44)
        },
        &b0,
        FD_H,
    )
    .unwrap();
    assert!(err < OP_TOL, "matmul rhs err {err}");
}

#[test]
fn concat_passes_fd() {
    let a0 = randn(&[2, 3], 51, -1.0, 1.0);
    let b0 = randn(&[2, 2], 52, -1.0, 1.0);
    let err = grad_check(
        |t, a| {
            let b = t.constant(b0.clone())?;
            let y = t.concat(&[a, b], 1)?;
            project(t, y, 53)
        },
        &a0,
        FD_H,
    )
    .unwrap();
    assert!(err < OP_TOL, "concat err {err}");
}

#[test]
fn conv1d_passes_fd_on_input_weight_and_bias() {
    let x0 = randn(&[2, 3, 7], 61, -1.0, 1.0);
    let w0 = randn(&[4, 3, 5], 62, -0.5, 0.5);
    let b0 = randn(&[4], 63, -0.5, 0.5);
    let err = grad_check(
        |t, x| {
            let w = t.constant(w0.clone())?;
            let b = t.constant(b0.clone())?;
            let y = t.conv1d_same(x, w, b)?;
            project(t, y, 64)
        },
        &x0,
        FD_H,
    )
    .unwrap();
    assert!(err < OP_TOL, "conv x err {err}");
    let err = grad_check(
        |t, w| {
            let x = t.constant(x0.clone())?;
            let b = t.constant(b0.clone())?;
            let y = t.conv1d_same(x, w, b)?;
            project(t, y, 65)
        },
        &w0,
        FD_H,
    )
    .unwrap();
    assert!(err < OP_TOL, "conv w err {err}");
    let err = grad_check(
        |t, b| {
            let x = t.constant(x0.clone())?;
            let w = t.constant(w0.clone())?;
            let y = t.conv1d_same(x, w, b)?;
            project(t, y, 66)
        },
        &b0,
        FD_H,
    )
    .unwrap();
    assert!(err < OP_TOL, "conv b err {err}");
}

#[test]
fn conv1d_identity_kernel_reproduces_input() {
    let mut t = Tape::new();
    let x0 = randn(&[1, 1, 6], 71, -1.0, 1.0);
    let x = t.leaf(x0.clone(), false).unwrap();
    let w = t
        .constant(ArrayD::from_shape_vec(IxDyn(&[1, 1, 3]), vec![0.0, 1.0, 0.0]).unwrap())
        .unwrap();
    let b = t.constant(ArrayD::zeros(IxDyn(&[1]))).unwrap();
    let y = t.conv1d_same(x, w, b).unwrap();
    assert_eq!(t.value(y), &x0);
}

#[test]
fn conv1d_matches_hand_convolution() {
    // x = [1, 2, 3], kernel [1, 0, -1] (left-to-right taps), bias 0.5.
    // Zero padding: y[t] = x[t-1]*k0 + x[t]*k1 + x[t+1]*k2 + b.
    let mut t = Tape::new();
    let x = t
        .constant(ArrayD::from_shape_vec(IxDyn(&[1, 1, 3]), vec![1.0, 2.0, 3.0]).unwrap())
        .unwrap();
    let w = t
        .constant(ArrayD::from_shape_vec(IxDyn(&[1, 1, 3]), vec![1.0, 0.0, -1.0]).unwrap())
        .unwrap();
    let b = t.constant(ArrayD::from_elem(IxDyn(&[1]), 0.5)).unwrap();
    let y = t.conv1d_same(x, w, b).unwrap();
    let expect = [0.0 - 2.0 + 0.5, 1.0 - 3.0 + 0.5, 2.0 - 0.0 + 0.5];
    for (i, &e) in expect.iter().enumerate() {
        assert!((t.value(y)[[0, 0, i]] - e).abs() < 1e-12);
    }
}

#[test]
fn batchnorm_train_passes_fd() {
    let x0 = randn(&[2, 3, 5], 81, -2.0, 2.0);
    let g0 = randn(&[3], 82, 0.5, 1.5);
    let b0 = randn(&[3], 83, -0.5, 0.5);
    // Through x.
    let err = grad_check(
        |t, x| {
            let g = t.constant(g0.clone())?;
            let b = t.constant(b0.clone())?;
            let (y, _) = t.batchnorm1d(x, g, b, 1e-5, None)?;
            project(t, y, 84)
        },
        &x0,
        FD_H,
    )
    .unwrap();
    assert!(err < OP_TOL, "bn train x err {err}");
    // Through gamma and beta.
    let err = grad_check(
        |t, g| {
            let x = t.constant(x0.clone())?;
            let b = t.constant(b0.clone())?;
            let (y, _) = t.batchnorm1d(x, g, b, 1e-5, None)?;
            project(t, y, 85)
        },
        &g0,
        FD_H,
    )
    .unwrap();
    assert!(err < OP_TOL, "bn train gamma err {err}");
    let err = grad_check(
        |t, b| {
            let x = t.constant(x0.clone())?;
            let g = t.constant(g0.clone())?;
            let (y, _) = t.batchnorm1d(x, g, b, 1e-5, None)?;
            project(t, y, 86)
        },
        &b0,
        FD_H,
    )
    .unwrap();
    assert!(err < OP_TOL, "bn train beta err {err}");
}

#[test]
fn batchnorm_eval_passes_fd_and_uses_running_stats() {
    let x0 = randn(&[2, 3, 5], 91, -2.0, 2.0);
    let g0 = randn(&[3], 92, 0.5, 1.5);
    let b0 = randn(&[3], 93, -0.5, 0.5);
    let rm = Array1::from(vec![0.1, -0.2, 0.3]);
    let rv = Array1::from(vec![1.5, 0.8, 2.0]);
    let err = grad_check(
        |t, x| {
            let g = t.constant(g0.clone())?;
            let b = t.constant(b0.clone())?;
            let (y, stats) = t.batchnorm1d(x, g, b, 1e-5, Some((&rm, &rv)))?;
            assert!(stats.is_none(), "eval mode must not report batch stats");
            project(t, y, 94)
        },
        &x0,
        FD_H,
    )
    .unwrap();
    assert!(err < OP_TOL, "bn eval x err {err}");
    // Closed form: y = g*(x - m)/sqrt(v + eps) + b.
    let mut t = Tape::new();
    let x = t.leaf(x0.clone(), false).unwrap();
    let g = t.constant(g0.clone()).unwrap();
    let b = t.constant(b0.clone()).unwrap();
    let (y, _) = t.batchnorm1d(x, g, b, 1e-5, Some((&rm, &rv))).unwrap();
    for bi in 0..2 {
        for ch in 0..3 {
            for tau in 0..5 {
                let expect = g0[[ch]] * (x0[[bi, ch, tau]] - rm[ch]) / (rv[ch] + 1e-5).sqrt()
                    + b0[[ch]];
                assert!((t.value(y)[[bi, ch, tau]] - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn batchnorm_train_standardizes_batch() {
    let x0 = randn(&[4, 2, 8], 101, -3.0, 5.0);
    let mut t = Tape::new();
    let x = t.leaf(x0, false).unwrap();
    let g = t.constant(ArrayD::ones(IxDyn(&[2]))).unwrap();
    let b = t.constant(ArrayD::zeros(IxDyn(&[2]))).unwrap();
    let (y, stats) = t.batchnorm1d(x, g, b, 1e-5, None).unwrap();
    let (mean, var) = stats.unwrap();
    assert_eq!(mean.len(), 2);
    assert_eq!(var.len(), 2);
    // Output per channel: mean ~0, biased variance ~1 (up to eps).
    for ch in 0..2 {
        let mut s = 0.0;
        let mut sq = 0.0;
        for bi in 0..4 {
            for tau in 0..8 {
                s += t.value(y)[[bi, ch, tau]];
            }
        }
        let m = s / 32.0;
        for bi in 0..4 {
            for tau in 0..8 {
                let d = t.value(y)[[bi, ch, tau]] - m;
                sq += d * d;
            }
        }
        assert!(m.abs() < 1e-10, "channel {ch} mean {m}");
        let v = sq / 32.0;
        assert!((v - 1.0).abs() < 1e-4, "channel {ch} var {v}");
    }
}

#[test]
fn frozen_derivatives_hold() {
    // d sigmoid / dx at 0 is exactly 1/4.
    let mut t = Tape::new();
    let x = t.leaf(ArrayD::zeros(IxDyn(&[1])), true).unwrap();
    let y = t.sigmoid(x).unwrap();
    assert!((t.value(y)[[0]] - 0.5).abs() < 1e-15);
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert!((g.wrt(x, &[1])[[0]] - 0.25).abs() < 1e-15);

    // Cumsum forward oracle.
    let mut t = Tape::new();
    let x = t
        .leaf(ArrayD::from_shape_vec(IxDyn(&[4]), vec![0.5; 4]).unwrap(), true)
        .unwrap();
    let c = t.cumsum(x, 0).unwrap();
    let expect = [0.5, 1.0, 1.5, 2.0];
    for (i, &e) in expect.iter().enumerate() {
        assert!((t.value(c)[[i]] - e).abs() < 1e-15);
    }
    // Backward of cumsum: reversed suffix sums of the upstream gradient.
    let r = t
        .constant(ArrayD::from_shape_vec(IxDyn(&[4]), vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let p = t.mul(c, r).unwrap();
    let s = t.sum(p).unwrap();
    let g = t.backward(s).unwrap();
    let gx = g.wrt(x, &[4]);
    for (i, &e) in [10.0, 9.0, 7.0, 4.0].iter().enumerate() {
        assert!((gx[[i]] - e).abs() < 1e-12);
    }
}

#[test]
fn fan_out_gradients_accumulate() {
    let mut t = Tape::new();
    let x = t.leaf(ArrayD::from_elem(IxDyn(&[3]), 1.5), true).unwrap();
    let y = t.add(x, x).unwrap();
    let z = t.mul(y, x).unwrap(); // z = 2x^2, dz/dx = 4x = 6
    let s = t.sum(z).unwrap();
    let g = t.backward(s).unwrap();
    for &v in g.wrt(x, &[3]).iter() {
        assert!((v - 6.0).abs() < 1e-12);
    }
}

#[test]
fn max_ties_route_gradient_to_lowest_index() {
    let mut t = Tape::new();
    let x = t
        .leaf(ArrayD::from_shape_vec(IxDyn(&[4]), vec![2.0, 5.0, 5.0, 1.0]).unwrap(), true)
        .unwrap();
    let m = t.max(x).unwrap();
    let g = t.backward(m).unwrap();
    let gx = g.wrt(x, &[4]);
    assert_eq!(gx.as_slice().unwrap(), &[0.0, 1.0, 0.0, 0.0]);

    let mut t = Tape::new();
    let x = t
        .leaf(
            ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.0, 3.0, 3.0, 7.0, 2.0, 7.0]).unwrap(),
            true,
        )
        .unwrap();
    let m = t.max_axis(x, 1).unwrap();
    assert_eq!(t.value(m).as_slice().unwrap(), &[3.0, 7.0]);
    let s = t.sum(m).unwrap();
    let g = t.backward(s).unwrap();
    let gx = g.wrt(x, &[2, 3]);
    assert_eq!(gx.as_slice().unwrap(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn max_scalar_blocks_gradient_at_clip() {
    let mut t = Tape::new();
    let x = t
        .leaf(ArrayD::from_shape_vec(IxDyn(&[3]), vec![-0.5, 0.2, 1.7]).unwrap(), true)
        .unwrap();
    let y = t.max_scalar(x, 0.2).unwrap();
    assert_eq!(t.value(y).as_slice().unwrap(), &[0.2, 0.2, 1.7]);
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    // At exactly the clip value the gradient is zero (strict comparison).
    assert_eq!(g.wrt(x, &[3]).as_slice().unwrap(), &[0.0, 0.0, 1.0]);
}

#[test]
fn backward_twice_is_an_error() {
    let mut t = Tape::new();
    let x = t.leaf(ArrayD::ones(IxDyn(&[2])), true).unwrap();
    let s = t.sum(x).unwrap();
    t.backward(s).unwrap();
    match t.backward(s) {
        Err(TapeError::BackwardTwice) => {}
        other => panic!("expected BackwardTwice, got {other:?}"),
    }
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut t = Tape::new();
    let x = t.leaf(ArrayD::ones(IxDyn(&[2, 2])), true).unwrap();
    match t.backward(x) {
        Err(TapeError::NotScalar(shape)) => assert_eq!(shape, vec![2, 2]),
        other => panic!("expected NotScalar, got {other:?}"),
    }
}

#[test]
fn non_finite_outputs_are_rejected_eagerly() {
    let mut t = Tape::new();
    let x = t.leaf(ArrayD::from_elem(IxDyn(&[1]), -1.0), true).unwrap();
    match t.ln(x) {
        Err(TapeError::NonFinite("ln")) => {}
        other => panic!("expected NonFinite(ln), got {other:?}"),
    }
    let mut t = Tape::new();
    let x = t.leaf(ArrayD::from_elem(IxDyn(&[1]), 1.0), true).unwrap();
    let z = t.constant(ArrayD::zeros(IxDyn(&[1]))).unwrap();
    match t.div(x, z) {
        Err(TapeError::NonFinite("div")) => {}
        other => panic!("expected NonFinite(div), got {other:?}"),
    }
    // NaN leaves are rejected at creation.
    let mut t = Tape::new();
    match t.leaf(ArrayD::from_elem(IxDyn(&[1]), f64::NAN), false) {
        Err(TapeError::NonFinite(_)) => {}
        other => panic!("expected NonFinite leaf, got {other:?}"),
    }
}

#[test]
fn shape_errors_are_reported() {
    let mut t = Tape::new();
    let a = t.leaf(ArrayD::ones(IxDyn(&[2, 3])), false).unwrap();
    let b = t.leaf(ArrayD::ones(IxDyn(&[2, 4])), false).unwrap();
    assert!(matches!(t.add(a, b), Err(TapeError::ShapeMismatch { .. })));
    assert!(matches!(t.matmul(a, a), Err(TapeError::ShapeMismatch { .. })));
    assert!(matches!(t.slice(a, 1, 2, 2), Err(TapeError::ShapeMismatch { .. })));
    assert!(matches!(t.sum_axis(a, 2), Err(TapeError::ShapeMismatch { .. })));
    assert!(matches!(t.reshape(a, &[7]), Err(TapeError::ShapeMismatch { .. })));
    // Even conv kernels are not "same"-padded unambiguously.
    let x = t.leaf(ArrayD::ones(IxDyn(&[1, 1, 4])), false).unwrap();
    let w = t.leaf(ArrayD::ones(IxDyn(&[1, 1, 2])), false).unwrap();
    let bias = t.leaf(ArrayD::ones(IxDyn(&[1])), false).unwrap();
    assert!(matches!(t.conv1d_same(x, w, bias), Err(TapeError::ShapeMismatch { .. })));
}

#[test]
fn broadcasting_matches_elementwise_expansion() {
    let mut t = Tape::new();
    let a = t
        .leaf(ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1., 2., 3., 4., 5., 6.]).unwrap(), true)
        .unwrap();
    let b = t
        .leaf(ArrayD::from_shape_vec(IxDyn(&[3]), vec![10., 20., 30.]).unwrap(), true)
        .unwrap();
    let y = t.add(a, b).unwrap();
    assert_eq!(
        t.value(y).as_slice().unwrap(),
        &[11., 22., 33., 14., 25., 36.]
    );
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    // The broadcast operand's gradient sums over the expanded axis.
    assert_eq!(g.wrt(b, &[3]).as_slice().unwrap(), &[2.0, 2.0, 2.0]);
    assert_eq!(g.wrt(a, &[2, 3]).as_slice().unwrap(), &[1.0; 6]);
}

#[test]
fn constants_do_not_receive_gradients() {
    let mut t = Tape::new();
    let x = t.leaf(ArrayD::ones(IxDyn(&[2])), true).unwrap();
    let c = t.constant(ArrayD::from_elem(IxDyn(&[2]), 3.0)).unwrap();
    let y = t.mul(x, c).unwrap();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.wrt(x, &[2]).as_slice().unwrap(), &[3.0, 3.0]);
}

#[test]
fn disconnected_leaf_has_no_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(ArrayD::ones(IxDyn(&[2])), true).unwrap();
    let unused = t.leaf(ArrayD::ones(IxDyn(&[4])), true).unwrap();
    let s = t.sum(x).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(unused).is_none());
    assert_eq!(g.wrt(unused, &[4]).as_slice().unwrap(), &[0.0; 4]);
}

#[test]
fn deep_chain_composes() {
    // f(x) = mean(sigmoid(x W)^2) through several ops; FD agreement.
    let x0 = randn(&[3, 4], 111, -1.0, 1.0);
    let w0 = randn(&[4, 4], 112, -0.7, 0.7);
    let err = grad_check(
        |t, x| {
            let w = t.constant(w0.clone())?;
            let h = t.matmul(x, w)?;
            let h = t.sigmoid(h)?;
            let h = t.pow_scalar(h, 2.0)?;
            let h = t.cumsum(h, 1)?;
            t.mean(h)
        },
        &x0,
        FD_H,
    )
    .unwrap();
    assert!(err < OP_TOL, "deep chain err {err}");
}
