//! Gradient checks for the warp pipeline: tape values must match the plain
//! route exactly, both normalizers must deliver identical gradients, and
//! every stage must survive central finite differences.

use adares_core::tape::{grad_check, Tape, TapeError, Var};
use adares_core::warp::{
    build_warp, build_warp_t, normalize_warp_naive, normalize_warp_naive_t,
    normalize_warp_vectorized, normalize_warp_vectorized_t, rescale_importance,
    rescale_importance_t, resolution_encoding, resolution_encoding_t, warp_frames_max,
    warp_frames_max_t, warp_frames_mean, warp_frames_mean_t,
};
use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const VALUE_TOL: f64 = 1e-12;
const GRAD_EQ_TOL: f64 = 1e-9;
const FD_TOL: f64 = 1e-6;
const FD_H: f64 = 1e-5;

/// Importance vector with comfortable margins from every finite-difference
/// hazard: no rescaled entry near 1 and no cumulative sum near an integer.
fn safe_scores() -> Array1<f64> {
    ndarray::arr1(&[0.3, 0.8, 0.45, 0.7, 0.2, 0.65, 0.5, 0.35])
}

fn wrap<T>(r: Result<T, adares_core::WarpError>) -> Result<T, TapeError> {
    r.map_err(|e| TapeError::Invalid(e.to_string()))
}

fn as2(v: &ArrayD<f64>) -> Array2<f64> {
    v.view()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("2-d value")
        .to_owned()
}

fn as1(v: &ArrayD<f64>) -> Array1<f64> {
    v.view()
        .into_dimensionality::<ndarray::Ix1>()
        .expect("1-d value")
        .to_owned()
}

fn max_abs_diff(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Full tape chain from raw scores to the three aggregated channels.
fn chain(
    tape: &mut Tape,
    s_prime: Var,
    t: usize,
    x: &Array2<f64>,
    naive: bool,
) -> Result<Var, TapeError> {
    let s = wrap(rescale_importance_t(tape, s_prime, t))?;
    let w0 = wrap(build_warp_t(tape, s, t))?;
    let w = if naive {
        wrap(normalize_warp_naive_t(tape, w0))?
    } else {
        wrap(normalize_warp_vectorized_t(tape, w0))?
    };
    let x_const = tape.constant(x.to_owned().into_dyn())?;
    let mean = wrap(warp_frames_mean_t(tape, x_const, w))?;
    let enc = wrap(resolution_encoding_t(tape, w, x.nrows()))?;
    let a = tape.sum(mean)?;
    let b = tape.sum(enc)?;
    tape.add(a, b)
}

#[test]
fn tape_values_match_plain_route_per_stage() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for case in 0..200 {
        let tt = rng.gen_range(2..=32);
        let s_prime = Array1::from_iter((0..tt).map(|_| rng.gen_range(0.05..1.0)));
        let t = rng.gen_range(1..=tt);
        let f = 3;
        let x = Array2::from_shape_fn((f, tt), |_| rng.gen_range(-2.0..2.0));

        let s_plain = rescale_importance(&s_prime, t).unwrap();
        let w0_plain = build_warp(&s_plain, t).unwrap();
        let wn_plain = normalize_warp_naive(&w0_plain).unwrap();
        let wv_plain = normalize_warp_vectorized(&w0_plain).unwrap();
        let mean_plain = warp_frames_mean(&x, &wv_plain).unwrap();
        let max_plain = warp_frames_max(&x, &wv_plain).unwrap();
        let enc_plain = resolution_encoding(&wv_plain, f);

        let mut tape = Tape::new();
        let sp = tape.leaf(s_prime.clone().into_dyn(), true).unwrap();
        let s = rescale_importance_t(&mut tape, sp, t).unwrap();
        let w0 = build_warp_t(&mut tape, s, t).unwrap();
        let wn = normalize_warp_naive_t(&mut tape, w0).unwrap();
        let wv = normalize_warp_vectorized_t(&mut tape, w0).unwrap();
        let x_const = tape.constant(x.clone().into_dyn()).unwrap();
        let mean = warp_frames_mean_t(&mut tape, x_const, wv).unwrap();
        let max = warp_frames_max_t(&mut tape, x_const, wv).unwrap();
        let enc = resolution_encoding_t(&mut tape, wv, f).unwrap();

        let pairs: [(&ArrayD<f64>, ArrayD<f64>, &str); 7] = [
            (tape.value(s), s_plain.into_dyn(), "rescale"),
            (tape.value(w0), w0_plain.into_dyn(), "seed"),
            (tape.value(wn), wn_plain.into_dyn(), "naive normalizer"),
            (tape.value(wv), wv_plain.into_dyn(), "vectorized normalizer"),
            (tape.value(mean), mean_plain.into_dyn(), "mean channel"),
            (tape.value(max), max_plain.into_dyn(), "max channel"),
            (tape.value(enc), enc_plain.into_dyn(), "encoding channel"),
        ];
        for (got, want, what) in pairs {
            let d = max_abs_diff(got, &want);
            assert!(d <= VALUE_TOL, "case {case}: {what} tape/plain diff {d}");
        }
    }
}

#[test]
fn normalizers_produce_identical_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..200 {
        let tt = rng.gen_range(2..=16);
        let s_prime = Array1::from_iter((0..tt).map(|_| rng.gen_range(0.05..1.0)));
        let t = rng.gen_range(1..=tt);
        let f = 2;
        let x = Array2::from_shape_fn((f, tt), |_| rng.gen_range(-1.0..1.0));

        let run = |naive: bool| -> (f64, ArrayD<f64>) {
            let mut tape = Tape::new();
            let sp = tape.leaf(s_prime.clone().into_dyn(), true).unwrap();
            let loss = chain(&mut tape, sp, t, &x, naive).unwrap();
            let val = tape.value(loss).iter().next().copied().unwrap();
            let grads = tape.backward(loss).unwrap();
            (val, grads.wrt(sp, &[tt]))
        };
        let (ln, gn) = run(true);
        let (lv, gv) = run(false);
        assert!(
            (ln - lv).abs() <= GRAD_EQ_TOL,
            "case {case}: loss values diverge: {ln} vs {lv}"
        );
        let d = max_abs_diff(&gn, &gv);
        assert!(d <= GRAD_EQ_TOL, "case {case}: gradient diff {d}\n{gn:?}\n{gv:?}");
    }
}

#[test]
fn chain_gradient_matches_finite_differences_naive() {
    let s = safe_scores();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Array2::from_shape_fn((4, s.len()), |_| rng.gen_range(-1.0..1.0));
    let worst =
        grad_check(|tape, v| chain(tape, v, 4, &x, true), &s.into_dyn(), FD_H).unwrap();
    assert!(worst < FD_TOL, "worst relative error {worst}");
}

#[test]
fn chain_gradient_matches_finite_differences_vectorized() {
    let s = safe_scores();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Array2::from_shape_fn((4, s.len()), |_| rng.gen_range(-1.0..1.0));
    let worst =
        grad_check(|tape, v| chain(tape, v, 4, &x, false), &s.into_dyn(), FD_H).unwrap();
    assert!(worst < FD_TOL, "worst relative error {worst}");
}

#[test]
fn max_channel_gradient_matches_finite_differences() {
    // Columns grow by a factor of ten, so within every output frame the last
    // supported column dominates the masked max with a wide margin; the
    // argmax cannot flip under the probe step.
    let s = safe_scores();
    let tt = s.len();
    let x = Array2::from_shape_fn((2, tt), |(f, j)| (f + 1) as f64 * 10f64.powi(j as i32) * 1e-3);
    for naive in [true, false] {
        let worst = grad_check(
            |tape, v| {
                let s = wrap(rescale_importance_t(tape, v, 4))?;
                let w0 = wrap(build_warp_t(tape, s, 4))?;
                let w = if naive {
                    wrap(normalize_warp_naive_t(tape, w0))?
                } else {
                    wrap(normalize_warp_vectorized_t(tape, w0))?
                };
                let x_const = tape.constant(x.clone().into_dyn())?;
                let max = wrap(warp_frames_max_t(tape, x_const, w))?;
                tape.sum(max)
            },
            &s.clone().into_dyn(),
            FD_H,
        )
        .unwrap();
        assert!(worst < FD_TOL, "naive={naive}: worst relative error {worst}");
    }
}

#[test]
fn clipped_chain_gradient_matches_finite_differences() {
    // Rescaling pushes the first entry past 1, so the clip is active; the
    // pinned entry keeps the routing stable and its gradient must be zero.
    let s = ndarray::arr1(&[0.9, 0.3]);
    let x = ndarray::arr2(&[[1.0, -2.0], [0.5, 3.0]]);
    for naive in [true, false] {
        let worst = grad_check(
            |tape, v| chain(tape, v, 2, &x, naive),
            &s.clone().into_dyn(),
            FD_H,
        )
        .unwrap();
        assert!(worst < FD_TOL, "naive={naive}: worst relative error {worst}");
    }
}

#[test]
fn rescale_gradient_matches_finite_differences() {
    let s = safe_scores();
    let worst = grad_check(
        |tape, v| {
            let s = wrap(rescale_importance_t(tape, v, 4))?;
            // Random-ish fixed projection keeps every coordinate observable.
            let proj = tape.constant(
                ArrayD::from_shape_vec(
                    IxDyn(&[8]),
                    vec![0.7, -1.3, 0.4, 2.1, -0.6, 1.1, -1.8, 0.9],
                )
                .unwrap(),
            )?;
            let p = tape.mul(s, proj)?;
            tape.sum(p)
        },
        &s.into_dyn(),
        FD_H,
    )
    .unwrap();
    assert!(worst < FD_TOL, "worst relative error {worst}");
}

#[test]
fn row_fill_adjoint_matches_finite_differences_on_support() {
    // The walk's support pattern is fixed by which seed entries are nonzero,
    // so only those coordinates admit a finite-difference probe.
    let w0 = ndarray::arr2(&[[0.6, 0.0, 0.0], [0.0, 0.6, 0.8]]);
    let proj = ndarray::arr2(&[[0.3, -1.1, 0.7], [1.9, 0.2, -0.5]]);

    let run = |w: &Array2<f64>| -> (f64, Array2<f64>) {
        let mut tape = Tape::new();
        let leaf = tape.leaf(w.clone().into_dyn(), true).unwrap();
        let norm = tape.row_fill_normalize(leaf).unwrap();
        let p = tape.constant(proj.clone().into_dyn()).unwrap();
        let prod = tape.mul(norm, p).unwrap();
        let loss = tape.sum(prod).unwrap();
        let val = tape.value(loss).iter().next().copied().unwrap();
        let grads = tape.backward(loss).unwrap();
        (val, as2(&grads.wrt(leaf, &[2, 3])))
    };

    let (_, analytic) = run(&w0);
    for i in 0..2 {
        for j in 0..3 {
            if w0[[i, j]] <= 0.0 {
                continue;
            }
            let mut up = w0.clone();
            up[[i, j]] += FD_H;
            let mut dn = w0.clone();
            dn[[i, j]] -= FD_H;
            let fd = (run(&up).0 - run(&dn).0) / (2.0 * FD_H);
            let an = analytic[[i, j]];
            let err = (an - fd).abs() / an.abs().max(1.0);
            assert!(err < FD_TOL, "entry ({i},{j}): analytic {an} vs fd {fd}");
        }
    }
}

#[test]
fn clip_zeroes_gradient_of_saturated_entries() {
    // After rescaling [0.9, 0.3] to two frames the first entry saturates at
    // 1; its own-path derivative must vanish while the free entry keeps a
    // live gradient.
    let s = ndarray::arr1(&[0.9, 0.3]);
    let mut tape = Tape::new();
    let sp = tape.leaf(s.into_dyn(), true).unwrap();
    let resc = rescale_importance_t(&mut tape, sp, 2).unwrap();
    let vals = as1(tape.value(resc));
    assert!((vals[0] - 1.0).abs() < 1e-12, "first entry saturates");
    assert!((vals[1] - 0.5).abs() < 1e-12, "second entry rescales to 0.5");

    // Observe only the saturated coordinate: every input gradient is zero.
    let pick = tape
        .constant(ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, 0.0]).unwrap())
        .unwrap();
    let prod = tape.mul(resc, pick).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = as1(&grads.wrt(sp, &[2]));
    assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12, "saturated output has zero gradient: {g:?}");
}

#[test]
fn full_mass_identity_chain_has_uniform_mean_gradient() {
    // With all scores equal the rescale yields exactly 1 everywhere, the
    // warp is the identity, and d(sum of mean channel)/ds' must be finite
    // and symmetric across positions.
    let tt = 6;
    let s = Array1::from_elem(tt, 0.5);
    let x = Array2::from_shape_fn((3, tt), |(f, j)| (f * tt + j) as f64 * 0.1);
    let mut tape = Tape::new();
    let sp = tape.leaf(s.into_dyn(), true).unwrap();
    let loss = chain(&mut tape, sp, tt, &x, false).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = as1(&grads.wrt(sp, &[tt]));
    assert!(g.iter().all(|v| v.is_finite()), "finite gradient at the identity point");
    for j in 1..tt {
        assert!(
            (g[j] - g[0]).abs() < 1e-9,
            "uniform scores give a symmetric gradient: {g:?}"
        );
    }
}
