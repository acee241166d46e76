use adares_core::nn::ParamStore;
use adares_harness::optim::Adam;
use indexmap::IndexMap;
use ndarray::ArrayD;

fn store_with(name: &str, values: &[f64]) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert_param(name, ArrayD::from_shape_vec(ndarray::IxDyn(&[values.len()]), values.to_vec()).unwrap());
    s
}

fn grads_of(name: &str, values: &[f64]) -> IndexMap<String, ArrayD<f64>> {
    let mut g = IndexMap::new();
    g.insert(
        name.to_string(),
        ArrayD::from_shape_vec(ndarray::IxDyn(&[values.len()]), values.to_vec()).unwrap(),
    );
    g
}

/// With a constant gradient g, bias correction makes every Adam step equal
/// to lr * g / (|g| + eps): m-hat = g and v-hat = g^2 at every step.
#[test]
fn constant_gradient_gives_constant_steps() {
    let mut store = store_with("w", &[1.0]);
    let mut opt = Adam::new(0.1);
    let g = grads_of("w", &[0.5]);
    let per_step = 0.1 * 0.5 / (0.5 + 1e-8);

    opt.step(&mut store, &g);
    let w1 = store.param("w").unwrap()[[0]];
    assert!((w1 - (1.0 - per_step)).abs() < 1e-12, "got {w1}");

    opt.step(&mut store, &g);
    let w2 = store.param("w").unwrap()[[0]];
    assert!((w2 - (1.0 - 2.0 * per_step)).abs() < 1e-12, "got {w2}");
    assert_eq!(opt.steps_taken(), 2);
}

/// Frozen two-step trace with a sign flip, stepped by hand:
///   step 1: m = 0.1g1, v = 0.001g1^2, update = lr * g1/(|g1| + eps-ish)
///   step 2 uses the decayed moments; values below were computed offline
///   with the same formulas and are exact to f64 rounding.
#[test]
fn hand_stepped_trace_matches() {
    let mut store = store_with("w", &[0.0]);
    let mut opt = Adam::new(0.001);
    opt.step(&mut store, &grads_of("w", &[1.0]));
    let w1 = store.param("w").unwrap()[[0]];
    // m-hat = 1, v-hat = 1 -> step = lr / (1 + 1e-8)
    let expect1 = -0.001 / (1.0 + 1e-8);
    assert!((w1 - expect1).abs() < 1e-15, "got {w1}, want {expect1}");

    opt.step(&mut store, &grads_of("w", &[-1.0]));
    let w2 = store.param("w").unwrap()[[0]];
    // m2 = 0.9*0.1 - 0.1 = -0.01; bc1 = 0.19 -> m-hat = -0.05263157894736842
    // v2 = 0.999*0.001 + 0.001 = 0.001999; bc2 = 0.001999 -> v-hat = 1
    let mhat = (0.9 * 0.1 - 0.1) / (1.0 - 0.81);
    let expect2 = expect1 - 0.001 * mhat / (1.0f64.sqrt() + 1e-8);
    assert!((w2 - expect2).abs() < 1e-15, "got {w2}, want {expect2}");
}

#[test]
fn moments_are_kept_per_parameter() {
    let mut store = store_with("a", &[1.0]);
    store.insert_param("b", ArrayD::from_shape_vec(ndarray::IxDyn(&[1]), vec![1.0]).unwrap());
    let mut opt = Adam::new(0.1);
    let mut g = grads_of("a", &[1.0]);
    g.insert("b".into(), ArrayD::from_shape_vec(ndarray::IxDyn(&[1]), vec![-1.0]).unwrap());
    opt.step(&mut store, &g);
    let a = store.param("a").unwrap()[[0]];
    let b = store.param("b").unwrap()[[0]];
    assert!(a < 1.0, "positive gradient moves a down");
    assert!(b > 1.0, "negative gradient moves b up");
    assert!((1.0 - a - (b - 1.0)).abs() < 1e-12, "symmetric magnitudes");
}

#[test]
fn updates_are_deterministic() {
    let run = || {
        let mut store = store_with("w", &[0.3, -0.7, 1.1]);
        let mut opt = Adam::new(0.01);
        for i in 0..5 {
            let g = grads_of("w", &[0.1 * i as f64, -0.2, 0.05]);
            opt.step(&mut store, &g);
        }
        store.param("w").unwrap().clone()
    };
    let a = run();
    let b = run();
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn untouched_parameters_stay_put() {
    let mut store = store_with("a", &[1.0]);
    store.insert_param("b", ArrayD::from_shape_vec(ndarray::IxDyn(&[1]), vec![2.0]).unwrap());
    let mut opt = Adam::new(0.1);
    opt.step(&mut store, &grads_of("a", &[1.0]));
    assert_eq!(store.param("b").unwrap()[[0]], 2.0);
}
