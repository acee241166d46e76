//! Finite-difference validation of the autodiff engine: one check per tape
//! op, plus an end-to-end check of the full scoring-and-warping loss
//! against numerical derivatives of the scorer parameters.

use adares_core::dsp::SpectrogramConfig;
use adares_core::loss::{bce_loss_t, guide_loss_t};
use adares_core::nn::{Ctx, FrameImportanceNet, ParamStore};
use adares_core::tape::{Tape, TapeError, Var};
use adares_core::warp::{build_warp, diffres_from_scores, DiffResConfig};
use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Central-difference step. Relative errors then sit near h^2 = 1e-10 for
/// smooth ops, far below the 1e-6 acceptance line.
const FD_STEP: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-6;
pub const END_TO_END_TOL: f64 = 1e-4;

/// Name an op here to corrupt its analytic gradient before comparison — a
/// negative control proving the checker can fail. Only tests set it.
pub const CORRUPT_ENV: &str = "ADARES_GRADCHECK_CORRUPT";

#[derive(Debug, Clone, Serialize)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EndToEndCheck {
    pub params_checked: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub ops: Vec<OpCheck>,
    pub end_to_end: EndToEndCheck,
}

impl GradReport {
    pub fn pass(&self) -> bool {
        self.ops.iter().all(|o| o.pass) && self.end_to_end.pass
    }

    /// Names of the checks above tolerance.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> =
            self.ops.iter().filter(|o| !o.pass).map(|o| o.name.clone()).collect();
        if !self.end_to_end.pass {
            out.push("end_to_end".into());
        }
        out
    }
}

/// |a - b| over max(1, |a|, |b|): relative for large values, absolute near
/// zero, so near-zero gradients do not blow the ratio up.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches length")
}

/// One op check: builds `f(inputs)` on a fresh tape, reduces it to a scalar
/// through a fixed projection, and compares the tape's input gradients with
/// central differences. `masks[i]`, when present, limits the probed entries
/// (used where off-support perturbations would change discrete structure).
struct OpCase {
    name: &'static str,
    inputs: Vec<ArrayD<f64>>,
    masks: Vec<Option<ArrayD<f64>>>,
    build: Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, TapeError>>,
}

fn scalar_objective(
    tape: &mut Tape,
    out: Var,
    proj: &ArrayD<f64>,
) -> Result<Var, TapeError> {
    let p = tape.constant(proj.clone())?;
    let weighted = tape.mul(out, p)?;
    tape.sum(weighted)
}

fn eval_case(case: &OpCase, proj: &ArrayD<f64>) -> Result<(f64, Vec<ArrayD<f64>>), TapeError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .map(|x| tape.leaf(x.clone(), true))
        .collect::<Result<_, _>>()?;
    let out = (case.build)(&mut tape, &vars)?;
    let loss = scalar_objective(&mut tape, out, proj)?;
    let value = tape.value(loss)[IxDyn(&[])];
    let grads = tape.backward(loss)?;
    let gs = vars
        .iter()
        .zip(&case.inputs)
        .map(|(v, x)| grads.wrt(*v, x.shape()))
        .collect();
    Ok((value, gs))
}

fn loss_at(case: &OpCase, inputs: &[ArrayD<f64>], proj: &ArrayD<f64>) -> Result<f64, TapeError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|x| tape.leaf(x.clone(), false))
        .collect::<Result<_, _>>()?;
    let out = (case.build)(&mut tape, &vars)?;
    let loss = scalar_objective(&mut tape, out, proj)?;
    Ok(tape.value(loss)[IxDyn(&[])])
}

fn check_case(case: &OpCase, rng: &mut ChaCha8Rng) -> Result<OpCheck, TapeError> {
    // Output shape probe to size the projection.
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = case
            .inputs
            .iter()
            .map(|x| tape.leaf(x.clone(), false))
            .collect::<Result<_, _>>()?;
        let out = (case.build)(&mut tape, &vars)?;
        tape.value(out).shape().to_vec()
    };
    let proj = rand_array(rng, &out_shape, -1.0, 1.0);
    let (_, mut analytic) = eval_case(case, &proj)?;

    if std::env::var(CORRUPT_ENV).as_deref() == Ok(case.name) {
        if let Some(first) = analytic[0].iter_mut().next() {
            *first += 1e-3;
        }
    }

    let mut max_err = 0.0f64;
    for (i, x) in case.inputs.iter().enumerate() {
        for idx in 0..x.len() {
            if let Some(mask) = &case.masks[i] {
                if mask.as_slice().expect("mask is contiguous")[idx] == 0.0 {
                    continue;
                }
            }
            let mut plus = case.inputs.clone();
            let mut minus = case.inputs.clone();
            plus[i].as_slice_mut().expect("input is contiguous")[idx] += FD_STEP;
            minus[i].as_slice_mut().expect("input is contiguous")[idx] -= FD_STEP;
            let fd = (loss_at(case, &plus, &proj)? - loss_at(case, &minus, &proj)?)
                / (2.0 * FD_STEP);
            let an = analytic[i].as_slice().expect("gradient is contiguous")[idx];
            max_err = max_err.max(rel_err(an, fd));
        }
    }
    Ok(OpCheck { name: case.name.to_string(), max_rel_err: max_err, tol: OP_TOL, pass: max_err < OP_TOL })
}

/// A warp seed whose routing is stable under FD_STEP perturbations of the
/// surviving entries: cumulative sums stay > 0.1 away from integers.
fn stable_warp_seed() -> (Array2<f64>, ArrayD<f64>) {
    let s = Array1::from_vec(vec![0.3, 0.8, 0.45, 0.7, 0.2, 0.65, 0.5, 0.35]);
    let w0 = build_warp(&s, 4).expect("seed scores are valid");
    let mask = w0.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }).into_dyn();
    (w0, mask)
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let mut cases = Vec::new();
    let a23 = rand_array(rng, &[2, 3], -1.0, 1.0);
    let b23 = rand_array(rng, &[2, 3], 0.5, 1.5);
    let pos = rand_array(rng, &[2, 3], 0.5, 2.0);
    let away_zero = {
        let mut x = rand_array(rng, &[2, 3], 0.2, 1.0);
        for (i, v) in x.iter_mut().enumerate() {
            if i % 2 == 0 {
                *v = -*v;
            }
        }
        x
    };
    let m34 = rand_array(rng, &[3, 4], -1.0, 1.0);
    let m45 = rand_array(rng, &[4, 5], -1.0, 1.0);
    let x_conv = rand_array(rng, &[2, 3, 7], -1.0, 1.0);
    let w_conv = rand_array(rng, &[4, 3, 5], -0.5, 0.5);
    let b_conv = rand_array(rng, &[4], -0.5, 0.5);
    let gamma = rand_array(rng, &[3], 0.5, 1.5);
    let beta = rand_array(rng, &[3], -0.5, 0.5);
    // Distinct-by-construction values keep every max unique under FD_STEP.
    let spread = ArrayD::from_shape_vec(
        IxDyn(&[2, 3]),
        vec![0.11, 0.72, 0.31, 0.93, 0.52, 0.18],
    )
    .unwrap();

    let unary: Vec<(&'static str, ArrayD<f64>, Box<dyn Fn(&mut Tape, Var) -> Result<Var, TapeError>>)> = vec![
        ("add_scalar", a23.clone(), Box::new(|t, v| t.add_scalar(v, 0.7))),
        ("mul_scalar", a23.clone(), Box::new(|t, v| t.mul_scalar(v, -1.3))),
        ("pow_scalar", pos.clone(), Box::new(|t, v| t.pow_scalar(v, 1.7))),
        ("sigmoid", a23.clone(), Box::new(|t, v| t.sigmoid(v))),
        ("leaky_relu", away_zero.clone(), Box::new(|t, v| t.leaky_relu(v, 0.1))),
        ("ln", pos.clone(), Box::new(|t, v| t.ln(v))),
        ("exp", a23.clone(), Box::new(|t, v| t.exp(v))),
        ("sum", a23.clone(), Box::new(|t, v| t.sum(v))),
        ("mean", a23.clone(), Box::new(|t, v| t.mean(v))),
        ("max", spread.clone(), Box::new(|t, v| t.max(v))),
        ("sum_axis", a23.clone(), Box::new(|t, v| t.sum_axis(v, 1))),
        ("mean_axis", a23.clone(), Box::new(|t, v| t.mean_axis(v, 0))),
        ("max_axis", spread.clone(), Box::new(|t, v| t.max_axis(v, 1))),
        ("cumsum", a23.clone(), Box::new(|t, v| t.cumsum(v, 1))),
        ("slice", a23.clone(), Box::new(|t, v| t.slice(v, 1, 1, 3))),
        ("transpose2", a23.clone(), Box::new(|t, v| t.transpose2(v))),
        ("max_scalar", away_zero.clone(), Box::new(|t, v| t.max_scalar(v, 0.05))),
        ("reshape", a23.clone(), Box::new(|t, v| t.reshape(v, &[3, 2]))),
    ];
    for (name, input, f) in unary {
        cases.push(OpCase {
            name,
            inputs: vec![input],
            masks: vec![None],
            build: Box::new(move |t, vs| f(t, vs[0])),
        });
    }

    let binary: Vec<(&'static str, ArrayD<f64>, ArrayD<f64>, Box<dyn Fn(&mut Tape, Var, Var) -> Result<Var, TapeError>>)> = vec![
        ("add", a23.clone(), b23.clone(), Box::new(|t, x, y| t.add(x, y))),
        ("sub", a23.clone(), b23.clone(), Box::new(|t, x, y| t.sub(x, y))),
        ("mul", a23.clone(), b23.clone(), Box::new(|t, x, y| t.mul(x, y))),
        ("div", a23.clone(), b23.clone(), Box::new(|t, x, y| t.div(x, y))),
        ("matmul", m34.clone(), m45.clone(), Box::new(|t, x, y| t.matmul(x, y))),
        ("concat", a23.clone(), spread.clone(), Box::new(|t, x, y| t.concat(&[x, y], 0))),
    ];
    for (name, x, y, f) in binary {
        cases.push(OpCase {
            name,
            inputs: vec![x, y],
            masks: vec![None, None],
            build: Box::new(move |t, vs| f(t, vs[0], vs[1])),
        });
    }

    cases.push(OpCase {
        name: "conv1d_same",
        inputs: vec![x_conv, w_conv, b_conv],
        masks: vec![None, None, None],
        build: Box::new(|t, vs| t.conv1d_same(vs[0], vs[1], vs[2])),
    });

    cases.push(OpCase {
        name: "batchnorm1d",
        inputs: vec![rand_array(rng, &[2, 3, 5], -1.0, 1.0), gamma, beta],
        masks: vec![None, None, None],
        build: Box::new(|t, vs| Ok(t.batchnorm1d(vs[0], vs[1], vs[2], 1e-5, None)?.0)),
    });

    let (w0, mask) = stable_warp_seed();
    cases.push(OpCase {
        name: "row_fill_normalize",
        inputs: vec![w0.into_dyn()],
        masks: vec![Some(mask)],
        build: Box::new(|t, vs| t.row_fill_normalize(vs[0])),
    });

    cases
}

/// Fixed problem for the end-to-end check: small scorer over an 8-band,
/// 32-frame input, full warp pipeline, constant linear head, and the summed
/// guide + classification loss.
struct EndToEndSetup {
    net: FrameImportanceNet,
    store: ParamStore,
    x: Array2<f64>,
    energy: Array1<f64>,
    head: Array2<f64>,
    targets: ArrayD<f64>,
    cfg: DiffResConfig,
}

fn end_to_end_setup() -> EndToEndSetup {
    let (f, tt) = (8usize, 32usize);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = FrameImportanceNet::with_channels("scorer", &[(f, 4), (4, 1)]);
    let mut store = ParamStore::new();
    net.init(&mut store, &mut rng);
    let x = rand_array(&mut rng, &[f, tt], -1.0, 1.0)
        .into_dimensionality()
        .expect("two axes");
    let energy = Array1::from_iter((0..tt).map(|j| if j % 3 == 0 { 0.0 } else { 0.5 }));
    let head = rand_array(&mut rng, &[3 * f, 2], -0.5, 0.5)
        .into_dimensionality()
        .expect("two axes");
    let targets = ArrayD::from_shape_vec(IxDyn(&[1, 2]), vec![1.0, 0.0]).unwrap();
    let cfg = DiffResConfig { delta: 0.5, epsilon: 1e-4, naive_normalizer: false };
    EndToEndSetup { net, store, x, energy, head, targets, cfg }
}

/// Total loss for the current parameter values, training-mode statistics.
fn end_to_end_loss(setup: &EndToEndSetup, store: &ParamStore) -> Result<f64, TapeError> {
    let mut store = store.clone();
    let mut ctx = Ctx::new(&mut store, true);
    let loss = end_to_end_graph(&mut ctx, setup)?;
    Ok(ctx.tape.value(loss)[IxDyn(&[])])
}

fn end_to_end_graph(ctx: &mut Ctx<'_>, setup: &EndToEndSetup) -> Result<Var, TapeError> {
    let wrap = |e: adares_core::warp::WarpError| TapeError::Invalid(e.to_string());
    let lwrap = |e: adares_core::loss::LossError| TapeError::Invalid(e.to_string());
    let s_prime =
        adares_core::warp::estimate_importance(ctx, &setup.net, &setup.x).map_err(wrap)?;
    let out = diffres_from_scores(&mut ctx.tape, s_prime, &setup.x, &setup.energy, &setup.cfg)
        .map_err(wrap)?;
    let guide = guide_loss_t(
        &mut ctx.tape,
        out.importance,
        &setup.energy,
        setup.cfg.epsilon,
        setup.cfg.delta,
        0.5,
    )
    .map_err(lwrap)?;
    let pooled = ctx.tape.mean_axis(out.features, 1)?;
    let flat = ctx.tape.reshape(pooled, &[1, setup.head.nrows()])?;
    let head = ctx.tape.constant(setup.head.clone().into_dyn())?;
    let logits = ctx.tape.matmul(flat, head)?;
    let probs = ctx.tape.sigmoid(logits)?;
    let bce = bce_loss_t(&mut ctx.tape, probs, &setup.targets).map_err(lwrap)?;
    ctx.tape.add(bce, guide)
}

fn run_end_to_end() -> Result<EndToEndCheck, TapeError> {
    let setup = end_to_end_setup();
    let mut store = setup.store.clone();
    let analytic = {
        let mut ctx = Ctx::new(&mut store, true);
        let loss = end_to_end_graph(&mut ctx, &setup)?;
        let grads = ctx.tape.backward(loss)?;
        ctx.collect_grads(&grads)
    };

    let mut max_err = 0.0f64;
    let mut params_checked = 0usize;
    let corrupt = std::env::var(CORRUPT_ENV).as_deref() == Ok("end_to_end");
    let names: Vec<String> = setup.store.param_names().cloned().collect();
    for name in names {
        let base = setup.store.param(&name).expect("listed parameter").clone();
        for idx in 0..base.len() {
            let mut plus = setup.store.clone();
            let mut minus = setup.store.clone();
            plus.param_mut(&name).unwrap().as_slice_mut().unwrap()[idx] += FD_STEP;
            minus.param_mut(&name).unwrap().as_slice_mut().unwrap()[idx] -= FD_STEP;
            let fd = (end_to_end_loss(&setup, &plus)? - end_to_end_loss(&setup, &minus)?)
                / (2.0 * FD_STEP);
            let mut an = analytic[&name].as_slice().expect("gradient is contiguous")[idx];
            if corrupt && params_checked == 0 {
                an += 1e-2;
            }
            params_checked += 1;
            max_err = max_err.max(rel_err(an, fd));
        }
    }
    Ok(EndToEndCheck {
        params_checked,
        max_rel_err: max_err,
        tol: END_TO_END_TOL,
        pass: max_err < END_TO_END_TOL,
    })
}

/// Runs every per-op check plus the end-to-end check.
pub fn run_gradcheck(seed: u64) -> Result<GradReport, TapeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ops = Vec::new();
    for case in op_cases(&mut rng) {
        ops.push(check_case(&case, &mut rng)?);
    }
    let end_to_end = run_end_to_end()?;
    Ok(GradReport { ops, end_to_end })
}

/// Spectrogram settings used by the gradcheck examples; kept here so the
/// CLI reports which configuration the numbers refer to.
pub fn gradcheck_spec() -> SpectrogramConfig {
    SpectrogramConfig { n_mels: 8, ..SpectrogramConfig::default() }
}
