//! Learnable temporal-resolution warping.
//!
//! A spectrogram with T frames is compressed to t <= T output frames by a
//! warp matrix built from per-frame importance scores:
//!
//! 1. a conv net scores each frame; a sigmoid maps scores to (0, 1);
//! 2. scores are rescaled so they sum to t, then clipped at 1 per entry;
//! 3. the cumulative sum of the clipped scores routes each input frame j to
//!    output row ceil(cumsum_j) - 1, giving a sparse (t, T) matrix whose
//!    column j holds s_j;
//! 4. rows are topped up to sum exactly 1 by borrowing the deficit from the
//!    next row at the first empty slot — either with a scalar walk or with
//!    an equivalent vectorized formulation (both provided, both
//!    differentiable, equality is enforced by tests);
//! 5. the warp matrix aggregates frames (weighted mean and masked max) and
//!    mixes a sinusoidal position table into a resolution encoding.
//!
//! Every step exists twice: as a plain-array function (used for inference
//! and as a test oracle) and as tape ops (used for training).

use crate::dsp::Spectrogram;
use crate::nn::{Ctx, FrameImportanceNet};
use crate::tape::{row_fill_walk, Tape, TapeError, Var};
use ndarray::{Array1, Array2, ArrayD, IxDyn};

#[derive(Debug, thiserror::Error)]
pub enum WarpError {
    #[error("{0}")]
    BadInput(String),
    #[error("importance mass {sum:.6} exceeds the {t} output slots")]
    MassExceeded { sum: f64, t: usize },
    #[error(transparent)]
    Tape(#[from] TapeError),
}

type Result<T> = std::result::Result<T, WarpError>;

/// Tolerance for floating-point mass and negativity checks.
const MASS_TOL: f64 = 1e-9;
/// Additive mask that removes off-support slots from max aggregation while
/// keeping every intermediate finite.
const MASK_NEG: f64 = -1e30;

/// Settings for the differentiable resolution module.
#[derive(Debug, Clone)]
pub struct DiffResConfig {
    /// Fraction of frames to remove: t = max(1, round((1 - delta) * T)).
    pub delta: f64,
    /// Energy threshold separating empty from active frames.
    pub epsilon: f64,
    /// Use the scalar-walk row normalizer instead of the vectorized one.
    pub naive_normalizer: bool,
}

impl Default for DiffResConfig {
    fn default() -> Self {
        Self { delta: 0.5, epsilon: 1e-4, naive_normalizer: false }
    }
}

impl DiffResConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta) {
            return Err(WarpError::BadInput(format!(
                "dimension reduction must lie in [0, 1), got {}",
                self.delta
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(WarpError::BadInput(format!(
                "energy threshold must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Number of output frames for `total` input frames at reduction `delta`.
pub fn target_frames(total: usize, delta: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&delta) {
        return Err(WarpError::BadInput(format!(
            "dimension reduction must lie in [0, 1), got {delta}"
        )));
    }
    if total == 0 {
        return Err(WarpError::BadInput("spectrogram has zero frames".into()));
    }
    Ok((((1.0 - delta) * total as f64).round() as usize).max(1))
}

/// Rescales raw importance values to sum to `t`, clipping each entry at 1.
pub fn rescale_importance(s_prime: &Array1<f64>, t: usize) -> Result<Array1<f64>> {
    let sum = s_prime.sum();
    if !(sum > 0.0) {
        return Err(WarpError::BadInput(format!(
            "importance values must have positive sum, got {sum}"
        )));
    }
    Ok(s_prime.mapv(|v| (v * t as f64 / sum).min(1.0)))
}

/// Row index each input frame routes to: ceil(cumsum) - 1, clamped to the
/// valid range. Errors when the total mass exceeds the row budget. Every
/// importance value must be strictly positive (the sigmoid guarantees this
/// in the pipeline); a zero would split a row's support and make the
/// normalizers disagree about where the row boundary sits.
pub fn warp_routing(s: &Array1<f64>, t: usize) -> Result<Vec<usize>> {
    if t == 0 {
        return Err(WarpError::BadInput("need at least one output frame".into()));
    }
    let mut rows = Vec::with_capacity(s.len());
    let mut c = 0.0f64;
    for &v in s {
        if v <= 0.0 {
            return Err(WarpError::BadInput(format!("non-positive importance value {v}")));
        }
        c += v;
        let r = (c.ceil() - 1.0).max(0.0) as usize;
        rows.push(r.min(t - 1));
    }
    if c > t as f64 + MASS_TOL {
        return Err(WarpError::MassExceeded { sum: c, t });
    }
    Ok(rows)
}

/// Sparse warp seed: a (t, T) matrix with s_j in row `routing[j]`, column j.
pub fn build_warp(s: &Array1<f64>, t: usize) -> Result<Array2<f64>> {
    let rows = warp_routing(s, t)?;
    let mut w = Array2::zeros((t, s.len()));
    for (j, (&r, &v)) in rows.iter().zip(s).enumerate() {
        w[[r, j]] = v;
    }
    Ok(w)
}

/// Scalar-walk row normalization (reference route): tops each row up to sum
/// 1 by writing the deficit into the first empty slot and subtracting it
/// from the row below.
pub fn normalize_warp_naive(w0: &Array2<f64>) -> Result<Array2<f64>> {
    let (w, _) = row_fill_walk(w0.view(), MASS_TOL).map_err(WarpError::BadInput)?;
    Ok(w)
}

/// Vectorized row normalization: computes cumulative row deficits and
/// applies them at the support boundaries located by a sign/difference
/// stencil. Agrees with [`normalize_warp_naive`] on every valid input.
pub fn normalize_warp_vectorized(w0: &Array2<f64>) -> Result<Array2<f64>> {
    let (t, tt) = w0.dim();
    if t == 0 || tt == 0 {
        return Err(WarpError::BadInput("empty warp matrix".into()));
    }
    // Cumulative deficit per row, replicated across columns.
    let mut p = vec![0.0f64; t];
    let mut acc = 0.0;
    for i in 0..t {
        acc += 1.0 - w0.row(i).sum();
        p[i] = acc;
    }
    let mut w = w0.to_owned();
    for i in 0..t {
        // Walk the support indicator's transitions (first column padded 0):
        // the slot just past this row's support takes its deficit, and the
        // slot where the next row's support begins gives the same amount
        // back.
        let row0 = w0.row(i);
        for j in 1..tt {
            let (prev, cur) = (row0[j - 1] > 0.0, row0[j] > 0.0);
            if prev && !cur {
                w[[i, j]] += p[i];
            }
            if cur && !prev && i > 0 {
                w[[i, j]] -= p[i - 1];
            }
        }
        for j in 0..tt {
            if w[[i, j]] < -MASS_TOL {
                return Err(WarpError::BadInput(format!(
                    "negative weight {:.3e} at row {i}, column {j} after normalization",
                    w[[i, j]]
                )));
            }
        }
    }
    Ok(w)
}

/// Weighted-mean aggregation: rows of `w` mix columns of `x`; (F, T) x
/// (t, T) -> (F, t). Each row's support spans only a handful of columns, so
/// the sum walks that span instead of a full dense product.
pub fn warp_frames_mean(x: &Array2<f64>, w: &Array2<f64>) -> Result<Array2<f64>> {
    check_agg_shapes(x, w)?;
    let (f, tt) = x.dim();
    let t = w.nrows();
    let mut out = Array2::zeros((f, t));
    for i in 0..t {
        let row = w.row(i);
        let Some(lo) = (0..tt).find(|&j| row[j] != 0.0) else {
            continue; // no support: the output frame stays zero
        };
        let hi = (0..tt).rev().find(|&j| row[j] != 0.0).expect("lo exists");
        for fi in 0..f {
            let xr = x.row(fi);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += xr[j] * row[j];
            }
            out[[fi, i]] = acc;
        }
    }
    Ok(out)
}

/// Masked-max aggregation: per output frame, the maximum of x * w over the
/// columns where w is positive. Frames with no support (possible when heavy
/// clipping leaves trailing rows unused) aggregate to zero, matching the
/// all-zero column the mean channel produces there.
pub fn warp_frames_max(x: &Array2<f64>, w: &Array2<f64>) -> Result<Array2<f64>> {
    check_agg_shapes(x, w)?;
    let (f, tt) = x.dim();
    let t = w.nrows();
    let mut out = Array2::zeros((f, t));
    // Each row's support covers only a handful of input frames (contiguous
    // for warps built from a routing), so the per-band scan walks the
    // support instead of all tt columns.
    let mut scattered: Vec<usize> = Vec::new();
    for i in 0..t {
        let row = w.row(i);
        let lo = (0..tt).find(|&j| row[j] > 0.0);
        let hi = (0..tt).rev().find(|&j| row[j] > 0.0);
        let (Some(lo), Some(hi)) = (lo, hi) else {
            continue; // no support: the zero fill already matches the mean channel
        };
        let contiguous = (lo..=hi).all(|j| row[j] > 0.0);
        if !contiguous {
            scattered.clear();
            scattered.extend((lo..=hi).filter(|&j| row[j] > 0.0));
        }
        for fi in 0..f {
            let xr = x.row(fi);
            let mut best = f64::NEG_INFINITY;
            if contiguous {
                for j in lo..=hi {
                    best = best.max(xr[j] * row[j]);
                }
            } else {
                for &j in &scattered {
                    best = best.max(xr[j] * row[j]);
                }
            }
            out[[fi, i]] = best;
        }
    }
    Ok(out)
}

fn check_agg_shapes(x: &Array2<f64>, w: &Array2<f64>) -> Result<()> {
    if x.ncols() != w.ncols() {
        return Err(WarpError::BadInput(format!(
            "frame count mismatch: features have {} frames, warp has {}",
            x.ncols(),
            w.ncols()
        )));
    }
    Ok(())
}

/// Memoized position tables: deterministic in (dim, positions), so repeated
/// clips at one geometry pay the trig once.
fn pos_table(dim: usize, positions: usize) -> std::sync::Arc<Array2<f64>> {
    use std::collections::HashMap;
    use std::sync::{Arc, Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Array2<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("position table cache");
    map.entry((dim, positions))
        .or_insert_with(|| {
            let mut e = Array2::zeros((dim, positions));
            for d in 0..dim {
                let i = (d / 2) as f64;
                let denom = 10000f64.powf(2.0 * i / dim as f64);
                for p in 0..positions {
                    let angle = p as f64 / denom;
                    e[[d, p]] = if d % 2 == 0 { angle.sin() } else { angle.cos() };
                }
            }
            Arc::new(e)
        })
        .clone()
}

/// Sinusoidal position table, shape (dim, positions): row 2i is
/// sin(p / 10000^(2i/dim)), row 2i+1 is cos of the same angle.
pub fn positional_encoding(dim: usize, positions: usize) -> Array2<f64> {
    pos_table(dim, positions).as_ref().clone()
}

/// Mixes the position table through the warp: E (F, T) x W^T -> (F, t).
pub fn resolution_encoding(w: &Array2<f64>, n_mels: usize) -> Array2<f64> {
    warp_frames_mean(pos_table(n_mels, w.ncols()).as_ref(), w)
        .expect("table has one column per warp column")
}

/// Spread of importance over energetic frames, in units of the reduction
/// fraction: population std of {s_j : energy_j > epsilon} divided by delta.
/// Zero when fewer than two frames are active.
pub fn activeness(
    s: &Array1<f64>,
    energy: &Array1<f64>,
    epsilon: f64,
    delta: f64,
) -> Result<f64> {
    if delta <= 0.0 {
        return Err(WarpError::BadInput(
            "activeness is undefined without dimension reduction".into(),
        ));
    }
    if s.len() != energy.len() {
        return Err(WarpError::BadInput(format!(
            "importance/energy length mismatch: {} vs {}",
            s.len(),
            energy.len()
        )));
    }
    let active: Vec<f64> = s
        .iter()
        .zip(energy)
        .filter(|(_, &e)| e > epsilon)
        .map(|(&v, _)| v)
        .collect();
    if active.len() <= 1 {
        return Ok(0.0);
    }
    let n = active.len() as f64;
    let mean = active.iter().sum::<f64>() / n;
    let var = active.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt() / delta)
}

// ---------------------------------------------------------------------------
// Tape route
// ---------------------------------------------------------------------------

/// Rescale-and-clip on the tape; input and output are (T,) vectors. Clipped
/// entries receive zero gradient.
pub fn rescale_importance_t(tape: &mut Tape, s_prime: Var, t: usize) -> Result<Var> {
    let sum = tape.sum(s_prime)?;
    let sum_val = tape.value(sum).iter().next().copied().unwrap_or(0.0);
    if !(sum_val > 0.0) {
        return Err(WarpError::BadInput(format!(
            "importance values must have positive sum, got {sum_val}"
        )));
    }
    let scaled = tape.div(s_prime, sum)?;
    let scaled = tape.mul_scalar(scaled, t as f64)?;
    // min(x, 1) written as -max(-x, -1).
    let neg = tape.mul_scalar(scaled, -1.0)?;
    let clipped = tape.max_scalar(neg, -1.0)?;
    Ok(tape.mul_scalar(clipped, -1.0)?)
}

/// Warp seed on the tape: the routing pattern is fixed from the forward
/// values (no gradient through slot placement); each column's value stays a
/// differentiable function of s.
pub fn build_warp_t(tape: &mut Tape, s: Var, t: usize) -> Result<Var> {
    let values = tape
        .value(s)
        .view()
        .into_dimensionality::<ndarray::Ix1>()
        .map_err(|_| WarpError::BadInput("importance must be a vector".into()))?
        .to_owned();
    let rows = warp_routing(&values, t)?;
    let tt = values.len();
    let mut routing = ArrayD::zeros(IxDyn(&[t, tt]));
    for (j, &r) in rows.iter().enumerate() {
        routing[[r, j]] = 1.0;
    }
    let routing = tape.constant(routing)?;
    let s_row = tape.reshape(s, &[1, tt])?;
    Ok(tape.mul(routing, s_row)?)
}

/// Scalar-walk normalization on the tape (exact adjoint of the walk).
pub fn normalize_warp_naive_t(tape: &mut Tape, w0: Var) -> Result<Var> {
    Ok(tape.row_fill_normalize(w0)?)
}

/// Vectorized normalization on the tape. The support stencil is fixed from
/// the forward values; deficits stay differentiable.
pub fn normalize_warp_vectorized_t(tape: &mut Tape, w0: Var) -> Result<Var> {
    let shape = tape.value(w0).shape().to_vec();
    if shape.len() != 2 {
        return Err(WarpError::BadInput("warp seed must be 2-d".into()));
    }
    let (t, tt) = (shape[0], shape[1]);
    let w0_vals = tape.value(w0).clone();
    // Support indicator and boundary stencils from forward values.
    let mut q = Array2::<f64>::zeros((t, tt));
    for i in 0..t {
        for j in 1..tt {
            let mj = if w0_vals[[i, j]] > 0.0 { 1.0 } else { 0.0 };
            let mp = if w0_vals[[i, j - 1]] > 0.0 { 1.0 } else { 0.0 };
            q[[i, j]] = mj - mp;
        }
    }
    let q_neg = q.mapv(|v| (-v).max(0.0)).into_dyn();
    let q_pos = q.mapv(|v| v.max(0.0)).into_dyn();

    let rowsum = tape.sum_axis(w0, 1)?;
    let ones_t = tape.constant(ArrayD::ones(IxDyn(&[t])))?;
    let deficit = tape.sub(ones_t, rowsum)?;
    let p = tape.cumsum(deficit, 0)?;
    let p_col = tape.reshape(p, &[t, 1])?;
    let ones_row = tape.constant(ArrayD::ones(IxDyn(&[1, tt])))?;
    let pmat = tape.matmul(p_col, ones_row)?;

    let q_neg = tape.constant(q_neg)?;
    let fill = tape.mul(pmat, q_neg)?;

    let pshift = if t == 1 {
        tape.constant(ArrayD::zeros(IxDyn(&[1, tt])))?
    } else {
        let zero_row = tape.constant(ArrayD::zeros(IxDyn(&[1, tt])))?;
        let upper = tape.slice(pmat, 0, 0, t - 1)?;
        tape.concat(&[zero_row, upper], 0)?
    };
    let q_pos = tape.constant(q_pos)?;
    let borrow = tape.mul(pshift, q_pos)?;

    let adj = tape.sub(fill, borrow)?;
    let w = tape.add(adj, w0)?;
    for &v in tape.value(w) {
        if v < -MASS_TOL {
            return Err(WarpError::BadInput(format!(
                "negative weight {v:.3e} after normalization"
            )));
        }
    }
    Ok(w)
}

/// Weighted-mean aggregation on the tape: matmul(x, w^T).
pub fn warp_frames_mean_t(tape: &mut Tape, x: Var, w: Var) -> Result<Var> {
    let wt = tape.transpose2(w)?;
    Ok(tape.matmul(x, wt)?)
}

/// Masked-max aggregation on the tape: per output frame, the max of x * w
/// over the support of w (off-support slots are pushed to a large negative
/// constant before the reduction). Frames with no support aggregate to zero
/// with zero gradient, matching the plain route.
pub fn warp_frames_max_t(tape: &mut Tape, x: Var, w: Var) -> Result<Var> {
    let xs = tape.value(x).shape().to_vec();
    let ws = tape.value(w).shape().to_vec();
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(WarpError::BadInput(format!(
            "aggregation shapes mismatch: x {xs:?}, w {ws:?}"
        )));
    }
    let (f, tt) = (xs[0], xs[1]);
    let t = ws[0];
    let w_vals = tape.value(w).clone();
    let mask = w_vals.mapv(|v| if v > 0.0 { 0.0 } else { MASK_NEG });
    let mask = tape.constant(mask.into_shape_with_order(IxDyn(&[t, 1, tt])).expect("shape"))?;
    let mut occupied = ArrayD::zeros(IxDyn(&[1, t]));
    for i in 0..t {
        if (0..tt).any(|j| w_vals[[i, j]] > 0.0) {
            occupied[[0, i]] = 1.0;
        }
    }
    let x3 = tape.reshape(x, &[1, f, tt])?;
    let w3 = tape.reshape(w, &[t, 1, tt])?;
    let prod = tape.mul(w3, x3)?;
    let masked = tape.add(prod, mask)?;
    let mx = tape.max_axis(masked, 2)?;
    let mx = tape.transpose2(mx)?;
    let occupied = tape.constant(occupied)?;
    Ok(tape.mul(mx, occupied)?)
}

/// Resolution encoding on the tape: constant position table through the warp.
pub fn resolution_encoding_t(tape: &mut Tape, w: Var, n_mels: usize) -> Result<Var> {
    let tt = tape.value(w).shape()[1];
    let e = positional_encoding(n_mels, tt).into_dyn();
    let e = tape.constant(e)?;
    let wt = tape.transpose2(w)?;
    Ok(tape.matmul(e, wt)?)
}

/// Scores a spectrogram with the conv net and squashes to (0, 1): (F, T)
/// -> importance vector (T,).
pub fn estimate_importance(
    ctx: &mut Ctx<'_>,
    net: &FrameImportanceNet,
    x: &Array2<f64>,
) -> Result<Var> {
    let (f, tt) = x.dim();
    let x3 = ctx.constant(
        x.to_owned()
            .into_shape_with_order(IxDyn(&[1, f, tt]))
            .expect("reshape view"),
    )?;
    let scores = net.forward(ctx, x3)?;
    let flat = ctx.tape.reshape(scores, &[tt])?;
    Ok(ctx.tape.sigmoid(flat)?)
}

/// Everything the training loop needs from one clip's warp pass.
pub struct DiffResOutput {
    /// Rescaled, clipped importance (T,).
    pub importance: Var,
    /// Raw sigmoid importance before rescaling (T,).
    pub raw_importance: Var,
    /// Normalized warp matrix (t, T).
    pub warp: Var,
    /// Weighted-mean channel (F, t).
    pub mean: Var,
    /// Masked-max channel (F, t).
    pub max: Var,
    /// Resolution-encoding channel (F, t).
    pub encoding: Var,
    /// All three channels stacked, (3F, t).
    pub features: Var,
    /// Importance spread over energetic frames; None when delta is 0.
    pub rho: Option<f64>,
    pub target_frames: usize,
}

/// Runs the full differentiable pipeline for one spectrogram, starting from
/// precomputed importance scores (so the scorer can be batched separately).
pub fn diffres_from_scores(
    tape: &mut Tape,
    s_prime: Var,
    x: &Array2<f64>,
    energy: &Array1<f64>,
    cfg: &DiffResConfig,
) -> Result<DiffResOutput> {
    cfg.validate()?;
    let (f, tt) = x.dim();
    if tape.value(s_prime).len() != tt {
        return Err(WarpError::BadInput(format!(
            "importance length {} does not match {} frames",
            tape.value(s_prime).len(),
            tt
        )));
    }
    let t = target_frames(tt, cfg.delta)?;
    let s = rescale_importance_t(tape, s_prime, t)?;
    let w0 = build_warp_t(tape, s, t)?;
    let w = if cfg.naive_normalizer {
        normalize_warp_naive_t(tape, w0)?
    } else {
        normalize_warp_vectorized_t(tape, w0)?
    };
    let x_const = tape.constant(x.to_owned().into_dyn())?;
    let mean = warp_frames_mean_t(tape, x_const, w)?;
    let max = warp_frames_max_t(tape, x_const, w)?;
    let encoding = resolution_encoding_t(tape, w, f)?;
    let features = tape.concat(&[mean, max, encoding], 0)?;
    let rho = if cfg.delta > 0.0 {
        let s_vals = tape
            .value(s)
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("importance is a vector")
            .to_owned();
        Some(activeness(&s_vals, energy, cfg.epsilon, cfg.delta)?)
    } else {
        None
    };
    Ok(DiffResOutput {
        importance: s,
        raw_importance: s_prime,
        warp: w,
        mean,
        max,
        encoding,
        features,
        rho,
        target_frames: t,
    })
}

/// Scores and warps a single spectrogram end to end on the tape.
pub fn diffres_forward(
    ctx: &mut Ctx<'_>,
    net: &FrameImportanceNet,
    x: &Array2<f64>,
    energy: &Array1<f64>,
    cfg: &DiffResConfig,
) -> Result<DiffResOutput> {
    let s_prime = estimate_importance(ctx, net, x)?;
    diffres_from_scores(&mut ctx.tape, s_prime, x, energy, cfg)
}

/// Plain-array result of the inference pipeline.
pub struct DiffResFeatures {
    pub importance: Array1<f64>,
    pub raw_importance: Array1<f64>,
    pub warp: Array2<f64>,
    pub mean: Array2<f64>,
    pub max: Array2<f64>,
    pub encoding: Array2<f64>,
    /// All three channels stacked, (3F, t).
    pub features: Array2<f64>,
    pub rho: Option<f64>,
    pub target_frames: usize,
}

/// Gradient-free pipeline over plain arrays (eval-mode scorer, vectorized
/// normalizer). Matches the tape route to float precision.
pub fn diffres_infer(
    store: &crate::nn::ParamStore,
    net: &FrameImportanceNet,
    sp: &Spectrogram,
    cfg: &DiffResConfig,
) -> Result<DiffResFeatures> {
    cfg.validate()?;
    let x = &sp.values;
    let (f, tt) = x.dim();
    let x3 = x
        .to_owned()
        .into_shape_with_order((1, f, tt))
        .expect("reshape view");
    let scores = net.infer(store, &x3);
    let raw = Array1::from_iter(
        (0..tt).map(|j| 1.0 / (1.0 + (-scores[[0, 0, j]]).exp())),
    );
    let t = target_frames(tt, cfg.delta)?;
    let s = rescale_importance(&raw, t)?;
    let w0 = build_warp(&s, t)?;
    let w = if cfg.naive_normalizer {
        normalize_warp_naive(&w0)?
    } else {
        normalize_warp_vectorized(&w0)?
    };
    let mean = warp_frames_mean(x, &w)?;
    let max = warp_frames_max(x, &w)?;
    let encoding = resolution_encoding(&w, f);
    let mut features = Array2::zeros((3 * f, t));
    features.slice_mut(ndarray::s![0..f, ..]).assign(&mean);
    features.slice_mut(ndarray::s![f..2 * f, ..]).assign(&max);
    features.slice_mut(ndarray::s![2 * f.., ..]).assign(&encoding);
    let energy = crate::dsp::frame_energy(sp);
    let rho = if cfg.delta > 0.0 {
        Some(activeness(&s, &energy, cfg.epsilon, cfg.delta)?)
    } else {
        None
    };
    Ok(DiffResFeatures {
        importance: s,
        raw_importance: raw,
        warp: w,
        mean,
        max,
        encoding,
        features,
        rho,
        target_frames: t,
    })
}
