//! Training objectives: the guide penalty that pushes importance away from
//! low-energy frames, and binary cross-entropy for the classifier head.
//! Each exists as a plain-array oracle and as tape ops.

use crate::tape::{Tape, TapeError, Var};
use ndarray::{Array1, ArrayD, IxDyn};

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("{0}")]
    BadInput(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

type Result<T> = std::result::Result<T, LossError>;

/// Probability clamp keeping log terms finite.
pub const PROB_CLAMP: f64 = 1e-7;

/// Hinge threshold defaults for the guide penalty.
#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Importance (in units of the kept fraction) tolerated on empty frames.
    pub lambda: f64,
    /// Energy threshold separating empty from active frames.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.5, epsilon: 1e-4 }
    }
}

fn empty_mask(energy: &Array1<f64>, epsilon: f64) -> (Array1<f64>, usize) {
    let mask = energy.mapv(|e| if e <= epsilon { 1.0 } else { 0.0 });
    let count = mask.iter().filter(|&&m| m > 0.0).count();
    (mask, count)
}

/// Mean hinge excess of importance over low-energy frames:
/// mean over {j : energy_j <= epsilon} of max(s_j / delta - lambda, 0).
/// Zero when no frame is empty.
pub fn guide_loss(
    s: &Array1<f64>,
    energy: &Array1<f64>,
    epsilon: f64,
    delta: f64,
    lambda: f64,
) -> Result<f64> {
    if delta <= 0.0 {
        return Err(LossError::BadInput(
            "guide loss is undefined without dimension reduction".into(),
        ));
    }
    if s.len() != energy.len() {
        return Err(LossError::BadInput(format!(
            "importance/energy length mismatch: {} vs {}",
            s.len(),
            energy.len()
        )));
    }
    let (mask, count) = empty_mask(energy, epsilon);
    if count == 0 {
        return Ok(0.0);
    }
    let total: f64 = s
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| m * (v / delta - lambda).max(0.0))
        .sum();
    Ok(total / count as f64)
}

/// Binary cross-entropy with probabilities clamped to
/// [PROB_CLAMP, 1 - PROB_CLAMP], averaged over all elements.
pub fn bce_loss(probs: &ArrayD<f64>, targets: &ArrayD<f64>) -> Result<f64> {
    if probs.shape() != targets.shape() {
        return Err(LossError::BadInput(format!(
            "probability/target shape mismatch: {:?} vs {:?}",
            probs.shape(),
            targets.shape()
        )));
    }
    if probs.is_empty() {
        return Err(LossError::BadInput("empty prediction tensor".into()));
    }
    let n = probs.len() as f64;
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(targets.iter()) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(-total / n)
}

/// Guide penalty on the tape. The empty-frame mask is a constant; gradient
/// flows into `s` through the hinge.
pub fn guide_loss_t(
    tape: &mut Tape,
    s: Var,
    energy: &Array1<f64>,
    epsilon: f64,
    delta: f64,
    lambda: f64,
) -> Result<Var> {
    if delta <= 0.0 {
        return Err(LossError::BadInput(
            "guide loss is undefined without dimension reduction".into(),
        ));
    }
    let tt = tape.value(s).len();
    if tt != energy.len() {
        return Err(LossError::BadInput(format!(
            "importance/energy length mismatch: {tt} vs {}",
            energy.len()
        )));
    }
    let (mask, count) = empty_mask(energy, epsilon);
    if count == 0 {
        return Ok(tape.scalar(0.0)?);
    }
    let scaled = tape.mul_scalar(s, 1.0 / delta)?;
    let shifted = tape.add_scalar(scaled, -lambda)?;
    let hinge = tape.max_scalar(shifted, 0.0)?;
    let mask = tape.constant(mask.into_dyn())?;
    let masked = tape.mul(hinge, mask)?;
    let total = tape.sum(masked)?;
    Ok(tape.mul_scalar(total, 1.0 / count as f64)?)
}

/// Binary cross-entropy on the tape, with the same clamping as the oracle.
/// Gradient does not flow where the clamp is active.
pub fn bce_loss_t(tape: &mut Tape, probs: Var, targets: &ArrayD<f64>) -> Result<Var> {
    let shape = tape.value(probs).shape().to_vec();
    if shape != targets.shape() {
        return Err(LossError::BadInput(format!(
            "probability/target shape mismatch: {shape:?} vs {:?}",
            targets.shape()
        )));
    }
    // clamp to [c, 1-c]: lower via max, upper via -max(-x, -(1-c)).
    let p = tape.max_scalar(probs, PROB_CLAMP)?;
    let pn = tape.mul_scalar(p, -1.0)?;
    let pn = tape.max_scalar(pn, -(1.0 - PROB_CLAMP))?;
    let p = tape.mul_scalar(pn, -1.0)?;

    let y = tape.constant(targets.clone())?;
    let ones = tape.constant(ArrayD::ones(IxDyn(&shape)))?;
    let not_y = tape.sub(ones, y)?;
    let ln_p = tape.ln(p)?;
    let one_minus_p = {
        let o = tape.constant(ArrayD::ones(IxDyn(&shape)))?;
        tape.sub(o, p)?
    };
    let ln_q = tape.ln(one_minus_p)?;
    let pos = tape.mul(y, ln_p)?;
    let neg = tape.mul(not_y, ln_q)?;
    let sum = tape.add(pos, neg)?;
    let m = tape.mean(sum)?;
    Ok(tape.mul_scalar(m, -1.0)?)
}
