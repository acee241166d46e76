//! Classifier head and the fixed temporal-reduction baselines the learned
//! front-end is compared against.

use adares_core::dsp::{mel_spectrogram, Spectrogram, SpectrogramConfig};
use adares_core::nn::{Ctx, Linear, ParamStore, ResConv1DBlock};
use adares_core::tape::{TapeError, Var};
use adares_core::wav::Waveform;
use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Dsp(#[from] adares_core::dsp::DspError),
}

type Result<T> = std::result::Result<T, ModelError>;

/// Front-end selection for training, evaluation, and benchmarking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Learned warp over the mel spectrogram.
    DiffRes,
    /// Plain mel spectrogram, no temporal reduction.
    Mel,
    /// Coarser hop size: recompute the mel front end at hop * factor.
    CHSize,
    /// Non-overlapping average pooling over time.
    AvgPool,
    /// Conv encoder followed by average pooling.
    ConvAvgPool,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::DiffRes => "diffres",
            Variant::Mel => "mel",
            Variant::CHSize => "chsize",
            Variant::AvgPool => "avgpool",
            Variant::ConvAvgPool => "convavgpool",
        }
    }

    pub fn all() -> [Variant; 5] {
        [Variant::DiffRes, Variant::Mel, Variant::CHSize, Variant::AvgPool, Variant::ConvAvgPool]
    }
}

impl std::str::FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffres" => Ok(Variant::DiffRes),
            "mel" | "mel-100fps" => Ok(Variant::Mel),
            "chsize" => Ok(Variant::CHSize),
            "avgpool" => Ok(Variant::AvgPool),
            "convavgpool" => Ok(Variant::ConvAvgPool),
            other => Err(ModelError::BadInput(format!(
                "unknown variant '{other}' (expected diffres, mel, chsize, avgpool, convavgpool)"
            ))),
        }
    }
}

/// Integer frame-reduction factor equivalent to removing a fraction
/// `delta` of the frames (1/(1 - delta), rounded).
pub fn reduction_factor(delta: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&delta) {
        return Err(ModelError::BadInput(format!("reduction fraction {delta} outside [0, 1)")));
    }
    Ok((1.0 / (1.0 - delta)).round().max(1.0) as usize)
}

/// Non-overlapping mean over time windows of `factor` frames. A ragged
/// tail is padded by repeating the final frame.
pub fn avg_pool(x: &Array2<f64>, factor: usize) -> Array2<f64> {
    assert!(factor >= 1, "pooling factor must be at least 1");
    let (f, t) = x.dim();
    if t == 0 {
        return x.clone();
    }
    let t_out = t.div_ceil(factor);
    let mut y = Array2::zeros((f, t_out));
    for i in 0..t_out {
        for fi in 0..f {
            let mut acc = 0.0;
            for k in 0..factor {
                let src = (i * factor + k).min(t - 1);
                acc += x[[fi, src]];
            }
            y[[fi, i]] = acc / factor as f64;
        }
    }
    y
}

/// Average pooling on the tape for (B, C, T) activations. Requires the
/// window to divide T exactly (training clips are sized accordingly).
pub fn avg_pool_t(ctx: &mut Ctx<'_>, x: Var, factor: usize) -> Result<Var> {
    let shape = ctx.tape.value(x).shape().to_vec();
    if shape.len() != 3 {
        return Err(ModelError::BadInput(format!("expected (B, C, T), got {shape:?}")));
    }
    let (b, c, t) = (shape[0], shape[1], shape[2]);
    if factor == 0 || t % factor != 0 {
        return Err(ModelError::BadInput(format!(
            "pooling window {factor} does not divide {t} frames"
        )));
    }
    let g = ctx.tape.reshape(x, &[b, c, t / factor, factor])?;
    Ok(ctx.tape.mean_axis(g, 3)?)
}

/// The (t, T) warp that reproduces average pooling: each row holds
/// `factor` entries of 1/factor. Requires factor | T.
pub fn uniform_block_warp(t_in: usize, factor: usize) -> Result<Array2<f64>> {
    if factor == 0 || t_in % factor != 0 {
        return Err(ModelError::BadInput(format!(
            "block width {factor} does not divide {t_in} frames"
        )));
    }
    let t_out = t_in / factor;
    let mut w = Array2::zeros((t_out, t_in));
    for i in 0..t_out {
        for k in 0..factor {
            w[[i, i * factor + k]] = 1.0 / factor as f64;
        }
    }
    Ok(w)
}

/// Coarser-hop baseline: recompute the mel spectrogram with the hop
/// enlarged by `factor`, shrinking T accordingly. The window keeps its
/// length until the hop would overtake it, then grows to match, so frames
/// always tile the waveform without gaps.
pub fn chsize(w: &Waveform, base: &SpectrogramConfig, factor: usize) -> Result<Spectrogram> {
    if factor == 0 {
        return Err(ModelError::BadInput("hop factor must be at least 1".into()));
    }
    let hop_ms = base.hop_ms * factor as f64;
    let cfg = SpectrogramConfig {
        hop_ms,
        window_length_ms: base.window_length_ms.max(hop_ms),
        ..base.clone()
    };
    Ok(mel_spectrogram(w, &cfg)?)
}

/// Three residual conv blocks at constant width; the learnable part of the
/// conv + average-pool baseline.
#[derive(Debug, Clone)]
pub struct ConvAvgPoolEncoder {
    pub blocks: [ResConv1DBlock; 3],
}

impl ConvAvgPoolEncoder {
    pub fn new(name: &str, channels: usize) -> Self {
        let block = |i: usize| ResConv1DBlock::new(format!("{name}.enc{i}"), channels, channels, 5);
        Self { blocks: [block(0), block(1), block(2)] }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for b in &self.blocks {
            b.init(store, rng);
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.param_count()).sum()
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(ctx, h)?;
        }
        Ok(h)
    }

    pub fn infer(&self, store: &ParamStore, x: &Array3<f64>) -> Array3<f64> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.infer(store, &h);
        }
        h
    }
}

/// Small classification head shared by every variant: two residual conv
/// blocks, global average pooling over time, and a linear layer to class
/// scores squashed by a sigmoid (multi-label form; accuracy via argmax).
#[derive(Debug, Clone)]
pub struct ToyClassifier {
    pub block1: ResConv1DBlock,
    pub block2: ResConv1DBlock,
    pub head: Linear,
    pub n_classes: usize,
}

impl ToyClassifier {
    pub fn new(name: &str, in_channels: usize, n_classes: usize) -> Self {
        Self {
            block1: ResConv1DBlock::new(format!("{name}.block1"), in_channels, 32, 5),
            block2: ResConv1DBlock::new(format!("{name}.block2"), 32, 32, 5),
            head: Linear::new(format!("{name}.head"), 32, n_classes),
            n_classes,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.block1.init(store, rng);
        self.block2.init(store, rng);
        self.head.init(store, rng);
    }

    pub fn param_count(&self) -> usize {
        self.block1.param_count() + self.block2.param_count() + self.head.param_count()
    }

    /// (B, C, t) features -> (B, n_classes) probabilities.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.block1.forward(ctx, x)?;
        let h = self.block2.forward(ctx, h)?;
        let pooled = ctx.tape.mean_axis(h, 2)?;
        let logits = self.head.forward(ctx, pooled)?;
        Ok(ctx.tape.sigmoid(logits)?)
    }

    pub fn infer(&self, store: &ParamStore, x: &Array3<f64>) -> Array2<f64> {
        let h = self.block1.infer(store, x);
        let h = self.block2.infer(store, &h);
        let pooled = h.mean_axis(Axis(2)).expect("time axis is non-empty");
        let logits = self.head.infer(store, &pooled);
        logits.mapv(|v| 1.0 / (1.0 + (-v).exp()))
    }
}

/// Index of the largest probability (ties to the lowest index).
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
