//! Desk-scale training loop: one front-end variant plus the shared
//! classifier head, trained with Adam on the synthetic tone dataset.

use crate::data::Clip;
use crate::model::{
    argmax, avg_pool, avg_pool_t, chsize, reduction_factor, ConvAvgPoolEncoder, ModelError,
    ToyClassifier, Variant,
};
use crate::optim::Adam;
use adares_core::dsp::{frame_energy, mel_spectrogram, DspError, Spectrogram, SpectrogramConfig};
use adares_core::loss::{bce_loss_t, guide_loss_t, LossError};
use adares_core::nn::{Ctx, FrameImportanceNet, ParamStore};
use adares_core::tape::{TapeError, Var};
use adares_core::warp::{diffres_from_scores, diffres_infer, DiffResConfig, WarpError};
use ndarray::{Array1, Array2, Array3, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("metrics io: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Fraction of frames removed by the temporal reduction.
    pub delta: f64,
    /// Hinge threshold of the guide penalty.
    pub lambda: f64,
    /// Energy threshold separating empty from active frames.
    pub epsilon: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub lr: f64,
    pub spec: SpectrogramConfig,
    /// Use the scalar-walk row normalizer instead of the vectorized one.
    pub naive_normalizer: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DiffRes,
            delta: 0.5,
            lambda: 0.5,
            epsilon: 1e-4,
            epochs: 8,
            batch: 16,
            seed: 0,
            lr: 1e-3,
            spec: SpectrogramConfig { n_mels: 64, ..SpectrogramConfig::default() },
            naive_normalizer: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.epochs == 0 {
            return Err(TrainError::BadConfig("batch and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(TrainError::BadConfig(format!(
                "reduction fraction {} outside [0, 1)",
                self.delta
            )));
        }
        if self.lr <= 0.0 {
            return Err(TrainError::BadConfig(format!("learning rate {} not positive", self.lr)));
        }
        Ok(())
    }

    fn diffres(&self) -> DiffResConfig {
        DiffResConfig {
            delta: self.delta,
            epsilon: self.epsilon,
            naive_normalizer: self.naive_normalizer,
        }
    }
}

/// The trainable pieces for one variant, plus its parameter store.
pub struct Model {
    pub variant: Variant,
    pub scorer: Option<FrameImportanceNet>,
    pub encoder: Option<ConvAvgPoolEncoder>,
    pub classifier: ToyClassifier,
    pub store: ParamStore,
    pub cfg: TrainConfig,
    pub n_classes: usize,
}

impl Model {
    pub fn new(cfg: &TrainConfig, n_classes: usize) -> Result<Self> {
        cfg.validate()?;
        let f = cfg.spec.n_mels;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (scorer, encoder, clf_in) = match cfg.variant {
            Variant::DiffRes => (Some(FrameImportanceNet::new("scorer", f)), None, 3 * f),
            Variant::ConvAvgPool => (None, Some(ConvAvgPoolEncoder::new("encoder", f)), f),
            _ => (None, None, f),
        };
        if let Some(net) = &scorer {
            net.init(&mut store, &mut rng);
        }
        if let Some(enc) = &encoder {
            enc.init(&mut store, &mut rng);
        }
        let classifier = ToyClassifier::new("clf", clf_in, n_classes);
        classifier.init(&mut store, &mut rng);
        Ok(Self { variant: cfg.variant, scorer, encoder, classifier, store, cfg: cfg.clone(), n_classes })
    }

    /// Gradient-free feature extraction for one clip, eval-mode statistics.
    pub fn features_infer(&self, clip: &Clip) -> Result<Array2<f64>> {
        let sp = mel_spectrogram(&clip.waveform, &self.cfg.spec)?;
        self.features_infer_from(&sp, clip)
    }

    fn features_infer_from(&self, sp: &Spectrogram, clip: &Clip) -> Result<Array2<f64>> {
        Ok(match self.variant {
            Variant::Mel => sp.values.clone(),
            Variant::AvgPool => avg_pool(&sp.values, reduction_factor(self.cfg.delta)?),
            Variant::CHSize => {
                chsize(&clip.waveform, &self.cfg.spec, reduction_factor(self.cfg.delta)?)?.values
            }
            Variant::ConvAvgPool => {
                let enc = self.encoder.as_ref().expect("convavgpool model has an encoder");
                let (f, tt) = sp.values.dim();
                let x3 = sp.values.clone().into_shape_with_order((1, f, tt)).expect("adds batch axis");
                let h = enc.infer(&self.store, &x3);
                avg_pool(&h.index_axis(Axis(0), 0).to_owned(), reduction_factor(self.cfg.delta)?)
            }
            Variant::DiffRes => {
                let net = self.scorer.as_ref().expect("diffres model has a scorer");
                diffres_infer(&self.store, net, sp, &self.cfg.diffres())?.features
            }
        })
    }

    /// Eval-mode class probabilities for one clip.
    pub fn predict(&self, clip: &Clip) -> Result<Array1<f64>> {
        let feats = self.features_infer(clip)?;
        let (c, t) = feats.dim();
        let x3 = feats.into_shape_with_order((1, c, t)).expect("adds batch axis");
        let probs = self.classifier.infer(&self.store, &x3);
        Ok(probs.index_axis(Axis(0), 0).to_owned())
    }
}

/// One training step's record, written to the metrics CSV.
#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub step: usize,
    pub loss_total: f64,
    pub loss_bce: f64,
    pub loss_guide: f64,
    /// Batch-mean importance spread; None for variants without a scorer.
    pub rho: Option<f64>,
    /// Training-batch accuracy.
    pub acc: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<StepMetrics>,
    pub eval: EvalReport,
    /// (mean importance on empty frames, mean on active frames), test set;
    /// None unless the variant learns importance.
    pub importance_split: Option<(f64, f64)>,
}

impl TrainOutcome {
    pub fn first_guide(&self) -> f64 {
        self.history.first().map_or(0.0, |m| m.loss_guide)
    }

    pub fn final_guide(&self) -> f64 {
        self.history.last().map_or(0.0, |m| m.loss_guide)
    }

    pub fn final_rho(&self) -> Option<f64> {
        self.history.last().and_then(|m| m.rho)
    }
}

fn batch_mel(clips: &[&Clip], spec: &SpectrogramConfig) -> Result<Vec<Spectrogram>> {
    let sps = crate::pool()
        .install(|| {
            clips
                .par_iter()
                .map(|c| mel_spectrogram(&c.waveform, spec))
                .collect::<std::result::Result<Vec<_>, _>>()
        })?;
    Ok(sps)
}

fn stack_values(sps: &[Spectrogram]) -> Result<Array3<f64>> {
    let (f, tt) = sps[0].values.dim();
    let mut x = Array3::zeros((sps.len(), f, tt));
    for (i, sp) in sps.iter().enumerate() {
        if sp.values.dim() != (f, tt) {
            return Err(TrainError::BadConfig(format!(
                "clip {i} has shape {:?}, expected {:?}",
                sp.values.dim(),
                (f, tt)
            )));
        }
        x.index_axis_mut(Axis(0), i).assign(&sp.values);
    }
    Ok(x)
}

fn targets_for(labels: &[usize], n_classes: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), n_classes));
    for (i, &l) in labels.iter().enumerate() {
        y[[i, l]] = 1.0;
    }
    y
}

struct BatchOutput {
    loss: Var,
    loss_bce: f64,
    loss_guide: f64,
    rho: Option<f64>,
    acc: f64,
}

/// Forward pass and loss assembly for one batch on a fresh context.
fn batch_forward(ctx: &mut Ctx<'_>, model: &Model, clips: &[&Clip]) -> Result<BatchOutput> {
    let cfg = &model.cfg;
    let sps = batch_mel(clips, &cfg.spec)?;
    let labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
    let targets = targets_for(&labels, model.n_classes).into_dyn();
    let b = clips.len();

    let mut guide: Option<Var> = None;
    let mut rho = None;
    let features = match model.variant {
        Variant::DiffRes => {
            let net = model.scorer.as_ref().expect("diffres model has a scorer");
            let x = stack_values(&sps)?;
            let (f, tt) = (x.dim().1, x.dim().2);
            let x_const = ctx.constant(x.into_dyn())?;
            let scores = net.forward(ctx, x_const)?;
            let s_all = ctx.tape.sigmoid(scores)?;
            let dcfg = cfg.diffres();
            let mut feats = Vec::with_capacity(b);
            let mut guides = Vec::with_capacity(b);
            let mut rhos = Vec::with_capacity(b);
            for (i, sp) in sps.iter().enumerate() {
                let row = ctx.tape.slice(s_all, 0, i, i + 1)?;
                let s_prime = ctx.tape.reshape(row, &[tt])?;
                let energy = frame_energy(sp);
                let out = diffres_from_scores(&mut ctx.tape, s_prime, &sp.values, &energy, &dcfg)?;
                let g = guide_loss_t(
                    &mut ctx.tape,
                    out.importance,
                    &energy,
                    cfg.epsilon,
                    cfg.delta,
                    cfg.lambda,
                )?;
                guides.push(ctx.tape.reshape(g, &[1])?);
                if let Some(r) = out.rho {
                    rhos.push(r);
                }
                let t = out.target_frames;
                feats.push(ctx.tape.reshape(out.features, &[1, 3 * f, t])?);
            }
            let stacked = ctx.tape.concat(&feats, 0)?;
            let all_guides = ctx.tape.concat(&guides, 0)?;
            guide = Some(ctx.tape.mean(all_guides)?);
            if !rhos.is_empty() {
                rho = Some(rhos.iter().sum::<f64>() / rhos.len() as f64);
            }
            stacked
        }
        Variant::ConvAvgPool => {
            let enc = model.encoder.as_ref().expect("convavgpool model has an encoder");
            let x = stack_values(&sps)?;
            let x_const = ctx.constant(x.into_dyn())?;
            let h = enc.forward(ctx, x_const)?;
            avg_pool_t(ctx, h, reduction_factor(cfg.delta)?)?
        }
        Variant::Mel => {
            let x = stack_values(&sps)?;
            ctx.constant(x.into_dyn())?
        }
        Variant::AvgPool => {
            let k = reduction_factor(cfg.delta)?;
            let pooled: Vec<Spectrogram> = sps
                .iter()
                .map(|sp| Spectrogram {
                    values: avg_pool(&sp.values, k),
                    linear: sp.linear.clone(),
                    fps: sp.fps / k as f64,
                })
                .collect();
            let x = stack_values(&pooled)?;
            ctx.constant(x.into_dyn())?
        }
        Variant::CHSize => {
            let k = reduction_factor(cfg.delta)?;
            let coarse = crate::pool().install(|| {
                clips
                    .par_iter()
                    .map(|c| chsize(&c.waveform, &cfg.spec, k))
                    .collect::<std::result::Result<Vec<_>, _>>()
            })?;
            let x = stack_values(&coarse)?;
            ctx.constant(x.into_dyn())?
        }
    };

    let probs = model.classifier.forward(ctx, features)?;
    let bce = bce_loss_t(&mut ctx.tape, probs, &targets)?;
    let loss = match guide {
        Some(g) => ctx.tape.add(bce, g)?,
        None => bce,
    };

    let probs_val = ctx.tape.value(probs).clone();
    let probs2 = probs_val.into_dimensionality::<ndarray::Ix2>().expect("probs are (B, C)");
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row: Vec<f64> = probs2.row(i).to_vec();
        if argmax(&row) == label {
            correct += 1;
        }
    }

    let scalar = |v: Var, ctx: &Ctx<'_>| ctx.tape.value(v)[IxDyn(&[])];
    Ok(BatchOutput {
        loss,
        loss_bce: scalar(bce, ctx),
        loss_guide: guide.map_or(0.0, |g| scalar(g, ctx)),
        rho,
        acc: correct as f64 / b as f64,
    })
}

/// Trains one variant on the dataset's training split. Deterministic for a
/// fixed config: data order, initialization, and arithmetic are all seeded.
pub fn train(cfg: &TrainConfig, dataset: &crate::data::SyntheticDataset) -> Result<TrainOutcome> {
    let mut model = Model::new(cfg, dataset.cfg.n_classes)?;
    let mut opt = Adam::new(cfg.lr);
    let mut history = Vec::new();
    let train_clips = dataset.train();
    if train_clips.is_empty() {
        return Err(TrainError::BadConfig("training split is empty".into()));
    }

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_clips.len()).collect();
        // Stream 0 belongs to parameter initialization; epochs get 1, 2, ...
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1 + epoch as u64);
        order.shuffle(&mut rng);

        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Clip> = chunk.iter().map(|&i| &train_clips[i]).collect();
            // The context borrows the store mutably while the model describes
            // the architecture, so the store steps out of the model here.
            let mut store = std::mem::take(&mut model.store);
            let mut ctx = Ctx::new(&mut store, true);
            let out = batch_forward(&mut ctx, &model, &batch)?;
            let loss_total = ctx.tape.value(out.loss)[IxDyn(&[])];
            if !loss_total.is_finite() {
                return Err(TrainError::Diverged {
                    step,
                    detail: format!(
                        "total loss {loss_total} (classifier {}, guide {})",
                        out.loss_bce, out.loss_guide
                    ),
                });
            }
            let grads = ctx.tape.backward(out.loss)?;
            let named = ctx.collect_grads(&grads);
            if let Some((name, bad)) = named
                .iter()
                .find_map(|(n, g)| g.iter().find(|v| !v.is_finite()).map(|v| (n.clone(), *v)))
            {
                return Err(TrainError::Diverged {
                    step,
                    detail: format!("gradient of {name} is {bad}"),
                });
            }
            drop(ctx);
            opt.step(&mut store, &named);
            if let Some(name) = named
                .keys()
                .find(|n| store.param(n).is_some_and(|p| p.iter().any(|v| !v.is_finite())))
            {
                return Err(TrainError::Diverged {
                    step,
                    detail: format!("parameter {name} became non-finite after the update"),
                });
            }
            model.store = store;
            history.push(StepMetrics {
                step,
                loss_total,
                loss_bce: out.loss_bce,
                loss_guide: out.loss_guide,
                rho: out.rho,
                acc: out.acc,
            });
            step += 1;
        }
    }

    let eval = evaluate(&model, dataset.test())?;
    let importance_split = match model.variant {
        Variant::DiffRes => importance_split(&model, dataset.test())?,
        _ => None,
    };
    Ok(TrainOutcome { model, history, eval, importance_split })
}

/// Accuracy and per-class accuracy over a set of clips, eval mode.
pub fn evaluate(model: &Model, clips: &[Clip]) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(TrainError::BadConfig("evaluation set is empty".into()));
    }
    let preds: Vec<usize> = crate::pool().install(|| {
        clips
            .par_iter()
            .map(|c| model.predict(c).map(|p| argmax(p.as_slice().expect("contiguous"))))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut per_class_hit = vec![0usize; model.n_classes];
    let mut per_class_n = vec![0usize; model.n_classes];
    let mut hit = 0usize;
    for (clip, &p) in clips.iter().zip(&preds) {
        per_class_n[clip.label] += 1;
        if p == clip.label {
            per_class_hit[clip.label] += 1;
            hit += 1;
        }
    }
    let per_class = per_class_hit
        .iter()
        .zip(&per_class_n)
        .map(|(&h, &n)| if n == 0 { f64::NAN } else { h as f64 / n as f64 })
        .collect();
    Ok(EvalReport { accuracy: hit as f64 / clips.len() as f64, per_class })
}

/// Mean rescaled importance on empty vs active frames across `clips`.
/// None when every frame lands on one side of the energy threshold.
fn importance_split(model: &Model, clips: &[Clip]) -> Result<Option<(f64, f64)>> {
    let net = model.scorer.as_ref().expect("diffres model has a scorer");
    let dcfg = model.cfg.diffres();
    let pairs: Vec<(f64, f64, usize, usize)> = crate::pool().install(|| {
        clips
            .par_iter()
            .map(|clip| -> Result<(f64, f64, usize, usize)> {
                let sp = mel_spectrogram(&clip.waveform, &model.cfg.spec)?;
                let out = diffres_infer(&model.store, net, &sp, &dcfg)?;
                let energy = frame_energy(&sp);
                let mut acc = (0.0, 0.0, 0usize, 0usize);
                for (j, &e) in energy.iter().enumerate() {
                    if e <= model.cfg.epsilon {
                        acc.0 += out.importance[j];
                        acc.2 += 1;
                    } else {
                        acc.1 += out.importance[j];
                        acc.3 += 1;
                    }
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (se, sa, ne, na) = pairs.iter().fold((0.0, 0.0, 0, 0), |t, p| {
        (t.0 + p.0, t.1 + p.1, t.2 + p.2, t.3 + p.3)
    });
    if ne == 0 || na == 0 {
        return Ok(None);
    }
    Ok(Some((se / ne as f64, sa / na as f64)))
}

/// Writes the per-step metrics table: step, variant, loss_total, loss_bce,
/// loss_guide, rho, acc. Variants without a scorer leave rho empty.
pub fn write_metrics_csv(path: &Path, variant: Variant, history: &[StepMetrics]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,variant,loss_total,loss_bce,loss_guide,rho,acc")?;
    for m in history {
        let rho = m.rho.map_or(String::new(), |r| format!("{r:.6}"));
        writeln!(
            f,
            "{},{},{:.6},{:.6},{:.6},{},{:.4}",
            m.step,
            variant.as_str(),
            m.loss_total,
            m.loss_bce,
            m.loss_guide,
            rho,
            m.acc
        )?;
    }
    Ok(())
}
