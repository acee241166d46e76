//! Synthetic sparse-event audio: mostly-silent clips with class-specific
//! tone bursts at random positions. The variable silence/content ratio is
//! exactly the regime where learned temporal reduction should pay off.

use adares_core::dsp::hann_window;
use adares_core::wav::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset config: {0}")]
    BadConfig(String),
}

type Result<T> = std::result::Result<T, DataError>;

/// Recipe for one synthetic dataset. Everything is deterministic given
/// `seed`; each clip draws from its own random stream so generation order
/// and parallelism cannot change the data.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub n_classes: usize,
    pub n_clips: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub event_length_ms: f64,
    pub events_per_clip: usize,
    /// One carrier frequency per class, Hz.
    pub tone_frequencies: Vec<f64>,
    /// Peak amplitude of the uniform background noise (0 = digital silence).
    pub noise_floor: f64,
    /// Leading fraction of clips used for training; the rest is the test
    /// split. Labels cycle through classes, so both splits stay balanced.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_clips: 640,
            clip_seconds: 0.64,
            sample_rate: 16_000,
            event_length_ms: 80.0,
            events_per_clip: 2,
            tone_frequencies: vec![392.0, 784.0, 1568.0, 3136.0],
            noise_floor: 0.0,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(DataError::BadConfig("need at least one class".into()));
        }
        if self.tone_frequencies.len() != self.n_classes {
            return Err(DataError::BadConfig(format!(
                "{} tone frequencies for {} classes",
                self.tone_frequencies.len(),
                self.n_classes
            )));
        }
        if self.events_per_clip == 0 {
            return Err(DataError::BadConfig(
                "events_per_clip = 0 would make all-silence clips with no background class"
                    .into(),
            ));
        }
        if self.event_length_ms <= 0.0 || self.event_length_ms / 1000.0 > self.clip_seconds {
            return Err(DataError::BadConfig(format!(
                "a {} ms event does not fit in a {} s clip",
                self.event_length_ms, self.clip_seconds
            )));
        }
        if self.n_clips < self.n_classes {
            return Err(DataError::BadConfig("fewer clips than classes".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DataError::BadConfig(format!(
                "train fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for &f in &self.tone_frequencies {
            if !(f > 0.0 && f < nyquist) {
                return Err(DataError::BadConfig(format!(
                    "tone frequency {f} Hz outside (0, {nyquist})"
                )));
            }
        }
        if self.noise_floor < 0.0 || self.noise_floor >= 0.3 {
            return Err(DataError::BadConfig(format!(
                "noise floor {} must stay below the minimum event amplitude 0.3",
                self.noise_floor
            )));
        }
        Ok(())
    }

    fn clip_samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    fn event_samples(&self) -> usize {
        (self.event_length_ms / 1000.0 * self.sample_rate as f64).round() as usize
    }
}

/// One labeled clip.
#[derive(Debug, Clone)]
pub struct Clip {
    pub waveform: Waveform,
    pub label: usize,
}

/// Generated dataset with a deterministic train/test boundary.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub clips: Vec<Clip>,
    pub n_train: usize,
    pub cfg: DatasetConfig,
}

impl SyntheticDataset {
    pub fn generate(cfg: &DatasetConfig) -> Result<Self> {
        cfg.validate()?;
        let clips: Vec<Clip> = crate::pool()
            .install(|| (0..cfg.n_clips).into_par_iter().map(|i| synth_clip(cfg, i)).collect());
        let n_train = round_to_classes(
            (cfg.n_clips as f64 * cfg.train_fraction).round() as usize,
            cfg.n_classes,
            cfg.n_clips,
        );
        Ok(Self { clips, n_train, cfg: cfg.clone() })
    }

    pub fn train(&self) -> &[Clip] {
        &self.clips[..self.n_train]
    }

    pub fn test(&self) -> &[Clip] {
        &self.clips[self.n_train..]
    }
}

/// Largest multiple of `classes` no bigger than `n` (clamped to keep at
/// least one class's worth of clips on each side).
fn round_to_classes(n: usize, classes: usize, total: usize) -> usize {
    let m = (n / classes).max(1) * classes;
    m.min(total - classes.min(total - 1))
}

fn synth_clip(cfg: &DatasetConfig, index: usize) -> Clip {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // One independent stream per clip: insensitive to generation order.
    rng.set_stream(index as u64 + 1);
    let label = index % cfg.n_classes;
    let freq = cfg.tone_frequencies[label];
    let n = cfg.clip_samples();
    let ev = cfg.event_samples();
    let sr = cfg.sample_rate as f64;

    let mut samples = vec![0.0f64; n];
    if cfg.noise_floor > 0.0 {
        for s in samples.iter_mut() {
            *s = cfg.noise_floor * rng.gen_range(-1.0..1.0);
        }
    }
    let envelope = hann_window(ev);
    for _ in 0..cfg.events_per_clip {
        let start = rng.gen_range(0..=n - ev);
        let amp = rng.gen_range(0.3..1.0);
        for k in 0..ev {
            let t = (start + k) as f64 / sr;
            samples[start + k] +=
                amp * envelope[k] * (2.0 * std::f64::consts::PI * freq * t).sin();
        }
    }
    Clip { waveform: Waveform { samples, sample_rate: cfg.sample_rate }, label }
}
