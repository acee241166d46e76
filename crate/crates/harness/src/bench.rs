//! Wall-clock throughput measurement: waveform in, features (or class
//! probabilities) out, one variant at a time on a single thread.

use crate::data::{DatasetConfig, SyntheticDataset};
use crate::model::Variant;
use crate::train::{Model, TrainConfig, TrainError};
use adares_core::dsp::SpectrogramConfig;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub variants: Vec<Variant>,
    /// Fraction of frames removed by reducing variants.
    pub delta: f64,
    pub spec: SpectrogramConfig,
    pub clip_seconds: f64,
    pub n_clips: usize,
    pub warmup: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            variants: Variant::all().to_vec(),
            delta: 0.75,
            spec: SpectrogramConfig::default(),
            clip_seconds: 1.0,
            n_clips: 8,
            warmup: 3,
            reps: 20,
            seed: 0,
        }
    }
}

/// One measured configuration. `variant` carries a "+clf" suffix for the
/// waveform-to-prediction stage; bare names stop at the features.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchRow {
    pub variant: String,
    pub fps_in: f64,
    pub fps_out: f64,
    pub clips_per_second: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
}

fn per_clip_stats(per_rep_seconds: &[f64], n_clips: usize) -> (f64, f64) {
    let per_clip_ms: Vec<f64> =
        per_rep_seconds.iter().map(|s| s / n_clips as f64 * 1000.0).collect();
    let mean = per_clip_ms.iter().sum::<f64>() / per_clip_ms.len() as f64;
    let var = per_clip_ms.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>()
        / per_clip_ms.len() as f64;
    (mean, var.sqrt())
}

/// Runs the throughput benchmark over `cfg.variants`, front-end-only and
/// with the classifier, two rows per variant. Repetitions are interleaved
/// round-robin across every (variant, stage) pair so that slow drift in
/// machine state (cache warmth, frequency scaling) lands on all rows alike
/// instead of biasing whichever variant happens to run last.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>, TrainError> {
    if cfg.reps == 0 || cfg.n_clips == 0 {
        return Err(TrainError::BadConfig("benchmark needs clips and repetitions".into()));
    }
    let dcfg = DatasetConfig {
        n_clips: cfg.n_clips,
        clip_seconds: cfg.clip_seconds,
        sample_rate: cfg.spec.sample_rate,
        seed: cfg.seed,
        ..DatasetConfig::default()
    };
    let dataset = SyntheticDataset::generate(&dcfg)
        .map_err(|e| TrainError::BadConfig(format!("benchmark dataset: {e}")))?;
    let clips = &dataset.clips;

    let mut models = Vec::with_capacity(cfg.variants.len());
    for &variant in &cfg.variants {
        let tcfg = TrainConfig {
            variant,
            delta: cfg.delta,
            seed: cfg.seed,
            spec: cfg.spec.clone(),
            ..TrainConfig::default()
        };
        models.push((variant, Model::new(&tcfg, dataset.cfg.n_classes)?));
    }

    let mut fe_secs = vec![Vec::with_capacity(cfg.reps); models.len()];
    let mut clf_secs = vec![Vec::with_capacity(cfg.reps); models.len()];
    for _ in 0..cfg.warmup {
        for (_, model) in &models {
            for clip in clips {
                model.features_infer(clip)?;
                model.predict(clip)?;
            }
        }
    }
    for _ in 0..cfg.reps {
        for (i, (_, model)) in models.iter().enumerate() {
            let start = Instant::now();
            for clip in clips {
                std::hint::black_box(model.features_infer(clip)?);
            }
            fe_secs[i].push(start.elapsed().as_secs_f64());

            let start = Instant::now();
            for clip in clips {
                std::hint::black_box(model.predict(clip)?);
            }
            clf_secs[i].push(start.elapsed().as_secs_f64());
        }
    }

    let fps_in = 1000.0 / cfg.spec.hop_ms;
    let mut rows = Vec::with_capacity(models.len() * 2);
    for (i, &(variant, _)) in models.iter().enumerate() {
        let fps_out = match variant {
            Variant::Mel => fps_in,
            _ => fps_in * (1.0 - cfg.delta),
        };
        let (mean_ms, std_ms) = per_clip_stats(&fe_secs[i], clips.len());
        rows.push(BenchRow {
            variant: variant.as_str().to_string(),
            fps_in,
            fps_out,
            clips_per_second: 1000.0 / mean_ms,
            mean_ms,
            std_ms,
        });
        let (mean_ms, std_ms) = per_clip_stats(&clf_secs[i], clips.len());
        rows.push(BenchRow {
            variant: format!("{}+clf", variant.as_str()),
            fps_in,
            fps_out,
            clips_per_second: 1000.0 / mean_ms,
            mean_ms,
            std_ms,
        });
    }
    Ok(rows)
}

/// Columns: variant, fps_in, fps_out, clips_per_second, mean_ms, std_ms.
pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<(), TrainError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "variant,fps_in,fps_out,clips_per_second,mean_ms,std_ms")?;
    for r in rows {
        writeln!(
            f,
            "{},{:.1},{:.1},{:.2},{:.4},{:.4}",
            r.variant, r.fps_in, r.fps_out, r.clips_per_second, r.mean_ms, r.std_ms
        )?;
    }
    Ok(())
}
