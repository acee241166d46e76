//! Desk-scale experiment harness: synthetic audio data, a toy classifier,
//! fixed-resolution baselines, an Adam optimizer, a training loop with CSV
//! metrics, gradient checking, and wall-clock benchmarks.

use std::sync::OnceLock;

pub mod bench;
pub mod check;
pub mod data;
pub mod model;
pub mod optim;
pub mod train;

pub use bench::{run_bench, write_bench_csv, BenchConfig, BenchRow};
pub use check::{run_gradcheck, GradReport};
pub use data::{Clip, DatasetConfig, SyntheticDataset};
pub use model::{ToyClassifier, Variant};
pub use train::{evaluate, train, write_metrics_csv, Model, TrainConfig, TrainOutcome};

/// Env var capping the width of data-parallel sections (dataset synthesis,
/// evaluation). Unset or unparsable means rayon's default.
pub const THREADS_ENV: &str = "ADARES_THREADS";

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Shared pool for clip-parallel work, honoring [`THREADS_ENV`].
pub fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
        {
            builder = builder.num_threads(n.max(1));
        }
        builder.build().expect("thread pool construction")
    })
}
