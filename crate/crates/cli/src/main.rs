//! `adares` — command-line surface for the adaptive-resolution audio front
//! end: feature extraction, gradient checking, training, evaluation, and
//! throughput benchmarks.

use adares_core::container;
use adares_core::dsp::{frame_energy, mel_spectrogram, DspError, SpectrogramConfig};
use adares_core::nn::{FrameImportanceNet, ParamStore};
use adares_core::warp::{diffres_infer, warp_routing, DiffResConfig, WarpError};
use adares_core::wav::load_wav;
use adares_harness::bench::{run_bench, write_bench_csv, BenchConfig};
use adares_harness::data::{DatasetConfig, SyntheticDataset};
use adares_harness::model::Variant;
use adares_harness::train::{evaluate, train, write_metrics_csv, Model, TrainConfig, TrainError};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

/// Exit codes: 0 success, 1 check or metric failure, 2 I/O error, 3 usage
/// error.
#[derive(Debug)]
enum Failure {
    Check(String),
    Io(String),
    Usage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Io(_) => 2,
            Failure::Usage(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(m) | Failure::Io(m) | Failure::Usage(m) => m,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<adares_core::ContainerError> for Failure {
    fn from(e: adares_core::ContainerError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<adares_core::wav::WavError> for Failure {
    fn from(e: adares_core::wav::WavError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<DspError> for Failure {
    fn from(e: DspError) -> Self {
        match e {
            // Bad flag-derived settings are usage errors; bad audio is I/O.
            DspError::BadConfig(_) => Failure::Usage(e.to_string()),
            _ => Failure::Io(e.to_string()),
        }
    }
}

impl From<WarpError> for Failure {
    fn from(e: WarpError) -> Self {
        match e {
            WarpError::BadInput(_) => Failure::Usage(e.to_string()),
            _ => Failure::Check(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::BadConfig(_) => Failure::Usage(e.to_string()),
            other => Failure::Check(other.to_string()),
        }
    }
}

impl From<adares_harness::data::DataError> for Failure {
    fn from(e: adares_harness::data::DataError) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Result<T> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "adares",
    version,
    about = "Adaptive-resolution audio front end: featurize, check, train, evaluate, benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract warped mel features from a WAV file.
    ///
    /// Uses `checkpoint.adrs` from --output-dir when present (e.g. a prior
    /// `train` run into the same directory); otherwise the scorer is
    /// randomly initialized from --seed.
    Featurize(CommonArgs),
    /// Compare every gradient path against central finite differences.
    Gradcheck(CommonArgs),
    /// Train a front-end variant plus classifier on the synthetic dataset.
    Train(CommonArgs),
    /// Evaluate the checkpoint in --output-dir on the held-out split.
    Eval(CommonArgs),
    /// Measure waveform-to-feature and waveform-to-prediction throughput.
    Bench(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Featurize(a)
            | Command::Gradcheck(a)
            | Command::Train(a)
            | Command::Eval(a)
            | Command::Bench(a) => a,
        }
    }
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Input WAV file (featurize only).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Run directory for artifacts and the manifest.
    #[arg(long, default_value = "runs/adares")]
    output_dir: PathBuf,
    /// Analysis hop in milliseconds (input FPS = 1000 / hop).
    #[arg(long, default_value_t = 10.0)]
    hop_ms: f64,
    /// Analysis window in milliseconds.
    #[arg(long, default_value_t = 25.0)]
    window_ms: f64,
    /// Mel bands per frame.
    #[arg(long, default_value_t = 64)]
    n_mels: usize,
    /// Fraction of frames to remove, in [0, 1). Conflicts with --fps-out.
    #[arg(long, conflicts_with = "fps_out")]
    delta: Option<f64>,
    /// Output frame rate; resolves to delta = 1 - fps_out / fps_in.
    #[arg(long)]
    fps_out: Option<f64>,
    /// Hinge threshold of the guide penalty.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Energy threshold separating empty from active frames.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// Front end: diffres | mel | chsize | avgpool | convavgpool.
    /// Bench accepts a comma-separated list.
    #[arg(long, default_value = "diffres")]
    variant: String,
    /// Seed for parameters, data, and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training epochs.
    #[arg(long, default_value_t = 8)]
    epochs: usize,
    /// Training batch size.
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Emit a machine-readable JSON report on stdout.
    #[arg(long)]
    json: bool,
}

impl CommonArgs {
    fn fps_in(&self) -> f64 {
        1000.0 / self.hop_ms
    }

    /// Resolves --delta / --fps-out (mutually exclusive, enforced by the
    /// parser) to one reduction fraction; both absent means 0.5.
    fn resolve_delta(&self) -> Result<f64> {
        let delta = match (self.delta, self.fps_out) {
            (Some(d), None) => d,
            (None, Some(f)) => 1.0 - f / self.fps_in(),
            (None, None) => 0.5,
            (Some(_), Some(_)) => {
                return Err(Failure::Usage("--delta and --fps-out are mutually exclusive".into()))
            }
        };
        if !(0.0..1.0).contains(&delta) {
            return Err(Failure::Usage(format!(
                "reduction fraction {delta} outside [0, 1) (input rate is {} FPS)",
                self.fps_in()
            )));
        }
        Ok(delta)
    }

    fn spectrogram(&self, sample_rate: u32) -> SpectrogramConfig {
        let base = SpectrogramConfig::default();
        SpectrogramConfig {
            hop_ms: self.hop_ms,
            window_length_ms: self.window_ms,
            n_mels: self.n_mels,
            sample_rate,
            fmax: base.fmax.min(sample_rate as f64 / 2.0),
            ..base
        }
    }

    /// All flag values as they resolved, for the run manifest.
    fn manifest_flags(&self, delta: f64) -> Value {
        json!({
            "input": self.input.as_ref().map(|p| p.display().to_string()),
            "output_dir": self.output_dir.display().to_string(),
            "hop_ms": self.hop_ms,
            "window_ms": self.window_ms,
            "n_mels": self.n_mels,
            "delta": delta,
            "fps_out": self.fps_out,
            "lambda": self.lambda,
            "epsilon": self.epsilon,
            "variant": self.variant,
            "seed": self.seed,
            "epochs": self.epochs,
            "batch": self.batch,
            "json": self.json,
        })
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

/// Writes `<command>_manifest.json`: the resolved flags, versions, and
/// timestamps that make the run reproducible.
fn write_manifest(
    dir: &Path,
    command: &str,
    flags: Value,
    started_at: &str,
) -> Result<PathBuf> {
    let manifest = json!({
        "command": command,
        "flags": flags,
        "version": env!("CARGO_PKG_VERSION"),
        "git": git_describe(),
        "started_at": started_at,
        "finished_at": chrono::Utc::now().to_rfc3339(),
    });
    let path = dir.join(format!("{command}_manifest.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            eprintln!("{e}");
            return ExitCode::from(3);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: &Command) -> Result<()> {
    let args = command.args();
    let started_at = chrono::Utc::now().to_rfc3339();
    std::fs::create_dir_all(&args.output_dir)?;
    match command {
        Command::Featurize(a) => cmd_featurize(a, &started_at),
        Command::Gradcheck(a) => cmd_gradcheck(a, &started_at),
        Command::Train(a) => cmd_train(a, &started_at),
        Command::Eval(a) => cmd_eval(a, &started_at),
        Command::Bench(a) => cmd_bench(a, &started_at),
    }
}

/// Loads the scorer for featurize: a checkpoint in the run directory wins,
/// otherwise parameters are freshly initialized from the seed.
fn featurize_store(args: &CommonArgs, net: &FrameImportanceNet) -> Result<(ParamStore, bool)> {
    let ckpt = args.output_dir.join("checkpoint.adrs");
    if ckpt.exists() {
        let store = ParamStore::load(&ckpt)?;
        for block in &net.blocks {
            let name = format!("{}.weight", block.conv1.name);
            let p = store.param(&name).ok_or_else(|| {
                Failure::Io(format!(
                    "checkpoint {} has no scorer parameters ({name} missing); \
                     was it trained with --variant diffres?",
                    ckpt.display()
                ))
            })?;
            if p.shape()[1] != block.conv1.in_ch {
                return Err(Failure::Io(format!(
                    "checkpoint scorer expects {} input channels, flags say {}",
                    p.shape()[1],
                    block.conv1.in_ch
                )));
            }
        }
        Ok((store, true))
    } else {
        let mut store = ParamStore::new();
        net.init(&mut store, &mut ChaCha8Rng::seed_from_u64(args.seed));
        Ok((store, false))
    }
}

fn cmd_featurize(args: &CommonArgs, started_at: &str) -> Result<()> {
    let input = args
        .input
        .as_ref()
        .ok_or_else(|| Failure::Usage("featurize requires --input <wav>".into()))?;
    let delta = args.resolve_delta()?;
    let waveform = load_wav(input, None)?;
    let spec = args.spectrogram(waveform.sample_rate);
    let sp = mel_spectrogram(&waveform, &spec)?;
    let energy = frame_energy(&sp);

    let net = FrameImportanceNet::new("scorer", spec.n_mels);
    let (store, from_checkpoint) = featurize_store(args, &net)?;
    let cfg = DiffResConfig { delta, epsilon: args.epsilon, naive_normalizer: false };
    let out = diffres_infer(&store, &net, &sp, &cfg)?;
    let routing = warp_routing(&out.importance, out.target_frames)?;

    let features_path = args.output_dir.join("features.adrs");
    container::write_named(
        &features_path,
        &[
            ("mean".to_string(), out.mean.clone().into_dyn()),
            ("max".to_string(), out.max.clone().into_dyn()),
            ("resolution_encoding".to_string(), out.encoding.clone().into_dyn()),
        ],
    )?;

    let diag_path = args.output_dir.join("diagnostics.csv");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&diag_path)?);
        writeln!(f, "frame,importance,energy,assignment")?;
        for j in 0..sp.n_frames() {
            writeln!(f, "{},{:.8},{:.8},{}", j, out.importance[j], energy[j], routing[j])?;
        }
    }
    write_manifest(&args.output_dir, "featurize", args.manifest_flags(delta), started_at)?;

    let summary = json!({
        "input": input.display().to_string(),
        "frames_in": sp.n_frames(),
        "frames_out": out.target_frames,
        "fps_in": args.fps_in(),
        "delta": delta,
        "rho": out.rho,
        "scorer": if from_checkpoint { "checkpoint" } else { "seeded" },
        "features": features_path.display().to_string(),
        "diagnostics": diag_path.display().to_string(),
    });
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!(
            "featurized {} frames -> {} ({} scorer); wrote {} and {}",
            sp.n_frames(),
            out.target_frames,
            if from_checkpoint { "checkpoint" } else { "seeded" },
            features_path.display(),
            diag_path.display()
        );
    }
    Ok(())
}

fn cmd_gradcheck(args: &CommonArgs, started_at: &str) -> Result<()> {
    let report = adares_harness::check::run_gradcheck(args.seed)
        .map_err(|e| Failure::Check(e.to_string()))?;
    let json_report = serde_json::to_value(&report)?;
    std::fs::write(
        args.output_dir.join("gradcheck.json"),
        serde_json::to_string_pretty(&json_report)? + "\n",
    )?;
    write_manifest(
        &args.output_dir,
        "gradcheck",
        args.manifest_flags(args.resolve_delta()?),
        started_at,
    )?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&json_report)?);
    } else {
        for op in &report.ops {
            println!(
                "op {:<20} max_rel_err {:>12.3e}  {}",
                op.name,
                op.max_rel_err,
                if op.pass { "PASS" } else { "FAIL" }
            );
        }
        let e = &report.end_to_end;
        println!(
            "end-to-end ({} params) max_rel_err {:>12.3e}  {}",
            e.params_checked,
            e.max_rel_err,
            if e.pass { "PASS" } else { "FAIL" }
        );
    }
    if !report.pass() {
        return Err(Failure::Check(format!(
            "gradient check failed: {}",
            report.failures().join(", ")
        )));
    }
    Ok(())
}

fn train_config(args: &CommonArgs, delta: f64, sample_rate: u32) -> Result<TrainConfig> {
    let variant = Variant::from_str(&args.variant).map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(TrainConfig {
        variant,
        delta,
        lambda: args.lambda,
        epsilon: args.epsilon,
        epochs: args.epochs,
        batch: args.batch,
        seed: args.seed,
        spec: args.spectrogram(sample_rate),
        ..TrainConfig::default()
    })
}

fn cmd_train(args: &CommonArgs, started_at: &str) -> Result<()> {
    let delta = args.resolve_delta()?;
    let dcfg = DatasetConfig { seed: args.seed, ..DatasetConfig::default() };
    let dataset = SyntheticDataset::generate(&dcfg)?;
    let tcfg = train_config(args, delta, dcfg.sample_rate)?;
    let outcome = train(&tcfg, &dataset)?;

    let metrics_path = args.output_dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, tcfg.variant, &outcome.history).map_err(Failure::from)?;
    let ckpt_path = args.output_dir.join("checkpoint.adrs");
    outcome.model.store.save(&ckpt_path)?;

    let summary = json!({
        "variant": tcfg.variant.as_str(),
        "steps": outcome.history.len(),
        "test_accuracy": outcome.eval.accuracy,
        "per_class_accuracy": outcome.eval.per_class,
        "first_guide": outcome.first_guide(),
        "final_guide": outcome.final_guide(),
        "final_rho": outcome.final_rho(),
        "importance_split": outcome.importance_split,
        "metrics": metrics_path.display().to_string(),
        "checkpoint": ckpt_path.display().to_string(),
    });
    std::fs::write(
        args.output_dir.join("train_summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    write_manifest(&args.output_dir, "train", args.manifest_flags(delta), started_at)?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!(
            "trained {} for {} steps: test accuracy {:.4}; wrote {} and {}",
            tcfg.variant.as_str(),
            outcome.history.len(),
            outcome.eval.accuracy,
            metrics_path.display(),
            ckpt_path.display()
        );
    }
    Ok(())
}

fn cmd_eval(args: &CommonArgs, started_at: &str) -> Result<()> {
    let manifest_path = args.output_dir.join("train_manifest.json");
    let manifest: Value = serde_json::from_str(
        &std::fs::read_to_string(&manifest_path).map_err(|e| {
            Failure::Io(format!(
                "no training manifest at {} ({e}); run `adares train` into this \
                 directory first",
                manifest_path.display()
            ))
        })?,
    )?;
    let flags = &manifest["flags"];
    let get_f64 = |k: &str| flags[k].as_f64().ok_or_else(|| {
        Failure::Io(format!("training manifest is missing the {k} flag"))
    });
    let train_args = CommonArgs {
        input: None,
        output_dir: args.output_dir.clone(),
        hop_ms: get_f64("hop_ms")?,
        window_ms: get_f64("window_ms")?,
        n_mels: get_f64("n_mels")? as usize,
        delta: Some(get_f64("delta")?),
        fps_out: None,
        lambda: get_f64("lambda")?,
        epsilon: get_f64("epsilon")?,
        variant: flags["variant"]
            .as_str()
            .ok_or_else(|| Failure::Io("training manifest is missing the variant".into()))?
            .to_string(),
        seed: get_f64("seed")? as u64,
        epochs: get_f64("epochs")? as usize,
        batch: get_f64("batch")? as usize,
        json: args.json,
    };
    let delta = get_f64("delta")?;
    let dcfg = DatasetConfig { seed: train_args.seed, ..DatasetConfig::default() };
    let dataset = SyntheticDataset::generate(&dcfg)?;
    let tcfg = train_config(&train_args, delta, dcfg.sample_rate)?;

    let ckpt_path = args.output_dir.join("checkpoint.adrs");
    let loaded = ParamStore::load(&ckpt_path)?;
    let mut model = Model::new(&tcfg, dcfg.n_classes).map_err(Failure::from)?;
    let expected: Vec<String> = model.store.param_names().cloned().collect();
    for name in &expected {
        let fresh = model.store.param(name).expect("listed parameter");
        let found = loaded.param(name).ok_or_else(|| {
            Failure::Io(format!(
                "checkpoint {} is missing parameter {name}; it was trained \
                 with a different variant or size",
                ckpt_path.display()
            ))
        })?;
        if fresh.shape() != found.shape() {
            return Err(Failure::Io(format!(
                "checkpoint parameter {name} has shape {:?}, expected {:?}",
                found.shape(),
                fresh.shape()
            )));
        }
    }
    model.store = loaded;

    let report = evaluate(&model, dataset.test()).map_err(Failure::from)?;
    let summary = json!({
        "variant": tcfg.variant.as_str(),
        "checkpoint": ckpt_path.display().to_string(),
        "test_clips": dataset.test().len(),
        "accuracy": report.accuracy,
        "per_class_accuracy": report.per_class,
    });
    std::fs::write(
        args.output_dir.join("eval.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    write_manifest(&args.output_dir, "eval", args.manifest_flags(delta), started_at)?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!(
            "evaluated {} on {} clips: accuracy {:.4}",
            tcfg.variant.as_str(),
            dataset.test().len(),
            report.accuracy
        );
    }
    Ok(())
}

fn cmd_bench(args: &CommonArgs, started_at: &str) -> Result<()> {
    let delta = args.resolve_delta()?;
    let variants: Vec<Variant> = args
        .variant
        .split(',')
        .map(|s| Variant::from_str(s.trim()).map_err(|e| Failure::Usage(e.to_string())))
        .collect::<Result<_>>()?;
    let bcfg = BenchConfig {
        variants,
        delta,
        spec: args.spectrogram(DatasetConfig::default().sample_rate),
        seed: args.seed,
        ..BenchConfig::default()
    };
    let rows = run_bench(&bcfg).map_err(Failure::from)?;
    let csv_path = args.output_dir.join("bench.csv");
    write_bench_csv(&csv_path, &rows).map_err(Failure::from)?;
    write_manifest(&args.output_dir, "bench", args.manifest_flags(delta), started_at)?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&serde_json::to_value(&rows)?)?);
    } else {
        println!("variant            fps_in  fps_out  clips/s    mean_ms    std_ms");
        for r in &rows {
            println!(
                "{:<18} {:>6.1} {:>8.1} {:>8.2} {:>10.4} {:>9.4}",
                r.variant, r.fps_in, r.fps_out, r.clips_per_second, r.mean_ms, r.std_ms
            );
        }
        println!("wrote {}", csv_path.display());
    }
    Ok(())
}
