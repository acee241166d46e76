use adares_core::dsp::SpectrogramConfig;
use adares_harness::bench::{run_bench, write_bench_csv, BenchConfig};
use adares_harness::model::Variant;

fn tiny_bench(reps: usize) -> BenchConfig {
    BenchConfig {
        variants: vec![Variant::Mel, Variant::DiffRes],
        delta: 0.75,
        spec: SpectrogramConfig { n_mels: 16, ..SpectrogramConfig::default() },
        clip_seconds: 0.32,
        n_clips: 4,
        warmup: 1,
        reps,
        seed: 0,
    }
}

#[test]
fn rows_cover_both_stages_per_variant() {
    let rows = run_bench(&tiny_bench(2)).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, vec!["mel", "mel+clf", "diffres", "diffres+clf"]);
    for r in &rows {
        assert!(r.clips_per_second > 0.0);
        assert!(r.mean_ms > 0.0);
        assert!(r.std_ms >= 0.0);
        assert_eq!(r.fps_in, 100.0);
    }
    assert_eq!(rows[0].fps_out, 100.0, "mel keeps the input rate");
    assert_eq!(rows[2].fps_out, 25.0, "diffres at delta 0.75 quarters the rate");
}

/// Repetition count changes sampling, never the schema.
#[test]
fn schema_is_stable_across_repetition_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut headers = Vec::new();
    for reps in [1usize, 3] {
        let rows = run_bench(&tiny_bench(reps)).unwrap();
        let path = tmp.path().join(format!("bench_{reps}.csv"));
        write_bench_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        headers.push(lines.next().unwrap().to_string());
        for line in lines {
            assert_eq!(line.split(',').count(), 6, "six columns per row: {line}");
        }
    }
    assert_eq!(headers[0], headers[1]);
    assert_eq!(headers[0], "variant,fps_in,fps_out,clips_per_second,mean_ms,std_ms");
}

#[test]
fn zero_reps_is_rejected() {
    assert!(run_bench(&tiny_bench(0)).is_err());
}
