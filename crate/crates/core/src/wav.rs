//! WAV loading.
//!
//! Supports RIFF WAV with 16-bit integer PCM or 32-bit float samples.
//! Multichannel files are averaged to mono. There is no resampler: when the
//! caller expects a specific rate, a mismatching file is an error.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum WavError {
    #[error("file not found: {0}")]
    Missing(String),
    #[error("malformed WAV file: {0}")]
    Malformed(String),
    #[error("unsupported bit depth: {bits}-bit {format} (supported: 16-bit PCM, 32-bit float)")]
    UnsupportedDepth { bits: u16, format: &'static str },
    #[error("sample rate mismatch: file is {found} Hz, expected {expected} Hz")]
    RateMismatch { found: u32, expected: u32 },
    #[error("waveform contains non-finite samples")]
    NonFinite,
    #[error("sample rate must be positive")]
    ZeroRate,
}

/// Mono waveform with samples in [-1, 1].
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, WavError> {
        if sample_rate == 0 {
            return Err(WavError::ZeroRate);
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(WavError::NonFinite);
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Loads a WAV file as a mono waveform (channels averaged).
///
/// 16-bit PCM samples are scaled by 1/32768; 32-bit float samples are taken
/// as-is. `expected_rate` turns a differing file rate into
/// [`WavError::RateMismatch`].
pub fn load_wav(path: &Path, expected_rate: Option<u32>) -> Result<Waveform, WavError> {
    if !path.exists() {
        return Err(WavError::Missing(path.display().to_string()));
    }
    let reader =
        hound::WavReader::open(path).map_err(|e| WavError::Malformed(e.to_string()))?;
    let spec = reader.spec();
    if let Some(expected) = expected_rate {
        if spec.sample_rate != expected {
            return Err(WavError::RateMismatch { found: spec.sample_rate, expected });
        }
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(WavError::Malformed("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| WavError::Malformed(e.to_string()))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|e| WavError::Malformed(e.to_string()))?,
        (hound::SampleFormat::Int, bits) => {
            return Err(WavError::UnsupportedDepth { bits, format: "PCM" })
        }
        (hound::SampleFormat::Float, bits) => {
            return Err(WavError::UnsupportedDepth { bits, format: "float" })
        }
    };
    let frames = interleaved.len() / channels;
    let mut mono = Vec::with_capacity(frames);
    for f in 0..frames {
        let sum: f64 = interleaved[f * channels..(f + 1) * channels].iter().sum();
        mono.push(sum / channels as f64);
    }
    Waveform::new(mono, spec.sample_rate)
}
