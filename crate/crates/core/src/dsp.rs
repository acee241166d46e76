//! Mel-spectrogram front-end.
//!
//! Fixed-resolution analysis: Hann window, centered frames with reflect
//! padding, magnitude mel filterbank (HTK scale, unit-peak triangles), and a
//! natural log with a small floor. Frame count depends only on signal length
//! and hop: `T = ceil(L / hop)`.

use crate::wav::Waveform;
use ndarray::{Array1, Array2};
use rustfft::{num_complex::Complex, FftPlanner};

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("invalid spectrogram config: {0}")]
    BadConfig(String),
    #[error("waveform shorter than one hop ({len} < {hop} samples)")]
    TooShort { len: usize, hop: usize },
    #[error("waveform contains non-finite samples")]
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct SpectrogramConfig {
    pub window_length_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub sample_rate: u32,
    pub log_floor: f64,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            window_length_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 128,
            sample_rate: 16000,
            log_floor: 1e-10,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.hop_ms <= 0.0 || self.window_length_ms <= 0.0 {
            return Err(DspError::BadConfig("window and hop must be positive".into()));
        }
        if self.hop_ms > self.window_length_ms {
            return Err(DspError::BadConfig(format!(
                "hop ({} ms) must not exceed window length ({} ms)",
                self.hop_ms, self.window_length_ms
            )));
        }
        if self.n_mels < 1 {
            return Err(DspError::BadConfig("n_mels must be at least 1".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(DspError::BadConfig("log_floor must be positive".into()));
        }
        if !(0.0 <= self.fmin && self.fmin < self.fmax) {
            return Err(DspError::BadConfig("need 0 <= fmin < fmax".into()));
        }
        Ok(())
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn window_samples(&self) -> usize {
        (self.window_length_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn fft_size(&self) -> usize {
        self.window_samples().next_power_of_two()
    }

    /// Frames per second of audio, 1000 / hop_ms.
    pub fn fps(&self) -> f64 {
        1000.0 / self.hop_ms
    }
}

/// F x T log-mel spectrogram plus the linear mel magnitudes it was taken from.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    /// ln(linear + log_floor), F x T.
    pub values: Array2<f64>,
    /// Nonnegative mel magnitudes, F x T.
    pub linear: Array2<f64>,
    pub fps: f64,
}

impl Spectrogram {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect()
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, shape (n_mels, n_fft/2 + 1), unit-peak triangles.
pub fn mel_filterbank(cfg: &SpectrogramConfig) -> Array2<f64> {
    let n_fft = cfg.fft_size();
    let n_bins = n_fft / 2 + 1;
    let sr = cfg.sample_rate as f64;
    let centers = mel_band_edges_hz(cfg);
    let mut fb = Array2::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sr / n_fft as f64;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            };
            if w > 0.0 {
                fb[[m, k]] = w;
            }
        }
    }
    fb
}

/// Band edges in Hz: n_mels + 2 points equally spaced on the mel scale
/// between fmin and fmax. Filter m spans edges[m]..edges[m+2] with its peak
/// at edges[m+1].
pub fn mel_band_edges_hz(cfg: &SpectrogramConfig) -> Vec<f64> {
    let (mlo, mhi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Index into a signal with repeated reflection (no edge duplication), so
/// out-of-range frame positions near the boundaries read mirrored samples.
fn reflect_index(i: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i % period;
    if m < 0 {
        m += period;
    }
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Computes the F x T mel spectrogram of a waveform.
///
/// Frame `tau` is centered at sample `tau * hop`; `T = ceil(L / hop)`.
/// `linear` is filterbank-weighted STFT magnitude (not power); `values` is
/// `ln(linear + log_floor)`.
pub fn mel_spectrogram(w: &Waveform, cfg: &SpectrogramConfig) -> Result<Spectrogram, DspError> {
    cfg.validate()?;
    if w.samples.iter().any(|s| !s.is_finite()) {
        return Err(DspError::NonFinite);
    }
    let hop = cfg.hop_samples();
    let win_len = cfg.window_samples();
    let n_fft = cfg.fft_size();
    let len = w.samples.len();
    if len < hop {
        return Err(DspError::TooShort { len, hop });
    }
    let n_frames = len.div_ceil(hop);
    let n_bins = n_fft / 2 + 1;

    let window = hann_window(win_len);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    let mut mag = Array2::zeros((n_bins, n_frames));
    let half = win_len as isize / 2;
    for tau in 0..n_frames {
        let center = (tau * hop) as isize;
        for (k, b) in buf.iter_mut().enumerate() {
            *b = if k < win_len {
                let src = reflect_index(center - half + k as isize, len);
                Complex::new(w.samples[src] * window[k], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..n_bins {
            mag[[k, tau]] = buf[k].norm();
        }
    }

    let fb = mel_filterbank(cfg);
    let linear = fb.dot(&mag);
    let values = linear.mapv(|v| (v + cfg.log_floor).ln());
    Ok(Spectrogram { values, linear, fps: cfg.fps() })
}

/// Per-frame RMS energy on linear mel magnitudes, normalized by the clip's
/// maximum linear value so an absolute threshold is scale-free. An all-zero
/// clip yields all-zero energies.
pub fn frame_energy(sp: &Spectrogram) -> Array1<f64> {
    let max = sp.linear.iter().cloned().fold(0.0f64, f64::max);
    let f = sp.n_mels() as f64;
    let mut out = Array1::zeros(sp.n_frames());
    if max <= 0.0 {
        return out;
    }
    for (tau, col) in sp.linear.columns().into_iter().enumerate() {
        let ss: f64 = col.iter().map(|v| (v / max) * (v / max)).sum();
        out[tau] = (ss / f).sqrt();
    }
    out
}
