//! Adaptive temporal-resolution audio feature engine.
//!
//! The crate converts raw waveforms into mel spectrograms, estimates a
//! per-frame importance score with a small convolutional network, and warps
//! the time axis so that informative frames keep fine resolution while
//! near-silent stretches are compressed. Everything from the spectrogram to
//! the losses is expressed on a minimal reverse-mode tape so the whole
//! pipeline trains end to end.
//!
//! Module map:
//! - [`wav`]: RIFF WAV loading (16-bit PCM and 32-bit float).
//! - [`dsp`]: Hann/STFT/mel front-end and per-frame RMS energy.
//! - [`tape`]: dense-array reverse-mode autodiff with finite-difference checks.
//! - [`nn`]: parameter store, conv/batchnorm layers, the frame-importance net.
//! - [`warp`]: importance rescaling, warp-matrix construction and
//!   normalization (scalar walk and vectorized form), frame warping,
//!   resolution encoding, activeness.
//! - [`loss`]: guide loss, binary cross entropy, total loss.
//! - [`container`]: the "ADRS" binary tensor container (features, checkpoints).

pub mod container;
pub mod dsp;
pub mod loss;
pub mod nn;
pub mod tape;
pub mod warp;
pub mod wav;

pub use container::ContainerError;
pub use dsp::{frame_energy, mel_spectrogram, Spectrogram, SpectrogramConfig};
pub use nn::{Ctx, FrameImportanceNet, ParamStore, ResConv1DBlock};
pub use tape::{Gradients, Tape, TapeError, Var};
pub use warp::{DiffResConfig, WarpError};
pub use wav::{load_wav, Waveform, WavError};
