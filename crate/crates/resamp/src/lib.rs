//! Sample-rate conversion with controllable high-frequency behavior.
//!
//! The heart of the crate is a polyphase resampler driven by interchangeable
//! kernel tables:
//!
//! - [`resample::resample_conventional`] — classic Kaiser-windowed-sinc
//!   conversion. Clean, but everything above the source Nyquist frequency
//!   stays empty after upsampling.
//! - [`resample::resample_post_noise`] — conventional conversion followed by
//!   additive white noise at a chosen SNR.
//! - [`resample::resample_noisy_kernel`] — conversion through a kernel whose
//!   taps are perturbed once per call, which injects weak high-frequency
//!   content *correlated with the signal* (silence stays silent).
//! - [`train::resample_trainable`] — conversion through a small trainable
//!   network standing in for the kernel, with exact gradients so the kernel
//!   can be optimized end to end through a frozen downstream model.
//!
//! Around that sit spectral measurement tools ([`analysis`]), a frozen
//! differentiable separation proxy whose output quality depends on
//! high-band energy by construction ([`proxy`]), and an experiment driver
//! comparing all strategies through that proxy ([`experiment`]).
//!
//! Everything seeded is deterministic: same seed, same bytes out.
//!
//! ```
//! use resamp::kernel::KernelConfig;
//! use resamp::resample::{output_length, resample_conventional};
//! use resamp::signal::Signal;
//!
//! let x = Signal::sine(8000, 440.0, 0.5, 8000);
//! let y = resample_conventional(&x, 44100, &KernelConfig::default()).unwrap();
//! assert_eq!(y.len(), output_length(8000, 8000, 44100).unwrap());
//! assert_eq!(y.rate_hz(), 44100);
//! ```

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod mlp;
pub mod proxy;
pub mod resample;
pub mod rng;
pub mod signal;
mod stft;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
pub use kernel::{KernelConfig, KernelTable};
pub use resample::{Method, ResampleSpec};
pub use signal::Signal;
