//! Short-time Fourier machinery shared by the spectrogram, the separation
//! model, and the training gradients.
//!
//! Frames start every `hop` samples from sample 0 and are zero-padded past
//! the end of the signal; `n_frames` is chosen so every sample falls in at
//! least one frame. Analysis applies a periodic Hann window; synthesis
//! applies the same window again and divides by the accumulated squared
//! window, which reconstructs the input exactly (including at the edges)
//! when the spectra are untouched.
//!
//! Because training differentiates through this transform, the module also
//! provides the exact adjoints of [`Stft::analyze`] and
//! [`Stft::synthesize`] as real-linear maps.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Stft {
    pub n_fft: usize,
    pub hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

/// Periodic Hann window (DFT-even), the variant whose squared overlap is
/// exactly constant for hop = n/2^k.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n as f64).cos()))
        .collect()
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Stft {
        assert!(n_fft >= 4 && hop >= 1 && hop <= n_fft);
        let mut planner = FftPlanner::new();
        Stft {
            n_fft,
            hop,
            window: hann(n_fft),
            fft: planner.plan_fft_forward(n_fft),
            ifft: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop).max(1)
    }

    /// Two-sided complex spectra, one per frame.
    pub fn analyze(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let frames = self.n_frames(x.len());
        let mut out = Vec::with_capacity(frames);
        let mut buf = vec![Complex64::default(); self.n_fft];
        for f in 0..frames {
            let start = f * self.hop;
            for (j, b) in buf.iter_mut().enumerate() {
                let v = x.get(start + j).copied().unwrap_or(0.0);
                *b = Complex64::new(v * self.window[j], 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf.clone());
        }
        out
    }

    /// Accumulated squared window under all frames covering `len` samples.
    fn overlap_norm(&self, len: usize, frames: usize) -> Vec<f64> {
        let mut norm = vec![0.0; len];
        for f in 0..frames {
            let start = f * self.hop;
            for (j, w) in self.window.iter().enumerate() {
                if let Some(n) = norm.get_mut(start + j) {
                    *n += w * w;
                }
            }
        }
        // Sample 0 is touched only by window index 0, whose periodic-Hann
        // value is 0; synthesis output is forced to 0 there, and the
        // adjoint mirrors the same floor.
        for n in &mut norm {
            if *n < 1e-30 {
                *n = 1.0;
            }
        }
        norm
    }

    /// Weighted overlap-add inverse producing `len` samples.
    pub fn synthesize(&self, spectra: &[Vec<Complex64>], len: usize) -> Vec<f64> {
        let norm = self.overlap_norm(len, spectra.len());
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::default(); self.n_fft];
        let scale = 1.0 / self.n_fft as f64;
        for (f, spec) in spectra.iter().enumerate() {
            buf.copy_from_slice(spec);
            self.ifft.process(&mut buf);
            let start = f * self.hop;
            for (j, b) in buf.iter().enumerate() {
                if let Some(o) = out.get_mut(start + j) {
                    *o += b.re * scale * self.window[j];
                }
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            *o /= n;
        }
        out
    }

    /// Adjoint of [`Stft::synthesize`]: maps a gradient with respect to the
    /// time output onto gradients with respect to the frame spectra.
    pub fn adjoint_synthesize(&self, upstream: &[f64], frames: usize) -> Vec<Vec<Complex64>> {
        let norm = self.overlap_norm(upstream.len(), frames);
        let mut out = Vec::with_capacity(frames);
        let mut buf = vec![Complex64::default(); self.n_fft];
        let scale = 1.0 / self.n_fft as f64;
        for f in 0..frames {
            let start = f * self.hop;
            for (j, b) in buf.iter_mut().enumerate() {
                let u = match upstream.get(start + j) {
                    Some(v) => v / norm[start + j],
                    None => 0.0,
                };
                *b = Complex64::new(u * self.window[j] * scale, 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf.clone());
        }
        out
    }

    /// Adjoint of [`Stft::analyze`]: maps gradients with respect to the
    /// frame spectra back onto a gradient with respect to the input.
    pub fn adjoint_analyze(&self, upstream: &[Vec<Complex64>], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::default(); self.n_fft];
        for (f, spec) in upstream.iter().enumerate() {
            buf.copy_from_slice(spec);
            self.ifft.process(&mut buf);
            let start = f * self.hop;
            for (j, b) in buf.iter().enumerate() {
                if let Some(o) = out.get_mut(start + j) {
                    *o += b.re * self.window[j];
                }
            }
        }
        out
    }
}
