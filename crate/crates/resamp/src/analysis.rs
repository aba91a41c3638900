//! Spectral measurement: DFT, band energies, SNR/SDR, spectrograms.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::signal::Signal;
use crate::stft::Stft;

/// Upper bound applied to [`sdr_db`]; numerically-identical signals report
/// this value instead of infinity.
pub const SDR_CAP_DB: f64 = 300.0;

/// Spectrogram magnitudes are floored at this level.
pub const SPECTROGRAM_FLOOR_DB: f64 = -120.0;

/// Two-sided discrete Fourier transform of a real sequence, any length.
pub fn dft(x: &[f64]) -> Vec<Complex64> {
    dft_padded(x, x.len())
}

/// DFT of `x` zero-padded (or truncated) to `n` points.
pub(crate) fn dft_padded(x: &[f64], n: usize) -> Vec<Complex64> {
    assert!(n > 0);
    let mut buf: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf
}

/// Number of samples above which [`band_energy`] switches from a plain DFT
/// to Welch averaging.
pub const WELCH_THRESHOLD: usize = 8192;
const WELCH_SEGMENTS: usize = 8;

/// Energy of `x` attributed to frequencies in [f_lo, f_hi) Hz, summed over
/// channels.
///
/// The result is normalized so that bands covering [0, rate/2] in disjoint
/// pieces sum to the total time-domain energy. Signals up to
/// [`WELCH_THRESHOLD`] samples use a plain DFT (band sums are then exact by
/// Parseval); longer signals use Hann-windowed Welch averaging with 8
/// half-overlapping segments, trading exactness for a stable estimate.
pub fn band_energy(x: &Signal, f_lo: f64, f_hi: f64) -> Result<f64> {
    if !(f_lo >= 0.0 && f_hi > f_lo) || !f_hi.is_finite() {
        return Err(Error::invalid("band edges must satisfy 0 <= f_lo < f_hi"));
    }
    if x.is_empty() {
        return Err(Error::invalid("cannot measure an empty signal"));
    }
    let rate = x.rate_hz() as f64;
    let mut total = 0.0;
    for ch in x.channels() {
        let energy: f64 = ch.iter().map(|s| s * s).sum();
        if energy == 0.0 {
            continue;
        }
        let spectrum = if ch.len() > WELCH_THRESHOLD {
            welch_power(ch)
        } else {
            dft(ch).iter().map(|v| v.norm_sqr()).collect()
        };
        let n = spectrum.len();
        let mut in_band = 0.0;
        let mut all = 0.0;
        for (k, p) in spectrum.iter().enumerate() {
            let f = k.min(n - k) as f64 * rate / n as f64;
            all += p;
            if f >= f_lo && f < f_hi {
                in_band += p;
            }
        }
        total += energy * in_band / all;
    }
    Ok(total)
}

/// Mean Hann-windowed periodogram over 8 segments at 50% overlap.
fn welch_power(x: &[f64]) -> Vec<f64> {
    let seg = (2 * x.len() / (WELCH_SEGMENTS + 1)).max(16);
    let hop = seg / 2;
    let window = crate::stft::hann(seg);
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let mut acc = vec![0.0; seg];
    let mut buf = vec![Complex64::default(); seg];
    for s in 0..WELCH_SEGMENTS {
        let start = s * hop;
        for (j, b) in buf.iter_mut().enumerate() {
            let v = x.get(start + j).copied().unwrap_or(0.0);
            *b = Complex64::new(v * window[j], 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    acc
}

/// 10 log10 of signal-to-noise energy ratio, where the noise is
/// `noisy - clean`. Identical signals give +infinity.
pub fn snr_db(clean: &Signal, noisy: &Signal) -> Result<f64> {
    if !clean.same_shape(noisy) {
        return Err(Error::invalid("snr_db needs signals of identical shape and rate"));
    }
    let noise_energy: f64 = clean
        .channels()
        .iter()
        .zip(noisy.channels())
        .flat_map(|(c, n)| c.iter().zip(n).map(|(a, b)| (b - a) * (b - a)))
        .sum();
    if noise_energy == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (clean.energy() / noise_energy).log10())
}

/// Signal-to-distortion ratio of an estimate against a reference, in dB,
/// capped at [`SDR_CAP_DB`]. A silent estimate scores 0 dB by construction;
/// a silent reference is rejected.
pub fn sdr_db(reference: &Signal, estimate: &Signal) -> Result<f64> {
    if !reference.same_shape(estimate) {
        return Err(Error::invalid("sdr_db needs signals of identical shape and rate"));
    }
    let ref_energy = reference.energy();
    if ref_energy == 0.0 {
        return Err(Error::invalid("sdr_db reference must not be silent"));
    }
    let err_energy: f64 = reference
        .channels()
        .iter()
        .zip(estimate.channels())
        .flat_map(|(r, e)| r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)))
        .sum();
    if err_energy == 0.0 {
        return Ok(SDR_CAP_DB);
    }
    Ok((10.0 * (ref_energy / err_energy).log10()).min(SDR_CAP_DB))
}

/// Band-by-band energy comparison of two signals, with SNR/SDR when their
/// shapes allow it.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub bands: Vec<BandRow>,
    pub snr_db: Option<f64>,
    pub sdr_db: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BandRow {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub reference_energy: f64,
    pub processed_energy: f64,
}

/// Compare `processed` against `reference` over `n_bands` uniform bands
/// spanning up to the higher of the two Nyquist frequencies.
pub fn spectral_report(
    reference: &Signal,
    processed: &Signal,
    n_bands: usize,
) -> Result<SpectralReport> {
    if n_bands == 0 {
        return Err(Error::invalid("n_bands must be positive"));
    }
    let top = reference.rate_hz().max(processed.rate_hz()) as f64 * 0.5;
    let mut bands = Vec::with_capacity(n_bands);
    for i in 0..n_bands {
        let f_lo = top * i as f64 / n_bands as f64;
        let f_hi = top * (i + 1) as f64 / n_bands as f64;
        bands.push(BandRow {
            f_lo_hz: f_lo,
            f_hi_hz: f_hi,
            reference_energy: band_energy(reference, f_lo, f_hi)?,
            processed_energy: band_energy(processed, f_lo, f_hi)?,
        });
    }
    let comparable = reference.same_shape(processed);
    Ok(SpectralReport {
        bands,
        snr_db: comparable.then(|| snr_db(reference, processed)).transpose()?,
        sdr_db: comparable.then(|| sdr_db(reference, processed)).transpose()?,
    })
}

impl SpectralReport {
    /// CSV with one row per band followed by one row per scalar metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,f_lo_hz,f_hi_hz,reference_energy,processed_energy,value_db\n");
        for b in &self.bands {
            out.push_str(&format!(
                "band,{},{},{},{},\n",
                b.f_lo_hz, b.f_hi_hz, b.reference_energy, b.processed_energy
            ));
        }
        if let Some(v) = self.snr_db {
            out.push_str(&format!("snr_db,,,,,{v}\n"));
        }
        if let Some(v) = self.sdr_db {
            out.push_str(&format!("sdr_db,,,,,{v}\n"));
        }
        out
    }
}

/// Magnitude spectrogram in dB, frames by one-sided bins.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub rate_hz: u32,
    pub n_fft: usize,
    pub hop: usize,
    /// `frames[t][k]` = dB magnitude of bin k in frame t, floored at
    /// [`SPECTROGRAM_FLOOR_DB`]. Multichannel signals average channel power.
    pub frames: Vec<Vec<f64>>,
}

/// Hann-windowed magnitude spectrogram. Frames hop by `hop` samples from
/// sample 0; the tail is zero-padded.
pub fn spectrogram(x: &Signal, n_fft: usize, hop: usize) -> Result<Spectrogram> {
    if n_fft < 4 || hop == 0 || hop > n_fft {
        return Err(Error::invalid("need n_fft >= 4 and 1 <= hop <= n_fft"));
    }
    if x.is_empty() {
        return Err(Error::invalid("cannot measure an empty signal"));
    }
    let stft = Stft::new(n_fft, hop);
    let bins = n_fft / 2 + 1;
    let n_frames = stft.n_frames(x.len());
    let mut power = vec![vec![0.0f64; bins]; n_frames];
    for ch in x.channels() {
        for (t, spec) in stft.analyze(ch).iter().enumerate() {
            for k in 0..bins {
                power[t][k] += spec[k].norm_sqr();
            }
        }
    }
    let scale = 1.0 / x.n_channels() as f64;
    let frames = power
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|p| (10.0 * (p * scale).log10()).max(SPECTROGRAM_FLOOR_DB))
                .collect()
        })
        .collect();
    Ok(Spectrogram { rate_hz: x.rate_hz(), n_fft, hop, frames })
}

impl Spectrogram {
    pub fn bin_freq_hz(&self, k: usize) -> f64 {
        k as f64 * self.rate_hz as f64 / self.n_fft as f64
    }

    pub fn frame_time_s(&self, t: usize) -> f64 {
        (t * self.hop) as f64 / self.rate_hz as f64
    }

    /// Wide CSV: one row per frame, one column per frequency bin.
    pub fn to_csv(&self) -> String {
        let bins = self.frames.first().map_or(0, Vec::len);
        let mut out = String::from("time_s");
        for k in 0..bins {
            out.push_str(&format!(",hz_{}", self.bin_freq_hz(k)));
        }
        out.push('\n');
        for (t, row) in self.frames.iter().enumerate() {
            out.push_str(&format!("{}", self.frame_time_s(t)));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// O(n^2) transform straight from the definition; the independent
    /// reference the fast path must reproduce.
    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex64::default();
                for (j, &v) in x.iter().enumerate() {
                    let phi = -std::f64::consts::TAU * (k * j) as f64 / n as f64;
                    acc += Complex64::new(v * phi.cos(), v * phi.sin());
                }
                acc
            })
            .collect()
    }

    fn random_vec(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| rng.next_range(-1.0, 1.0)).collect()
    }

    #[test]
    fn fast_dft_matches_naive_definition() {
        // Power-of-two, even composite, and prime lengths exercise all
        // transform strategies.
        for (seed, n) in [(1u64, 64usize), (2, 60), (3, 97), (4, 128), (5, 33)] {
            let x = random_vec(seed, n);
            let fast = dft(&x);
            let slow = naive_dft(&x);
            let scale = slow.iter().map(|v| v.norm()).fold(1.0, f64::max);
            for k in 0..n {
                assert!(
                    (fast[k] - slow[k]).norm() <= 1e-9 * scale,
                    "n={n} bin {k}: {} vs {}",
                    fast[k],
                    slow[k]
                );
            }
        }
    }

    #[test]
    fn dft_of_impulse_and_constant() {
        let mut x = vec![0.0; 16];
        x[0] = 1.0;
        for v in dft(&x) {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        let x = vec![1.0; 16];
        let s = dft(&x);
        assert!((s[0].re - 16.0).abs() < 1e-12);
        for v in &s[1..] {
            assert!(v.norm() < 1e-9);
        }
    }

    #[test]
    fn band_energy_is_parseval_consistent() {
        let x = Signal::mono(8000, random_vec(6, 1024)).unwrap();
        let total = x.energy();
        let full = band_energy(&x, 0.0, 4001.0).unwrap();
        assert!((full - total).abs() <= 1e-9 * total);

        // A disjoint cover sums to the total.
        let edges = [0.0, 500.0, 1333.0, 2750.0, 4001.0];
        let sum: f64 = edges
            .windows(2)
            .map(|w| band_energy(&x, w[0], w[1]).unwrap())
            .sum();
        assert!((sum - total).abs() <= 1e-9 * total);
    }

    #[test]
    fn sine_energy_concentrates_in_its_band() {
        // Plain-DFT path.
        let s = Signal::sine(8000, 1000.0, 1.0, 4096);
        let band = band_energy(&s, 500.0, 1500.0).unwrap();
        let total = band_energy(&s, 0.0, 4001.0).unwrap();
        assert!(band / total >= 0.99, "plain: {}", band / total);
        // Welch path.
        let s = Signal::sine(8000, 1000.0, 1.0, 20000);
        let band = band_energy(&s, 500.0, 1500.0).unwrap();
        let total = band_energy(&s, 0.0, 4001.0).unwrap();
        assert!(band / total >= 0.99, "welch: {}", band / total);
    }

    #[test]
    fn white_noise_splits_evenly() {
        let mut rng = Rng::new(9);
        let x = Signal::mono(8000, rng.gaussian_vec(40_000, 1.0)).unwrap();
        let lo = band_energy(&x, 0.0, 2000.0).unwrap();
        let hi = band_energy(&x, 2000.0, 4001.0).unwrap();
        assert!((lo / hi - 1.0).abs() < 0.1, "ratio {}", lo / hi);
    }

    #[test]
    fn silence_has_no_band_energy() {
        let s = Signal::silence(8000, 1, 512);
        assert_eq!(band_energy(&s, 0.0, 4000.0).unwrap(), 0.0);
    }

    #[test]
    fn band_energy_rejects_bad_bands() {
        let s = Signal::silence(8000, 1, 64);
        assert!(band_energy(&s, -1.0, 100.0).is_err());
        assert!(band_energy(&s, 200.0, 200.0).is_err());
    }

    #[test]
    fn snr_reference_points() {
        let clean = Signal::mono(8000, vec![2.0, 0.0]).unwrap();
        let noisy = Signal::mono(8000, vec![2.0, 0.2]).unwrap();
        assert!((snr_db(&clean, &noisy).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(snr_db(&clean, &clean).unwrap(), f64::INFINITY);
        let other = Signal::mono(16000, vec![2.0, 0.2]).unwrap();
        assert!(snr_db(&clean, &other).is_err());
    }

    #[test]
    fn sdr_reference_points() {
        let r = Signal::mono(8000, vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(sdr_db(&r, &r).unwrap(), SDR_CAP_DB);

        let silent = Signal::silence(8000, 1, 3);
        assert!((sdr_db(&r, &silent).unwrap() - 0.0).abs() < 1e-12);
        assert!(sdr_db(&silent, &r).is_err());

        // Common scaling of both signals cancels.
        let e = Signal::mono(8000, vec![0.9, -2.2, 0.4]).unwrap();
        let r3 = Signal::mono(8000, vec![3.0, -6.0, 1.5]).unwrap();
        let e3 = Signal::mono(8000, vec![2.7, -6.6, 1.2]).unwrap();
        let a = sdr_db(&r, &e).unwrap();
        let b = sdr_db(&r3, &e3).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");

        // A vanishingly small error saturates at the cap.
        let mut near = r.channel(0).to_vec();
        near[0] += 1e-16;
        let near = Signal::mono(8000, near).unwrap();
        assert_eq!(sdr_db(&r, &near).unwrap(), SDR_CAP_DB);
    }

    #[test]
    fn spectrogram_of_silence_sits_on_the_floor() {
        let g = spectrogram(&Signal::silence(8000, 1, 4096), 1024, 256).unwrap();
        assert!(!g.frames.is_empty());
        for row in &g.frames {
            assert_eq!(row.len(), 513);
            for v in row {
                assert_eq!(*v, SPECTROGRAM_FLOOR_DB);
            }
        }
    }

    #[test]
    fn spectrogram_of_sine_peaks_at_its_bin() {
        let s = Signal::sine(8000, 1000.0, 1.0, 8192);
        let g = spectrogram(&s, 1024, 256).unwrap();
        let expect = (1000.0_f64 / (8000.0 / 1024.0)).round() as usize;
        // Interior frames only: edge frames see the zero-padded boundary.
        let interior = &g.frames[2..g.frames.len() - 4];
        assert!(!interior.is_empty());
        for (t, row) in interior.iter().enumerate() {
            let arg = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(arg, expect, "frame {t}");
        }
    }

    #[test]
    fn spectrogram_tracks_a_rising_chirp() {
        let rate = 8000.0;
        let n = 16384;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                // Instantaneous frequency sweeps 200 Hz -> 3000 Hz.
                let phase = std::f64::consts::TAU * (200.0 * t + 0.5 * (2800.0 / 2.0) * t * t);
                phase.sin()
            })
            .collect();
        let g = spectrogram(&Signal::mono(8000, samples).unwrap(), 1024, 256).unwrap();
        let args: Vec<usize> = g.frames[1..g.frames.len() - 4]
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0
            })
            .collect();
        for w in args.windows(2) {
            assert!(w[1] + 2 >= w[0], "ridge moved down: {} -> {}", w[0], w[1]);
        }
        assert!(args.last().unwrap() > args.first().unwrap());
    }

    #[test]
    fn spectral_report_shapes() {
        let a = Signal::sine(8000, 1000.0, 1.0, 2048);
        let b = Signal::sine(8000, 1000.0, 0.9, 2048);
        let r = spectral_report(&a, &b, 8).unwrap();
        assert_eq!(r.bands.len(), 8);
        assert!(r.snr_db.is_some() && r.sdr_db.is_some());
        let csv = r.to_csv();
        assert!(csv.starts_with("kind,"));
        assert_eq!(csv.lines().count(), 1 + 8 + 2);

        // Different rates: band rows only.
        let c = Signal::sine(16000, 1000.0, 1.0, 4096);
        let r = spectral_report(&a, &c, 4).unwrap();
        assert!(r.snr_db.is_none() && r.sdr_db.is_none());
    }
}
