//! Continuous interpolation kernels and their polyphase discretization.
//!
//! The conversion from rate `F_in` to rate `F_out` evaluates a continuous
//! kernel `k` at the time offsets `m/F_out - n/F_in` between every output
//! sample `m` and input sample `n`. Those offsets repeat with period
//! `F_out / gcd(F_in, F_out)` in `m`, so the kernel collapses to a finite
//! table: one row ("phase") per distinct fractional offset, taps spaced
//! `1/F_in` seconds apart. [`discretize_kernel`] builds that table for the
//! Kaiser-windowed sinc; [`add_kernel_noise`] perturbs a built table;
//! [`kernel_frequency_response`] measures any table.

use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Shape parameters for the windowed-sinc kernel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Window span in periods of the kernel's design rate; also the tap
    /// count per phase in the common upsampling case. Even values keep the
    /// tap grid symmetric around t = 0.
    pub window_length: u32,
    /// Kaiser window shape parameter (the argument usually written beta).
    pub kaiser_alpha: f64,
    /// Low-pass cutoff in Hz. `None` selects half the lower of the two
    /// rates at discretization time, the anti-aliasing choice.
    pub cutoff_hz: Option<f64>,
    /// Multiplier in (0, 1] applied to the cutoff.
    pub rolloff: f64,
}

impl Default for KernelConfig {
    fn default() -> KernelConfig {
        KernelConfig {
            window_length: 48,
            kaiser_alpha: 4.1,
            cutoff_hz: None,
            rolloff: 1.0,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.window_length % 2 != 0 {
            return Err(Error::invalid("window_length must be a positive even integer"));
        }
        if !(self.kaiser_alpha > 0.0) || !self.kaiser_alpha.is_finite() {
            return Err(Error::invalid("kaiser_alpha must be positive and finite"));
        }
        if let Some(c) = self.cutoff_hz {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::invalid("cutoff_hz must be positive and finite"));
            }
        }
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::invalid("rolloff must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Normalized sinc: sin(pi t) / (pi t), with sinc(0) = 1.
pub fn sinc(t: f64) -> f64 {
    if t == t.trunc() {
        // Integer arguments sit exactly on the zero crossings; evaluating
        // sin(pi*t) there leaves ~1e-16 of residue, which would stop
        // rate-preserving tables from being exact unit impulses.
        if t == 0.0 { 1.0 } else { 0.0 }
    } else {
        let p = std::f64::consts::PI * t;
        p.sin() / p
    }
}

/// Modified Bessel function of the first kind, order zero, by its power
/// series; terms are added until one falls below 1e-12 of the running sum.
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-12 {
            return sum;
        }
        k += 1.0;
    }
}

/// Kaiser window of total span `window_length / rate_hz` seconds centered
/// on t = 0: I0(pi alpha * sqrt(1 - (2 t rate / L)^2)) / I0(pi alpha)
/// inside the span, zero outside.
///
/// `alpha` is the classical shape parameter whose Bessel argument is
/// pi*alpha (the convention in which resamplers quote defaults near 4);
/// the default 4.1 puts stopband leakage near -120 dB, far below the
/// perturbations the noise-injecting conversions add on purpose — the
/// separation the whole experiment rests on.
pub fn kaiser_window(t: f64, window_length: u32, rate_hz: f64, alpha: f64) -> f64 {
    let half_span = window_length as f64 / (2.0 * rate_hz);
    if t.abs() > half_span {
        return 0.0;
    }
    let beta = std::f64::consts::PI * alpha;
    let u = 2.0 * rate_hz * t / window_length as f64;
    bessel_i0(beta * (1.0 - u * u).max(0.0).sqrt()) / bessel_i0(beta)
}

/// Kaiser-windowed sinc at time `t` seconds, designed at `rate_hz`:
/// window(t) * sinc(2 * rolloff * cutoff * t). With the default cutoff
/// (half of `rate_hz`) and rolloff 1 this interpolates band-limited
/// signals sampled at `rate_hz` exactly.
pub fn windowed_sinc_kernel(t: f64, cfg: &KernelConfig, rate_hz: f64) -> f64 {
    let cutoff = cfg.cutoff_hz.unwrap_or(rate_hz * 0.5);
    kaiser_window(t, cfg.window_length, rate_hz, cfg.kaiser_alpha)
        * sinc(2.0 * cfg.rolloff * cutoff * t)
}

/// A discretized kernel for one (source, target) rate pair.
///
/// `taps` is row-major `[phase][tap]`. Output sample `m` uses phase
/// `m % phases`; tap `j` of a phase multiplies the input sample at offset
/// `j - center_offset` from the phase's anchor position. Serializes to the
/// JSON interchange form with exactly these field names.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelTable {
    pub source_rate_hz: u32,
    pub target_rate_hz: u32,
    pub phases: u32,
    pub taps_per_phase: u32,
    pub center_offset: u32,
    pub taps: Vec<f64>,
}

pub(crate) fn gcd(a: u32, b: u32) -> u32 {
    let (mut a, mut b) = (a, b);
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl KernelTable {
    pub fn validate(&self) -> Result<()> {
        if self.source_rate_hz == 0 || self.target_rate_hz == 0 {
            return Err(Error::invalid("kernel table rates must be positive"));
        }
        if self.phases == 0 || self.taps_per_phase == 0 {
            return Err(Error::invalid("kernel table must have phases and taps"));
        }
        if self.phases != self.target_rate_hz / gcd(self.source_rate_hz, self.target_rate_hz) {
            return Err(Error::invalid(
                "phase count must equal target rate over gcd(source, target)",
            ));
        }
        if self.center_offset >= self.taps_per_phase {
            return Err(Error::invalid("center_offset must index a tap"));
        }
        if self.taps.len() != self.phases as usize * self.taps_per_phase as usize {
            return Err(Error::invalid("tap buffer must be phases * taps_per_phase long"));
        }
        if self.taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("taps must be finite"));
        }
        Ok(())
    }

    pub fn phase(&self, i: usize) -> &[f64] {
        let k = self.taps_per_phase as usize;
        &self.taps[i * k..(i + 1) * k]
    }

    /// Reduced ratio (p, q) with p = target/gcd (= phases) and q = source/gcd.
    pub(crate) fn ratio(&self) -> (i64, i64) {
        let g = gcd(self.source_rate_hz, self.target_rate_hz);
        ((self.target_rate_hz / g) as i64, (self.source_rate_hz / g) as i64)
    }

    /// Time offset, in seconds, that tap `j` of phase `i` was sampled at.
    /// The numerator is exact in integer arithmetic, so mirrored taps get
    /// bit-identical magnitudes.
    pub fn tap_time(&self, phase: usize, j: usize) -> f64 {
        let (p, _q) = self.ratio();
        let num = self.tap_time_numerator(phase, j);
        num as f64 / (p as f64 * self.source_rate_hz as f64)
    }

    fn tap_time_numerator(&self, phase: usize, j: usize) -> i64 {
        let (p, q) = self.ratio();
        let d = j as i64 - self.center_offset as i64;
        (phase as i64 * q).rem_euclid(p) - p * d
    }

    /// Tap position in source-sample units (`t * source_rate_hz`), formed
    /// with a single rounding so grid-aligned taps are exact integers.
    pub(crate) fn tap_units(&self, phase: usize, j: usize) -> f64 {
        let (p, _q) = self.ratio();
        self.tap_time_numerator(phase, j) as f64 / p as f64
    }

    /// The table flattened to one time-ordered tap sequence on the common
    /// grid of both rates (step `1/(phases * source_rate)` seconds). Index
    /// `phases * (taps_per_phase - center_offset - 1)` holds the t = 0 tap.
    pub fn prototype(&self) -> Vec<f64> {
        let (p, _) = self.ratio();
        let k = self.taps_per_phase as usize;
        let c_hi = k as i64 - self.center_offset as i64 - 1; // max positive d
        let offset = p * c_hi; // shift of r = 0 within the sequence
        let mut proto = vec![0.0; self.taps.len()];
        for i in 0..self.phases as usize {
            for j in 0..k {
                let r = self.tap_time_numerator(i, j);
                proto[(r + offset) as usize] = self.taps[i * k + j];
            }
        }
        proto
    }

    /// Index of the t = 0 tap within [`KernelTable::prototype`].
    pub fn prototype_center(&self) -> usize {
        let (p, _) = self.ratio();
        let c_hi = self.taps_per_phase as i64 - self.center_offset as i64 - 1;
        (p * c_hi) as usize
    }
}

/// Build a table by evaluating an arbitrary continuous kernel on the
/// polyphase grid with `half_width` taps on each side of every phase's
/// anchor. Shared by the windowed-sinc and trainable paths.
///
/// The kernel closure receives each tap position as an exact rational,
/// `numerator / denominator` seconds with an integer numerator, so callers
/// can form their own arguments without compounding rounding (a tap that
/// lands on a zero crossing must actually evaluate to zero there, or
/// rate-preserving tables stop being unit impulses).
pub(crate) fn tabulate_kernel(
    rate_in_hz: u32,
    rate_out_hz: u32,
    half_width: i64,
    mut kernel: impl FnMut(i64, f64) -> f64,
) -> KernelTable {
    let g = gcd(rate_in_hz, rate_out_hz);
    let p = (rate_out_hz / g) as i64;
    let q = (rate_in_hz / g) as i64;
    let taps_per_phase = 2 * half_width;
    let center = half_width - 1;
    let denom = p as f64 * rate_in_hz as f64;
    let mut taps = Vec::with_capacity((p * taps_per_phase) as usize);
    for i in 0..p {
        let r0 = (i * q).rem_euclid(p);
        for j in 0..taps_per_phase {
            let d = j - center;
            taps.push(kernel(r0 - p * d, denom));
        }
    }
    KernelTable {
        source_rate_hz: rate_in_hz,
        target_rate_hz: rate_out_hz,
        phases: p as u32,
        taps_per_phase: taps_per_phase as u32,
        center_offset: center as u32,
        taps,
    }
}

/// Discretize the windowed-sinc kernel for a rate pair.
///
/// The cutoff defaults to half the lower rate (anti-aliasing in both
/// directions); the window spans `window_length` periods of the effective
/// bandwidth so the lobe count does not degrade when downsampling; taps are
/// scaled by `bandwidth / rate_in`, which keeps passband gain at one (the
/// scale is exactly 1 for default-configured upsampling). When the source
/// rate divides the target rate, the zero-offset phase degenerates to a
/// unit impulse and those output samples copy input samples exactly.
pub fn discretize_kernel(
    cfg: &KernelConfig,
    rate_in_hz: u32,
    rate_out_hz: u32,
) -> Result<KernelTable> {
    cfg.validate()?;
    if rate_in_hz == 0 || rate_out_hz == 0 {
        return Err(Error::invalid("sample rates must be positive"));
    }
    let min_rate = rate_in_hz.min(rate_out_hz);
    let cutoff = cfg.cutoff_hz.unwrap_or(min_rate as f64 * 0.5);
    let bandwidth = 2.0 * cfg.rolloff * cutoff; // two-sided, Hz
    let l = cfg.window_length as i64;

    // Support half-width in input samples: L * rate_in / (2 * bandwidth),
    // computed exactly when the bandwidth is the default rational one.
    let half_width = if cfg.cutoff_hz.is_none() && cfg.rolloff == 1.0 {
        let g = gcd(rate_in_hz, rate_out_hz);
        let (p, q) = ((rate_out_hz / g) as i64, (rate_in_hz / g) as i64);
        let denom = 2 * p.min(q);
        (l * q + denom - 1) / denom
    } else {
        let h = l as f64 * rate_in_hz as f64 / (2.0 * bandwidth);
        (h - 1e-9).ceil().max(1.0) as i64
    };

    let scale = bandwidth / rate_in_hz as f64;
    let table = tabulate_kernel(rate_in_hz, rate_out_hz, half_width, |num, den| {
        let t = num as f64 / den;
        // Sinc argument formed as (bandwidth * num) / den: the product is
        // exact (integer values well under 2^53 for the default cutoff)
        // and IEEE division is exact when the true quotient is an integer,
        // so grid-aligned taps hit the sinc zero crossings dead on and the
        // aligned phases degenerate to exact unit impulses.
        let x = bandwidth * num as f64 / den;
        scale * kaiser_window(t, cfg.window_length, bandwidth, cfg.kaiser_alpha) * sinc(x)
    });
    Ok(table)
}

/// Return a copy of `table` with independent zero-mean Gaussian noise of
/// variance `sigma2` added to every tap. The draw order is fixed (row-major
/// over the tap buffer), so a seed identifies one perturbation exactly.
pub fn add_kernel_noise(table: &KernelTable, sigma2: f64, seed: u64) -> Result<KernelTable> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::invalid("noise variance must be finite and non-negative"));
    }
    let mut out = table.clone();
    if sigma2 > 0.0 {
        let sigma = sigma2.sqrt();
        let mut rng = Rng::new(seed);
        for tap in &mut out.taps {
            *tap += sigma * rng.next_gaussian();
        }
    }
    Ok(out)
}

/// Magnitude response of a kernel table on [0, target_rate / 2].
#[derive(Clone, Debug)]
pub struct FrequencyResponse {
    pub freqs_hz: Vec<f64>,
    pub magnitude_db: Vec<f64>,
}

/// Magnitudes below this floor are clamped when converting to dB.
pub const RESPONSE_FLOOR_DB: f64 = -200.0;

/// Measure a table's magnitude response: the time-ordered tap sequence is
/// zero-padded to `n_fft` (power of two, at least the total tap count),
/// transformed, normalized by the phase count so a unit-impulse table reads
/// 0 dB, and reported on bins up to half the target rate.
pub fn kernel_frequency_response(table: &KernelTable, n_fft: usize) -> Result<FrequencyResponse> {
    table.validate()?;
    if !n_fft.is_power_of_two() || n_fft < table.taps.len() {
        return Err(Error::invalid(
            "n_fft must be a power of two no smaller than the total tap count",
        ));
    }
    let proto = table.prototype();
    let spectrum = analysis::dft_padded(&proto, n_fft);
    let eval_rate = table.phases as f64 * table.source_rate_hz as f64;
    let nyquist = table.target_rate_hz as f64 * 0.5;
    let gain = table.phases as f64;
    let mut freqs_hz = Vec::new();
    let mut magnitude_db = Vec::new();
    for (k, v) in spectrum.iter().enumerate().take(n_fft / 2 + 1) {
        let f = k as f64 * eval_rate / n_fft as f64;
        if f > nyquist * (1.0 + 1e-12) {
            break;
        }
        freqs_hz.push(f);
        let mag = v.norm() / gain;
        magnitude_db.push(20.0 * mag.log10().max(RESPONSE_FLOOR_DB / 20.0));
    }
    Ok(FrequencyResponse { freqs_hz, magnitude_db })
}

impl FrequencyResponse {
    /// Mean of `magnitude_db` over bins with frequency in [f_lo, f_hi).
    pub fn mean_db(&self, f_lo: f64, f_hi: f64) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (f, m) in self.freqs_hz.iter().zip(&self.magnitude_db) {
            if *f >= f_lo && *f < f_hi {
                sum += m;
                n += 1;
            }
        }
        assert!(n > 0, "no response bins in [{f_lo}, {f_hi}) Hz");
        sum / n as f64
    }
}
