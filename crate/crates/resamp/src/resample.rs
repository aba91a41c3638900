//! Sample-rate conversion built on [`KernelTable`]s.
//!
//! Output length is fixed by integer arithmetic: converting `n` samples
//! from `F_in` to `F_out` yields `floor(n * F_out / F_in)` samples. Output
//! sample `m` is anchored at input position `floor(m * F_in / F_out)` and
//! mixes the surrounding input window with the taps of phase
//! `m % phases`; inputs outside `[0, n)` count as zero, which colors the
//! first and last `window_length` output samples (fidelity measurements
//! trim them).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{add_kernel_noise, discretize_kernel, KernelConfig, KernelTable};
use crate::mlp::MlpKernelParams;
use crate::rng::Rng;
use crate::signal::Signal;

/// `floor(input_len * rate_out / rate_in)`, exactly.
pub fn output_length(input_len: usize, rate_in_hz: u32, rate_out_hz: u32) -> Result<usize> {
    if input_len == 0 {
        return Err(Error::invalid("input length must be positive"));
    }
    if rate_in_hz == 0 || rate_out_hz == 0 {
        return Err(Error::invalid("sample rates must be positive"));
    }
    Ok((input_len as u128 * rate_out_hz as u128 / rate_in_hz as u128) as usize)
}

/// Convert every channel of `x` to the table's target rate.
pub fn resample_with_table(x: &Signal, table: &KernelTable) -> Result<Signal> {
    table.validate()?;
    if x.rate_hz() != table.source_rate_hz {
        return Err(Error::RateMismatch {
            signal_hz: x.rate_hz(),
            expected_hz: table.source_rate_hz,
        });
    }
    let out_len = output_length(x.len(), table.source_rate_hz, table.target_rate_hz)?;
    let channels = x
        .channels()
        .iter()
        .map(|ch| apply_table(ch, table, out_len))
        .collect();
    Ok(Signal::from_processed(table.target_rate_hz, channels))
}

fn apply_table(x: &[f64], table: &KernelTable, out_len: usize) -> Vec<f64> {
    let (p, q) = table.ratio();
    let k = table.taps_per_phase as i64;
    let center = table.center_offset as i64;
    let n = x.len() as i64;
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len as i64 {
        let phase = (m % p) as usize;
        let anchor = (m / p) * q + (m % p) * q / p;
        let taps = table.phase(phase);
        let n0 = anchor - center;
        let mut acc = 0.0;
        if n0 >= 0 && n0 + k <= n {
            let xs = &x[n0 as usize..(n0 + k) as usize];
            for (t, v) in taps.iter().zip(xs) {
                acc += t * v;
            }
        } else {
            for (j, t) in taps.iter().enumerate() {
                let idx = n0 + j as i64;
                if idx >= 0 && idx < n {
                    acc += t * x[idx as usize];
                }
            }
        }
        out.push(acc);
    }
    out
}

/// Transpose of the linear map `resample_with_table(_, table)`: scatters a
/// gradient at the target rate back onto the `input_len` source samples.
pub fn resample_adjoint(
    upstream: &Signal,
    table: &KernelTable,
    input_len: usize,
) -> Result<Signal> {
    table.validate()?;
    if upstream.rate_hz() != table.target_rate_hz {
        return Err(Error::RateMismatch {
            signal_hz: upstream.rate_hz(),
            expected_hz: table.target_rate_hz,
        });
    }
    let (p, q) = table.ratio();
    let center = table.center_offset as i64;
    let channels = upstream
        .channels()
        .iter()
        .map(|u| {
            let mut grad = vec![0.0; input_len];
            for (m, um) in u.iter().enumerate() {
                let m = m as i64;
                let phase = (m % p) as usize;
                let anchor = (m / p) * q + (m % p) * q / p;
                let taps = table.phase(phase);
                let n0 = anchor - center;
                for (j, t) in taps.iter().enumerate() {
                    let idx = n0 + j as i64;
                    if idx >= 0 && (idx as usize) < input_len {
                        grad[idx as usize] += t * um;
                    }
                }
            }
            grad
        })
        .collect();
    Ok(Signal::from_processed(table.source_rate_hz, channels))
}

/// Windowed-sinc conversion to `rate_out_hz`.
pub fn resample_conventional(x: &Signal, rate_out_hz: u32, cfg: &KernelConfig) -> Result<Signal> {
    resample_with_table(x, &discretize_kernel(cfg, x.rate_hz(), rate_out_hz)?)
}

/// Noise variance that sets a given SNR against `y`'s mean power:
/// `mean_power(y) * 10^(-snr_db / 10)`. Infinite SNR calibrates to zero;
/// a silent signal cannot be calibrated against a finite SNR.
pub fn calibrate_noise_variance(y: &Signal, snr_db: f64) -> Result<f64> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid("snr_db must be a real value or +inf"));
    }
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    let power = y.mean_power();
    if power == 0.0 {
        return Err(Error::ZeroPowerSignal);
    }
    Ok(power * 10f64.powf(-snr_db / 10.0))
}

/// Windowed-sinc conversion followed by additive white Gaussian noise
/// calibrated to `snr_db` against the converted signal. Channels share the
/// calibrated variance; draws are independent, channel 0 first.
pub fn resample_post_noise(
    x: &Signal,
    rate_out_hz: u32,
    cfg: &KernelConfig,
    snr_db: f64,
    seed: u64,
) -> Result<Signal> {
    let mut y = resample_conventional(x, rate_out_hz, cfg)?;
    if snr_db == f64::INFINITY {
        return Ok(y);
    }
    let sigma = calibrate_noise_variance(&y, snr_db)?.sqrt();
    let mut rng = Rng::new(seed);
    for ch in y.channels_mut() {
        for s in ch {
            *s += sigma * rng.next_gaussian();
        }
    }
    Ok(y)
}

/// Conversion through a windowed-sinc table whose every tap is perturbed
/// by zero-mean Gaussian noise of variance `sigma2`. One perturbed table
/// serves all channels of this call; each call perturbs afresh from
/// `seed`. Silence converts to silence regardless of the noise.
pub fn resample_noisy_kernel(
    x: &Signal,
    rate_out_hz: u32,
    cfg: &KernelConfig,
    sigma2: f64,
    seed: u64,
) -> Result<Signal> {
    let clean = discretize_kernel(cfg, x.rate_hz(), rate_out_hz)?;
    let noisy = add_kernel_noise(&clean, sigma2, seed)?;
    resample_with_table(x, &noisy)
}

/// Conversion strategy plus the parameters specific to it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    /// Windowed-sinc conversion only.
    Conventional,
    /// Conventional conversion, then additive noise at `snr_db`.
    PostNoise { snr_db: f64 },
    /// Per-tap Gaussian perturbation of the kernel table.
    NoisyKernel { sigma2: f64 },
    /// A trained kernel network evaluated on the tap grid.
    Trainable { params: MlpKernelParams },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Conventional => "conventional",
            Method::PostNoise { .. } => "post_noise",
            Method::NoisyKernel { .. } => "noisy_kernel",
            Method::Trainable { .. } => "trainable",
        }
    }
}

/// A complete description of one conversion: target rate, strategy, kernel
/// shape, and the seed feeding any randomness.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResampleSpec {
    pub rate_out_hz: u32,
    pub method: Method,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Run one conversion described by `spec`.
pub fn resample(x: &Signal, spec: &ResampleSpec) -> Result<Signal> {
    match &spec.method {
        Method::Conventional => resample_conventional(x, spec.rate_out_hz, &spec.kernel),
        Method::PostNoise { snr_db } => {
            resample_post_noise(x, spec.rate_out_hz, &spec.kernel, *snr_db, spec.seed)
        }
        Method::NoisyKernel { sigma2 } => {
            resample_noisy_kernel(x, spec.rate_out_hz, &spec.kernel, *sigma2, spec.seed)
        }
        Method::Trainable { params } => {
            let (y, _) = crate::train::resample_trainable(x, params, spec.rate_out_hz)?;
            Ok(y)
        }
    }
}
