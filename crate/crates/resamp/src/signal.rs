use crate::error::{Error, Result};

/// A planar multichannel sample buffer tagged with its sample rate.
///
/// Channels are stored separately (not interleaved), all with the same
/// length. Samples are finite `f64` values; full scale is nominally ±1.0
/// but nothing clips — headroom survives processing.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    rate_hz: u32,
    channels: Vec<Vec<f64>>,
}

impl Signal {
    /// Validates rate, channel shape, and sample finiteness.
    pub fn new(rate_hz: u32, channels: Vec<Vec<f64>>) -> Result<Signal> {
        if rate_hz == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if channels.is_empty() {
            return Err(Error::invalid("a signal needs at least one channel"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::invalid("all channels must have equal length"));
        }
        if channels.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::invalid("samples must be finite"));
        }
        Ok(Signal { rate_hz, channels })
    }

    /// Single-channel constructor.
    pub fn mono(rate_hz: u32, samples: Vec<f64>) -> Result<Signal> {
        Signal::new(rate_hz, vec![samples])
    }

    /// Internal constructor for samples already known to be finite.
    pub(crate) fn from_processed(rate_hz: u32, channels: Vec<Vec<f64>>) -> Signal {
        debug_assert!(!channels.is_empty());
        debug_assert!(channels.iter().all(|c| c.len() == channels[0].len()));
        Signal { rate_hz, channels }
    }

    /// All-zero signal of the given shape.
    pub fn silence(rate_hz: u32, channels: usize, len: usize) -> Signal {
        Signal::from_processed(rate_hz, vec![vec![0.0; len]; channels])
    }

    /// Unit-amplitude sine, mono. Handy for fixtures and the CLI demo paths.
    pub fn sine(rate_hz: u32, freq_hz: f64, amplitude: f64, len: usize) -> Signal {
        let w = std::f64::consts::TAU * freq_hz / rate_hz as f64;
        Signal::from_processed(
            rate_hz,
            vec![(0..len).map(|n| amplitude * (w * n as f64).sin()).collect()],
        )
    }

    pub fn rate_hz(&self) -> u32 {
        self.rate_hz
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub(crate) fn channels_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.channels
    }

    /// Sum of squared samples over all channels.
    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|s| s * s).sum()
    }

    /// Mean squared sample value over all channels.
    pub fn mean_power(&self) -> f64 {
        let n = self.len() * self.n_channels();
        if n == 0 {
            0.0
        } else {
            self.energy() / n as f64
        }
    }

    /// Copy of the signal with `n` samples dropped at each end of every
    /// channel; fidelity measurements use this to exclude edge transients.
    pub fn trim_edges(&self, n: usize) -> Result<Signal> {
        if 2 * n >= self.len() {
            return Err(Error::invalid(format!(
                "cannot trim {n} samples per edge from a {}-sample signal",
                self.len()
            )));
        }
        let channels = self
            .channels
            .iter()
            .map(|c| c[n..c.len() - n].to_vec())
            .collect();
        Ok(Signal::from_processed(self.rate_hz, channels))
    }

    pub(crate) fn same_shape(&self, other: &Signal) -> bool {
        self.rate_hz == other.rate_hz
            && self.n_channels() == other.n_channels()
            && self.len() == other.len()
    }
}
