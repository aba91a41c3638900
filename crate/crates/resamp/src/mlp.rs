//! A small feed-forward network that plays the role of a continuous-time
//! interpolation kernel: it maps a tap time `t` (seconds) to an amplitude.
//!
//! Architecture, fixed: 1 input → two hidden layers of 32 units, each a
//! linear map followed by layer normalization and ReLU → 1 linear output.
//! The input is fed as `u = t * input_rate_hz`, i.e. time in input-grid
//! units, spanning ±window_length/2 across the support; with the
//! fan-in-scaled uniform initialization this spreads the first layer's
//! ReLU breakpoints (at `-b/w`, a heavy-tailed ratio) over the whole
//! support, which is what lets training resolve the kernel's tails. The
//! output is hard-truncated to zero outside
//! `|t| <= window_length / (2 * input_rate_hz)` — the same support a
//! default windowed-sinc kernel of that window length occupies.
//!
//! Everything is plain `f64` with handwritten reverse-mode gradients;
//! [`mlp_param_gradient`] is checked against central finite differences in
//! the tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::train::TrainConfig;

/// Layer widths, input to output.
pub const ARCHITECTURE: [usize; 4] = [1, 32, 32, 1];
const HIDDEN: usize = 32;
const LN_EPSILON: f64 = 1e-5;

/// Parameters of the kernel network plus the context needed to evaluate it
/// (input rate for time normalization, window length for the support).
///
/// `weights[l]` is the layer-`l` matrix in row-major `[out][in]` order;
/// `layer_norm_gains`/`layer_norm_offsets` cover the two hidden layers.
/// Mutating fields directly can break [`MlpKernelParams::validate`];
/// construct via [`MlpKernelParams::init`] or deserialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpKernelParams {
    pub architecture: Vec<usize>,
    pub activations: String,
    pub layer_norm: bool,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub layer_norm_gains: Vec<Vec<f64>>,
    pub layer_norm_offsets: Vec<Vec<f64>>,
    pub input_rate_hz: u32,
    pub window_length: u32,
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
}

impl MlpKernelParams {
    /// Fan-in-scaled uniform initialization: every weight and bias of a
    /// layer with `fan_in` inputs is drawn from U(-1/√fan_in, 1/√fan_in);
    /// normalization gains start at 1, offsets at 0.
    pub fn init(input_rate_hz: u32, window_length: u32, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..3 {
            let (n_in, n_out) = (ARCHITECTURE[l], ARCHITECTURE[l + 1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            weights.push((0..n_in * n_out).map(|_| rng.next_range(-bound, bound)).collect());
            biases.push((0..n_out).map(|_| rng.next_range(-bound, bound)).collect());
        }
        MlpKernelParams {
            architecture: ARCHITECTURE.to_vec(),
            activations: "relu".to_string(),
            layer_norm: true,
            weights,
            biases,
            layer_norm_gains: vec![vec![1.0; HIDDEN]; 2],
            layer_norm_offsets: vec![vec![0.0; HIDDEN]; 2],
            input_rate_hz,
            window_length,
            seed,
            train_config: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.architecture != ARCHITECTURE {
            return Err(Error::invalid(format!(
                "unsupported architecture {:?}; this build evaluates {:?}",
                self.architecture, ARCHITECTURE
            )));
        }
        if self.activations != "relu" {
            return Err(Error::invalid("only relu activations are supported"));
        }
        if !self.layer_norm {
            return Err(Error::invalid("layer_norm must be enabled"));
        }
        if self.weights.len() != 3 || self.biases.len() != 3 {
            return Err(Error::invalid("expected 3 weight and 3 bias layers"));
        }
        for l in 0..3 {
            let (n_in, n_out) = (ARCHITECTURE[l], ARCHITECTURE[l + 1]);
            if self.weights[l].len() != n_in * n_out || self.biases[l].len() != n_out {
                return Err(Error::invalid(format!("layer {l} has wrong shape")));
            }
        }
        if self.layer_norm_gains.len() != 2
            || self.layer_norm_offsets.len() != 2
            || self.layer_norm_gains.iter().any(|g| g.len() != HIDDEN)
            || self.layer_norm_offsets.iter().any(|o| o.len() != HIDDEN)
        {
            return Err(Error::invalid("normalization parameters must cover both hidden layers"));
        }
        if self.input_rate_hz == 0 {
            return Err(Error::invalid("input_rate_hz must be positive"));
        }
        if self.window_length == 0 || self.window_length % 2 != 0 {
            return Err(Error::invalid("window_length must be positive and even"));
        }
        let finite = self
            .weights
            .iter()
            .chain(&self.biases)
            .chain(&self.layer_norm_gains)
            .chain(&self.layer_norm_offsets)
            .flatten()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(())
    }

    /// Total number of scalar parameters (1281 for this architecture).
    pub fn n_params(&self) -> usize {
        self.flatten().len()
    }

    /// Half-support in seconds: the kernel is zero for `|t|` beyond this.
    pub fn support_s(&self) -> f64 {
        self.window_length as f64 / (2.0 * self.input_rate_hz as f64)
    }

    /// All parameters as one flat vector, in a fixed documented order:
    /// for each layer, weights then biases, then (hidden layers only) the
    /// normalization gains and offsets of that layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for l in 0..3 {
            flat.extend(&self.weights[l]);
            flat.extend(&self.biases[l]);
            if l < 2 {
                flat.extend(&self.layer_norm_gains[l]);
                flat.extend(&self.layer_norm_offsets[l]);
            }
        }
        flat
    }

    /// Inverse of [`MlpKernelParams::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::invalid("flat parameter vector has wrong length"));
        }
        let mut it = flat.iter();
        let mut take = |dst: &mut [f64]| {
            for d in dst {
                *d = *it.next().expect("length checked");
            }
        };
        for l in 0..3 {
            // Split borrows: weights/biases/gains/offsets are disjoint fields.
            let w = self.weights[l].len();
            take(&mut self.weights[l][..w]);
            let b = self.biases[l].len();
            take(&mut self.biases[l][..b]);
            if l < 2 {
                take(&mut self.layer_norm_gains[l][..]);
                take(&mut self.layer_norm_offsets[l][..]);
            }
        }
        Ok(())
    }
}

/// Intermediate activations of one forward pass, kept for the backward pass.
struct Trace {
    u: f64,
    norm: [Vec<f64>; 2],    // (z - mean) / std
    std: [f64; 2],          // sqrt(var + eps)
    pre_act: [Vec<f64>; 2], // gain * norm + offset, pre-ReLU
    act: [Vec<f64>; 2],     // post-ReLU
}

fn layer_norm(z: &[f64]) -> (Vec<f64>, f64) {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = (var + LN_EPSILON).sqrt();
    (z.iter().map(|v| (v - mean) / std).collect(), std)
}

fn forward_trace(params: &MlpKernelParams, u: f64) -> (f64, Trace) {
    let mut input = vec![u];
    let mut norm: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut std = [0.0; 2];
    let mut pre_act: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut act: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for l in 0..2 {
        let n_in = input.len();
        let zl: Vec<f64> = (0..HIDDEN)
            .map(|i| {
                let row = &params.weights[l][i * n_in..(i + 1) * n_in];
                params.biases[l][i] + row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        let (nl, sl) = layer_norm(&zl);
        let pl: Vec<f64> = (0..HIDDEN)
            .map(|i| params.layer_norm_gains[l][i] * nl[i] + params.layer_norm_offsets[l][i])
            .collect();
        let al: Vec<f64> = pl.iter().map(|v| v.max(0.0)).collect();
        norm[l] = nl;
        std[l] = sl;
        pre_act[l] = pl;
        act[l] = al.clone();
        input = al;
    }
    let out = params.biases[2][0]
        + params.weights[2].iter().zip(&input).map(|(w, x)| w * x).sum::<f64>();
    (out, Trace { u, norm, std, pre_act, act })
}

/// Kernel amplitude at time `t` seconds: the network evaluated on
/// `u = t * input_rate_hz`, zero outside the support.
pub fn mlp_forward(params: &MlpKernelParams, t: f64) -> f64 {
    mlp_forward_units(params, t * params.input_rate_hz as f64)
}

/// [`mlp_forward`] on the normalized abscissa `u = t * input_rate_hz`.
/// Discretization works in this domain directly so that grid positions
/// that are exact in units (e.g. the support endpoints) stay exact.
pub(crate) fn mlp_forward_units(params: &MlpKernelParams, u: f64) -> f64 {
    if u.abs() > params.window_length as f64 / 2.0 {
        return 0.0;
    }
    forward_trace(params, u).0
}

/// Gradient of [`mlp_forward`] at `t` with respect to every parameter, in
/// [`MlpKernelParams::flatten`] order. Zero outside the support (the hard
/// truncation has zero derivative where it applies).
pub fn mlp_param_gradient(params: &MlpKernelParams, t: f64) -> Vec<f64> {
    mlp_param_gradient_units(params, t * params.input_rate_hz as f64)
}

/// [`mlp_param_gradient`] on the normalized abscissa, for the same reason
/// as [`mlp_forward_units`].
pub(crate) fn mlp_param_gradient_units(params: &MlpKernelParams, u: f64) -> Vec<f64> {
    if u.abs() > params.window_length as f64 / 2.0 {
        return vec![0.0; params.n_params()];
    }
    let (_, trace) = forward_trace(params, u);

    // Output layer: out = W3 · a2 + b3.
    let d_w3: Vec<f64> = trace.act[1].clone();
    let d_b3 = 1.0;
    let mut d_act: Vec<f64> = params.weights[2].clone();

    let mut d_weights: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut d_biases: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut d_gains: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut d_offsets: [Vec<f64>; 2] = [Vec::new(), Vec::new()];

    for l in (0..2).rev() {
        // ReLU.
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(&trace.pre_act[l])
            .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
            .collect();
        // Affine part of the normalization: pre = gain * norm + offset.
        d_gains[l] = d_pre.iter().zip(&trace.norm[l]).map(|(d, n)| d * n).collect();
        d_offsets[l] = d_pre.clone();
        let d_norm: Vec<f64> = d_pre
            .iter()
            .zip(&params.layer_norm_gains[l])
            .map(|(d, g)| d * g)
            .collect();
        // Normalization itself: norm = (z - mean) / std, both statistics
        // functions of z.
        let h = HIDDEN as f64;
        let mean_dn = d_norm.iter().sum::<f64>() / h;
        let mean_dn_n =
            d_norm.iter().zip(&trace.norm[l]).map(|(d, n)| d * n).sum::<f64>() / h;
        let d_z: Vec<f64> = (0..HIDDEN)
            .map(|i| (d_norm[i] - mean_dn - trace.norm[l][i] * mean_dn_n) / trace.std[l])
            .collect();
        // Linear layer: z = W · input + b.
        let input: &[f64] = if l == 0 {
            std::slice::from_ref(&trace.u)
        } else {
            &trace.act[l - 1]
        };
        let n_in = input.len();
        let mut dw = vec![0.0; HIDDEN * n_in];
        for i in 0..HIDDEN {
            for (j, x) in input.iter().enumerate() {
                dw[i * n_in + j] = d_z[i] * x;
            }
        }
        d_weights[l] = dw;
        d_biases[l] = d_z.clone();
        if l > 0 {
            let mut da = vec![0.0; n_in];
            for i in 0..HIDDEN {
                for (j, a) in da.iter_mut().enumerate() {
                    *a += params.weights[l][i * n_in + j] * d_z[i];
                }
            }
            d_act = da;
        }
    }

    let mut flat = Vec::with_capacity(params.n_params());
    for l in 0..3 {
        if l < 2 {
            flat.extend(&d_weights[l]);
            flat.extend(&d_biases[l]);
            flat.extend(&d_gains[l]);
            flat.extend(&d_offsets[l]);
        } else {
            flat.extend(&d_w3);
            flat.push(d_b3);
        }
    }
    flat
}
