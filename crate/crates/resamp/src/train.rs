//! End-to-end kernel training: convert with the learned kernel, run a
//! frozen downstream separator, convert the estimates back, and optimize
//! the kernel network against the sum of a separation loss and a
//! discrepancy-from-windowed-sinc regularizer.
//!
//! Optimizer: Adam (β₁ 0.9, β₂ 0.999, ε 1e-8), learning rate multiplied by
//! `decay_factor` every two epochs, batch gradients summed then clipped to
//! a global norm, early stop after `early_stop_patience` epochs without a
//! validation improvement, parameters returned from the best epoch. Every
//! random choice flows from `TrainConfig::seed`, so runs are reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{discretize_kernel, tabulate_kernel, KernelConfig, KernelTable};
use crate::mlp::{mlp_forward_units, mlp_param_gradient_units, MlpKernelParams};
use crate::resample::{output_length, resample_adjoint, resample_with_table};
use crate::rng::Rng;
use crate::signal::Signal;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

/// Hyperparameters of [`train_kernel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning-rate multiplier applied every two epochs.
    pub decay_factor: f64,
    /// Global-norm bound on each batch gradient.
    pub grad_clip_norm: f64,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub rate_in_hz: u32,
    pub rate_out_hz: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            decay_factor: 0.98,
            grad_clip_norm: 5.0,
            early_stop_patience: 10,
            max_epochs: 100,
            batch_size: 4,
            seed: 0,
            rate_in_hz: 22050,
            rate_out_hz: 44100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // learning_rate 0 is allowed: it freezes the parameters, which is
        // how the early-stopping logic is exercised in isolation.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::invalid("decay_factor must be in (0, 1]"));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::invalid("grad_clip_norm must be positive"));
        }
        if self.early_stop_patience == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "early_stop_patience, max_epochs, and batch_size must be positive",
            ));
        }
        if self.rate_in_hz == 0 || self.rate_out_hz == 0 {
            return Err(Error::invalid("sample rates must be positive"));
        }
        Ok(())
    }

    /// Learning rate in force during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi(((epoch - 1) / 2) as i32)
    }
}

/// One epoch's summary. Loss columns are sums of squared errors over the
/// epoch's items (training columns accumulate each batch's loss before its
/// update; `val_loss` is measured after the epoch's updates).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub sep_term: f64,
    pub reg_term: f64,
    pub lr: f64,
}

/// Full training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Losses of the initial parameters, before any update (epoch 0).
    pub initial: EpochRecord,
    /// One row per completed training epoch, starting at epoch 1.
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose validation loss was best; parameters returned
    /// by [`train_kernel`] are from this epoch.
    pub best_epoch: usize,
}

impl TrainRecord {
    /// CSV with one row per training epoch (the epoch-0 evaluation is not
    /// included; it lives in [`TrainRecord::initial`]).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,sep_term,reg_term,lr\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.sep_term, r.reg_term, r.lr
            ));
        }
        out
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// One training example: a mixture and its ground-truth sources, all at
/// the input rate.
#[derive(Clone, Debug)]
pub struct DatasetItem {
    pub mixture: Signal,
    pub sources: Vec<Signal>,
}

/// A frozen downstream model: maps a mixture at its rate to one estimate
/// per source, and can push a loss gradient back through itself. Taking
/// `&self` everywhere keeps the model's parameters out of reach of the
/// training loop.
pub trait Separator {
    fn rate_hz(&self) -> u32;
    fn n_sources(&self) -> usize;
    fn separate(&self, mixture: &Signal) -> Result<Vec<Signal>>;
    /// Gradient of a scalar loss with respect to `mixture`, given the
    /// gradients with respect to each of [`Separator::separate`]'s outputs.
    fn input_gradient(&self, mixture: &Signal, upstream: &[Signal]) -> Result<Signal>;
}

/// The separator that returns its input: turns the training loop into
/// pure kernel regression (the separation term compares round trips, so
/// both loss terms vanish exactly when the learned kernel reproduces the
/// windowed-sinc kernel).
pub struct IdentitySeparator {
    rate_hz: u32,
}

impl IdentitySeparator {
    pub fn new(rate_hz: u32) -> Self {
        IdentitySeparator { rate_hz }
    }
}

impl Separator for IdentitySeparator {
    fn rate_hz(&self) -> u32 {
        self.rate_hz
    }

    fn n_sources(&self) -> usize {
        1
    }

    fn separate(&self, mixture: &Signal) -> Result<Vec<Signal>> {
        Ok(vec![mixture.clone()])
    }

    fn input_gradient(&self, mixture: &Signal, upstream: &[Signal]) -> Result<Signal> {
        if upstream.len() != 1 || !upstream[0].same_shape(mixture) {
            return Err(Error::invalid("identity gradient needs one mixture-shaped signal"));
        }
        Ok(upstream[0].clone())
    }
}

/// Sample the kernel network on the same polyphase grid a windowed-sinc
/// table uses, producing a table interchangeable with any other
/// [`KernelTable`].
pub fn export_kernel(params: &MlpKernelParams, rate_out_hz: u32) -> Result<KernelTable> {
    params.validate()?;
    if rate_out_hz == 0 {
        return Err(Error::invalid("rate_out_hz must be positive"));
    }
    let half = params.window_length as i64 / 2;
    let rate_in = params.input_rate_hz as f64;
    // Feed the network the normalized position num/(den/rate_in) = num/p:
    // one rounding, so the support endpoints land exactly on +-L/2 and the
    // hard truncation cannot flicker with the rate pair.
    Ok(tabulate_kernel(params.input_rate_hz, rate_out_hz, half, |num, den| {
        mlp_forward_units(params, num as f64 / (den / rate_in))
    }))
}

/// What the backward pass needs from a forward conversion: the sampled
/// table (every (output, input, tap-time) triple is recoverable from its
/// phase structure) and the input length.
pub struct BackpropCache {
    table: KernelTable,
    input_len: usize,
}

impl BackpropCache {
    pub fn table(&self) -> &KernelTable {
        &self.table
    }
}

/// Convert `x` with the learned kernel, keeping the cache for [`backward`].
pub fn resample_trainable(
    x: &Signal,
    params: &MlpKernelParams,
    rate_out_hz: u32,
) -> Result<(Signal, BackpropCache)> {
    if x.rate_hz() != params.input_rate_hz {
        return Err(Error::RateMismatch {
            signal_hz: x.rate_hz(),
            expected_hz: params.input_rate_hz,
        });
    }
    let table = export_kernel(params, rate_out_hz)?;
    let y = resample_with_table(x, &table)?;
    Ok((y, BackpropCache { table, input_len: x.len() }))
}

/// Training objective: sum of squared errors between source estimates and
/// targets, plus the squared discrepancy between the learned-kernel output
/// and the windowed-sinc output. Plain sums — no normalization — so
/// `total = separation + regularizer` holds exactly.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub separation: f64,
    pub regularizer: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, other: LossBreakdown) {
        self.total += other.total;
        self.separation += other.separation;
        self.regularizer += other.regularizer;
    }
}

fn sum_sq_diff(a: &Signal, b: &Signal) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid("loss terms need identically shaped signals"));
    }
    Ok(a.channels()
        .iter()
        .zip(b.channels())
        .flat_map(|(x, y)| x.iter().zip(y))
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

pub fn loss(
    estimates: &[Signal],
    targets: &[Signal],
    y_trained: &Signal,
    y_winsinc: &Signal,
) -> Result<LossBreakdown> {
    if estimates.len() != targets.len() {
        return Err(Error::invalid("one estimate per target source required"));
    }
    let mut separation = 0.0;
    for (e, t) in estimates.iter().zip(targets) {
        separation += sum_sq_diff(e, t)?;
    }
    let regularizer = sum_sq_diff(y_trained, y_winsinc)?;
    Ok(LossBreakdown { total: separation + regularizer, separation, regularizer })
}

/// Chain rule from a gradient at the output rate back to the kernel
/// network's parameters: first accumulate, for every phase tap, the sum of
/// `upstream[m] * x[n]` over the (m, n) pairs that tap served; then weight
/// each grid point's parameter gradient by that sum.
pub fn backward(
    cache: &BackpropCache,
    upstream: &Signal,
    x: &Signal,
    params: &MlpKernelParams,
) -> Result<Vec<f64>> {
    let table = &cache.table;
    let expected =
        output_length(cache.input_len, table.source_rate_hz, table.target_rate_hz)?;
    if x.rate_hz() != table.source_rate_hz
        || x.len() != cache.input_len
        || upstream.rate_hz() != table.target_rate_hz
        || upstream.len() != expected
        || upstream.n_channels() != x.n_channels()
    {
        return Err(Error::invalid("backward called with signals not matching its cache"));
    }
    let (p, q) = table.ratio();
    let k = table.taps_per_phase as usize;
    let center = table.center_offset as i64;
    let mut d_tap = vec![0.0; table.taps.len()];
    for (u, xs) in upstream.channels().iter().zip(x.channels()) {
        let n = xs.len() as i64;
        for (m, um) in u.iter().enumerate() {
            let m = m as i64;
            let phase = (m % p) as usize;
            let n0 = (m / p) * q + (m % p) * q / p - center;
            for j in 0..k {
                let idx = n0 + j as i64;
                if idx >= 0 && idx < n {
                    d_tap[phase * k + j] += um * xs[idx as usize];
                }
            }
        }
    }
    let mut grad = vec![0.0; params.n_params()];
    for phase in 0..table.phases as usize {
        for j in 0..k {
            let weight = d_tap[phase * k + j];
            if weight != 0.0 {
                let g = mlp_param_gradient_units(params, table.tap_units(phase, j));
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += weight * gi;
                }
            }
        }
    }
    Ok(grad)
}

/// Scale `grad` down to `max_norm` if its Euclidean norm exceeds it.
/// Returns the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
}

fn zip_signals(a: &Signal, b: &Signal, f: impl Fn(f64, f64) -> f64) -> Signal {
    debug_assert!(a.same_shape(b));
    let channels = a
        .channels()
        .iter()
        .zip(b.channels())
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| f(*u, *v)).collect())
        .collect();
    Signal::from_processed(a.rate_hz(), channels)
}

fn truncate_signal(s: &Signal, len: usize) -> Signal {
    debug_assert!(len <= s.len());
    Signal::from_processed(s.rate_hz(), s.channels().iter().map(|c| c[..len].to_vec()).collect())
}

/// One item through the full pipeline. Returns the loss and, when
/// `with_grad`, the parameter gradient. `y_winsinc` is the precomputed
/// windowed-sinc conversion of the item's mixture. Back-conversion can be
/// a sample shorter than the target at non-integer ratios; targets are
/// truncated to match.
fn item_pass(
    item: &DatasetItem,
    y_winsinc: &Signal,
    frozen: &dyn Separator,
    back_table: &KernelTable,
    params: &MlpKernelParams,
    rate_out_hz: u32,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    let (y_tr, cache) = resample_trainable(&item.mixture, params, rate_out_hz)?;
    let est_hi = frozen.separate(&y_tr)?;
    if est_hi.len() != item.sources.len() {
        return Err(Error::invalid("separator source count does not match dataset"));
    }
    let est_lo = est_hi
        .iter()
        .map(|e| resample_with_table(e, back_table))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Signal> = item
        .sources
        .iter()
        .zip(&est_lo)
        .map(|(s, e)| truncate_signal(s, e.len()))
        .collect();
    let lb = loss(&est_lo, &targets, &y_tr, y_winsinc)?;
    if !with_grad {
        return Ok((lb, None));
    }
    let d_est_hi = est_lo
        .iter()
        .zip(&targets)
        .map(|(e, t)| {
            let d_lo = zip_signals(e, t, |a, b| 2.0 * (a - b));
            resample_adjoint(&d_lo, back_table, y_tr.len())
        })
        .collect::<Result<Vec<_>>>()?;
    let through_model = frozen.input_gradient(&y_tr, &d_est_hi)?;
    let d_y = zip_signals(
        &through_model,
        &zip_signals(&y_tr, y_winsinc, |a, b| 2.0 * (a - b)),
        |a, b| a + b,
    );
    let grad = backward(&cache, &d_y, &item.mixture, params)?;
    Ok((lb, Some(grad)))
}

fn evaluate(
    items: &[DatasetItem],
    y_winsinc: &[Signal],
    frozen: &dyn Separator,
    back_table: &KernelTable,
    params: &MlpKernelParams,
    rate_out_hz: u32,
) -> Result<LossBreakdown> {
    let mut sum = LossBreakdown::default();
    for (item, target) in items.iter().zip(y_winsinc) {
        let (lb, _) = item_pass(item, target, frozen, back_table, params, rate_out_hz, false)?;
        sum.accumulate(lb);
    }
    Ok(sum)
}

/// Optimize the kernel network through `frozen`, returning the parameters
/// from the epoch with the best validation loss plus the full history.
pub fn train_kernel(
    train_items: &[DatasetItem],
    val_items: &[DatasetItem],
    frozen: &dyn Separator,
    cfg: &TrainConfig,
    init: &MlpKernelParams,
) -> Result<(MlpKernelParams, TrainRecord)> {
    cfg.validate()?;
    init.validate()?;
    if train_items.is_empty() || val_items.is_empty() {
        return Err(Error::invalid("training and validation splits must both be non-empty"));
    }
    if init.input_rate_hz != cfg.rate_in_hz {
        return Err(Error::RateMismatch {
            signal_hz: init.input_rate_hz,
            expected_hz: cfg.rate_in_hz,
        });
    }
    if frozen.rate_hz() != cfg.rate_out_hz {
        return Err(Error::RateMismatch {
            signal_hz: frozen.rate_hz(),
            expected_hz: cfg.rate_out_hz,
        });
    }
    for item in train_items.iter().chain(val_items) {
        if item.mixture.rate_hz() != cfg.rate_in_hz {
            return Err(Error::RateMismatch {
                signal_hz: item.mixture.rate_hz(),
                expected_hz: cfg.rate_in_hz,
            });
        }
        if item.sources.len() != frozen.n_sources() {
            return Err(Error::invalid("dataset source count does not match the separator"));
        }
    }

    let kcfg = KernelConfig::default();
    let fwd_table = discretize_kernel(&kcfg, cfg.rate_in_hz, cfg.rate_out_hz)?;
    let back_table = discretize_kernel(&kcfg, cfg.rate_out_hz, cfg.rate_in_hz)?;
    let winsinc =
        |items: &[DatasetItem]| -> Result<Vec<Signal>> {
            items.iter().map(|i| resample_with_table(&i.mixture, &fwd_table)).collect()
        };
    let train_targets = winsinc(train_items)?;
    let val_targets = winsinc(val_items)?;

    let mut params = init.clone();
    params.train_config = Some(cfg.clone());
    let mut flat = params.flatten();
    let mut adam = Adam::new(flat.len());
    let mut rng = Rng::split(cfg.seed, "train-shuffle");

    let eval_epoch = |params: &MlpKernelParams, epoch: usize| -> Result<(LossBreakdown, f64)> {
        let tr = evaluate(train_items, &train_targets, frozen, &back_table, params, cfg.rate_out_hz)?;
        let va = evaluate(val_items, &val_targets, frozen, &back_table, params, cfg.rate_out_hz)?;
        if !tr.total.is_finite() || !va.total.is_finite() {
            return Err(Error::NonFinite { epoch, what: "evaluation loss".into() });
        }
        Ok((tr, va.total))
    };

    let (init_train, init_val) = eval_epoch(&params, 0)?;
    let initial = EpochRecord {
        epoch: 0,
        train_loss: init_train.total,
        val_loss: init_val,
        sep_term: init_train.separation,
        reg_term: init_train.regularizer,
        lr: cfg.learning_rate,
    };

    let mut epochs = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_flat = flat.clone();
    let mut best_epoch = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        rng.shuffle(&mut order);
        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; flat.len()];
            for &ix in batch {
                let (lb, g) = item_pass(
                    &train_items[ix],
                    &train_targets[ix],
                    frozen,
                    &back_table,
                    &params,
                    cfg.rate_out_hz,
                    true,
                )?;
                if !lb.total.is_finite() {
                    return Err(Error::NonFinite { epoch, what: "training loss".into() });
                }
                epoch_loss.accumulate(lb);
                for (acc, gi) in grad.iter_mut().zip(&g.expect("requested gradient")) {
                    *acc += gi;
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { epoch, what: "batch gradient".into() });
            }
            clip_global_norm(&mut grad, cfg.grad_clip_norm);
            adam.step(&mut flat, &grad, lr);
            params.assign_flat(&flat)?;
        }
        let val = evaluate(val_items, &val_targets, frozen, &back_table, &params, cfg.rate_out_hz)?;
        if !val.total.is_finite() {
            return Err(Error::NonFinite { epoch, what: "validation loss".into() });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss.total,
            val_loss: val.total,
            sep_term: epoch_loss.separation,
            reg_term: epoch_loss.regularizer,
            lr,
        });
        if val.total < best_val {
            best_val = val.total;
            best_flat = flat.clone();
            best_epoch = epoch;
        }
        if epoch - best_epoch >= cfg.early_stop_patience {
            break;
        }
    }
    params.assign_flat(&best_flat)?;
    Ok((params, TrainRecord { initial, epochs, best_epoch }))
}

/// Dataset for regularizer-only training: each mixture's "ground truth" is
/// its own windowed-sinc round trip, so with an [`IdentitySeparator`] the
/// whole loss measures distance from windowed-sinc behavior.
pub fn regularizer_dataset(mixtures: &[Signal], rate_out_hz: u32) -> Result<Vec<DatasetItem>> {
    let kcfg = KernelConfig::default();
    mixtures
        .iter()
        .map(|m| {
            let up = crate::resample::resample_conventional(m, rate_out_hz, &kcfg)?;
            let back = crate::resample::resample_conventional(&up, m.rate_hz(), &kcfg)?;
            Ok(DatasetItem {
                mixture: m.clone(),
                sources: vec![truncate_signal(&back, output_len_back(m, rate_out_hz)?)],
            })
        })
        .collect()
}

fn output_len_back(m: &Signal, rate_out_hz: u32) -> Result<usize> {
    let up = output_length(m.len(), m.rate_hz(), rate_out_hz)?;
    output_length(up, rate_out_hz, m.rate_hz())
}

/// Regularizer-only training of a fresh or given kernel network: pulls the
/// network toward windowed-sinc behavior on the given mixtures. The last
/// mixture is held out for validation when there are at least two.
pub fn pretrain_kernel(
    mixtures: &[Signal],
    cfg: &TrainConfig,
    init: &MlpKernelParams,
) -> Result<(MlpKernelParams, TrainRecord)> {
    if mixtures.is_empty() {
        return Err(Error::invalid("pretraining needs at least one mixture"));
    }
    let items = regularizer_dataset(mixtures, cfg.rate_out_hz)?;
    let id = IdentitySeparator::new(cfg.rate_out_hz);
    if items.len() >= 2 {
        let (train, val) = items.split_at(items.len() - 1);
        train_kernel(train, val, &id, cfg, init)
    } else {
        train_kernel(&items, &items, &id, cfg, init)
    }
}
