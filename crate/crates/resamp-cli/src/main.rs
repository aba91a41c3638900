//! Command-line front end for the resampling toolkit: file conversion,
//! kernel inspection, kernel-network training, and the method-comparison
//! experiment. Every command is deterministic given `--seed`; all
//! randomness flows from that one root seed, split per component with
//! fixed labels.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use resamp::analysis::band_energy;
use resamp::experiment::{run_full_experiment, ExperimentConfig};
use resamp::kernel::{add_kernel_noise, discretize_kernel, kernel_frequency_response};
use resamp::mlp::MlpKernelParams;
use resamp::proxy::{build_proxy, synth_dataset};
use resamp::resample::resample;
use resamp::rng::Rng;
use resamp::train::{export_kernel, pretrain_kernel, train_kernel, TrainConfig};
use resamp::wav::{read_wav, write_wav};
use resamp::{KernelConfig, KernelTable, Method, ResampleSpec, Signal};

#[derive(Parser)]
#[command(
    name = "resamp",
    version,
    about = "Sample-rate conversion toolkit with controllable high-frequency behavior",
    long_about = "Convert audio between sample rates with a conventional windowed-sinc \
kernel (window length 48, Kaiser alpha 4.1 by default) or with one of the \
noise-injecting strategies: post-conversion additive noise (SNR 20 dB by \
default), a noise-perturbed kernel (tap variance 1e-6 by default), or a \
trained kernel network. Also inspects kernel tables, trains the kernel \
network, and reproduces the full method comparison. Seeded commands are \
byte-reproducible."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a WAV file to another sample rate
    Resample(ResampleArgs),
    /// Export a kernel table (JSON) and its frequency response (CSV)
    Kernel(KernelArgs),
    /// Train the kernel network; write parameters (JSON) and history (CSV)
    Train(TrainArgs),
    /// Run the method-comparison experiment; write per-source scores (CSV)
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodName {
    /// Windowed-sinc conversion only
    Conventional,
    /// Conventional conversion, then additive noise at --snr-db
    PostNoise,
    /// Conversion through a kernel with --sigma2 Gaussian tap noise
    NoisyKernel,
    /// Conversion through a trained kernel network (--params)
    Trainable,
}

/// Kernel shape flags shared by the commands that build tables.
#[derive(Args)]
struct KernelShape {
    /// Window length in input-rate periods (even)
    #[arg(long, default_value_t = 48)]
    window_length: u32,
    /// Kaiser window shape parameter
    #[arg(long, default_value_t = 4.1)]
    kaiser_alpha: f64,
}

impl KernelShape {
    fn config(&self) -> KernelConfig {
        KernelConfig {
            window_length: self.window_length,
            kaiser_alpha: self.kaiser_alpha,
            ..KernelConfig::default()
        }
    }
}

#[derive(Args)]
struct ResampleArgs {
    /// Input WAV (PCM 16/24-bit or IEEE float32, mono or stereo)
    input: PathBuf,
    /// Output WAV, written in the input's sample format
    output: PathBuf,
    /// Target sample rate in Hz
    #[arg(long)]
    rate: u32,
    /// Conversion strategy
    #[arg(long, value_enum, default_value_t = MethodName::Conventional)]
    method: MethodName,
    /// Signal-to-noise ratio in dB for --method post-noise
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
    /// Per-tap noise variance for --method noisy-kernel
    #[arg(long, default_value_t = 1e-6)]
    sigma2: f64,
    /// Trained kernel parameters JSON for --method trainable
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    kernel: KernelShape,
    /// Root seed for every random draw in this command
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct KernelArgs {
    /// Source sample rate in Hz
    #[arg(long)]
    rate_in: u32,
    /// Target sample rate in Hz
    #[arg(long)]
    rate_out: u32,
    /// Table to export (post-noise has no kernel of its own)
    #[arg(long, value_enum, default_value_t = MethodName::Conventional)]
    method: MethodName,
    /// Per-tap noise variance for --method noisy-kernel
    #[arg(long, default_value_t = 1e-6)]
    sigma2: f64,
    /// Trained kernel parameters JSON for --method trainable
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    kernel: KernelShape,
    /// Write the tap table as JSON to this path
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Write the frequency response as CSV (freq_hz,magnitude_db)
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// FFT size for the response (power of two; 0 picks one automatically)
    #[arg(long, default_value_t = 0)]
    n_fft: usize,
    /// Root seed for every random draw in this command
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config; command-line flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the trained parameters (JSON)
    #[arg(long)]
    out_params: Option<PathBuf>,
    /// Where to write the per-epoch history (CSV)
    #[arg(long)]
    out_record: Option<PathBuf>,
    /// Train the separation term too, or only the regularizer
    #[arg(long, value_enum)]
    objective: Option<Objective>,
    /// Source sample rate in Hz
    #[arg(long)]
    rate_in: Option<u32>,
    /// Target sample rate in Hz
    #[arg(long)]
    rate_out: Option<u32>,
    /// Initial Adam learning rate
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Learning-rate multiplier applied every two epochs
    #[arg(long)]
    decay_factor: Option<f64>,
    /// Global-norm bound on each batch gradient
    #[arg(long)]
    grad_clip_norm: Option<f64>,
    /// Epochs without validation improvement before stopping
    #[arg(long)]
    early_stop_patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Synthetic training items
    #[arg(long)]
    n_items: Option<usize>,
    /// Synthetic validation items
    #[arg(long)]
    n_val_items: Option<usize>,
    /// Sources per synthetic mixture
    #[arg(long)]
    n_sources: Option<usize>,
    /// Length of each synthetic item in seconds
    #[arg(long)]
    duration_s: Option<f64>,
    /// Root seed for every random draw in this command
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config; command-line flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the per-method, per-source score table (CSV)
    #[arg(long)]
    out_csv: PathBuf,
    /// Where to write the trained kernel parameters, if a kernel is trained
    #[arg(long)]
    out_params: Option<PathBuf>,
    /// Low (input) sample rate in Hz
    #[arg(long)]
    rate_low: Option<u32>,
    /// Native (trained) sample rate in Hz
    #[arg(long)]
    rate_high: Option<u32>,
    /// Items per dataset
    #[arg(long)]
    n_items: Option<usize>,
    /// Sources per mixture
    #[arg(long)]
    n_sources: Option<usize>,
    /// Length of each item in seconds
    #[arg(long)]
    duration_s: Option<f64>,
    /// Skip training the kernel network (drops the trainable rows)
    #[arg(long)]
    no_train: bool,
    /// Root seed for every random draw in this command
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Objective {
    /// Separation loss through the frozen proxy plus the regularizer
    Full,
    /// Regularizer only: pull the network toward windowed-sinc behavior
    Regularizer,
}

/// Config-file form of the train command. Flags override these values.
#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainJob {
    train: TrainConfig,
    objective: Objective,
    n_items: usize,
    n_val_items: usize,
    n_sources: usize,
    duration_s: f64,
}

impl Default for TrainJob {
    fn default() -> Self {
        TrainJob {
            train: TrainConfig::default(),
            objective: Objective::Full,
            n_items: 4,
            n_val_items: 2,
            n_sources: 2,
            duration_s: 0.5,
        }
    }
}

/// Files created by the running command. Anything not committed is removed
/// when the command fails, so failures never leave partial outputs behind.
struct Outputs {
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn new() -> Self {
        Outputs { written: Vec::new(), committed: false }
    }

    /// Write atomically: to a sibling temp file, then rename into place.
    fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        let tmp = tmp_path(path);
        fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
        if let Err(e) = fs::rename(&tmp, path) {
            let _ = fs::remove_file(&tmp);
            return Err(e).with_context(|| format!("renaming into {}", path.display()));
        }
        self.written.push(path.to_path_buf());
        Ok(())
    }

    /// Write through a callback that creates the file itself (WAV writer).
    fn write_with(&mut self, path: &Path, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let tmp = tmp_path(path);
        if let Err(e) = f(&tmp) {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        if let Err(e) = fs::rename(&tmp, path) {
            let _ = fs::remove_file(&tmp);
            return Err(e).with_context(|| format!("renaming into {}", path.display()));
        }
        self.written.push(path.to_path_buf());
        Ok(())
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".part");
    path.with_file_name(name)
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {} {}", what, path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {} {}", what, path.display()))
}

fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn load_params(path: Option<&PathBuf>, method: &str) -> Result<MlpKernelParams> {
    let path = path.ok_or_else(|| anyhow!("--method {method} requires --params <FILE>"))?;
    let params: MlpKernelParams = load_json(path, "kernel parameters")?;
    params.validate().context("kernel parameters failed validation")?;
    Ok(params)
}

fn run_resample(args: ResampleArgs) -> Result<()> {
    let (x, format) = read_wav(&args.input)?;
    let method = match args.method {
        MethodName::Conventional => Method::Conventional,
        MethodName::PostNoise => Method::PostNoise { snr_db: args.snr_db },
        MethodName::NoisyKernel => Method::NoisyKernel { sigma2: args.sigma2 },
        MethodName::Trainable => {
            Method::Trainable { params: load_params(args.params.as_ref(), "trainable")? }
        }
    };
    let spec = ResampleSpec {
        rate_out_hz: args.rate,
        method,
        kernel: args.kernel.config(),
        seed: Rng::split_seed(args.seed, "resample"),
    };
    let y = resample(&x, &spec)?;

    let mut outputs = Outputs::new();
    outputs.write_with(&args.output, |tmp| Ok(write_wav(tmp, &y, format)?))?;
    outputs.commit();

    println!(
        "input:  {} — {} channel(s), {} samples at {} Hz",
        args.input.display(),
        x.n_channels(),
        x.len(),
        x.rate_hz()
    );
    println!(
        "output: {} — {} samples at {} Hz",
        args.output.display(),
        y.len(),
        y.rate_hz()
    );
    let shared_nyq = f64::from(x.rate_hz().min(y.rate_hz())) / 2.0;
    let out_nyq = f64::from(y.rate_hz()) / 2.0;
    println!("band energy [0, {shared_nyq} Hz): {:.6e}", band_energy(&y, 0.0, shared_nyq)?);
    if out_nyq > shared_nyq {
        println!(
            "band energy [{shared_nyq}, {out_nyq} Hz): {:.6e}",
            band_energy(&y, shared_nyq, out_nyq)?
        );
    }
    Ok(())
}

fn build_table(args: &KernelArgs) -> Result<KernelTable> {
    let cfg = args.kernel.config();
    match args.method {
        MethodName::Conventional => Ok(discretize_kernel(&cfg, args.rate_in, args.rate_out)?),
        MethodName::NoisyKernel => {
            let clean = discretize_kernel(&cfg, args.rate_in, args.rate_out)?;
            Ok(add_kernel_noise(&clean, args.sigma2, Rng::split_seed(args.seed, "kernel-noise"))?)
        }
        MethodName::Trainable => {
            let params = load_params(args.params.as_ref(), "trainable")?;
            if params.input_rate_hz != args.rate_in {
                bail!(
                    "kernel parameters were trained for {} Hz input, not {} Hz",
                    params.input_rate_hz,
                    args.rate_in
                );
            }
            Ok(export_kernel(&params, args.rate_out)?)
        }
        MethodName::PostNoise => {
            bail!("post-noise perturbs the signal, not the kernel; export conventional instead")
        }
    }
}

fn run_kernel(args: KernelArgs) -> Result<()> {
    if args.out_json.is_none() && args.out_csv.is_none() {
        bail!("nothing to do: pass --out-json and/or --out-csv");
    }
    let table = build_table(&args)?;
    let mut outputs = Outputs::new();
    if let Some(path) = &args.out_json {
        outputs.write_bytes(path, &to_json_bytes(&table)?)?;
    }
    if let Some(path) = &args.out_csv {
        let n_fft = if args.n_fft == 0 {
            (2 * table.taps.len()).next_power_of_two()
        } else {
            args.n_fft
        };
        let response = kernel_frequency_response(&table, n_fft)?;
        let mut csv = String::from("freq_hz,magnitude_db\n");
        for (f, m) in response.freqs_hz.iter().zip(&response.magnitude_db) {
            csv.push_str(&format!("{f},{m}\n"));
        }
        outputs.write_bytes(path, csv.as_bytes())?;
    }
    outputs.commit();
    println!(
        "kernel: {} -> {} Hz, {} phase(s) x {} taps (center offset {})",
        table.source_rate_hz,
        table.target_rate_hz,
        table.phases,
        table.taps_per_phase,
        table.center_offset
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut job: TrainJob = match &args.config {
        Some(path) => load_json(path, "train config")?,
        None => TrainJob::default(),
    };
    if let Some(v) = args.objective {
        job.objective = v;
    }
    if let Some(v) = args.rate_in {
        job.train.rate_in_hz = v;
    }
    if let Some(v) = args.rate_out {
        job.train.rate_out_hz = v;
    }
    if let Some(v) = args.learning_rate {
        job.train.learning_rate = v;
    }
    if let Some(v) = args.decay_factor {
        job.train.decay_factor = v;
    }
    if let Some(v) = args.grad_clip_norm {
        job.train.grad_clip_norm = v;
    }
    if let Some(v) = args.early_stop_patience {
        job.train.early_stop_patience = v;
    }
    if let Some(v) = args.max_epochs {
        job.train.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        job.train.batch_size = v;
    }
    if let Some(v) = args.n_items {
        job.n_items = v;
    }
    if let Some(v) = args.n_val_items {
        job.n_val_items = v;
    }
    if let Some(v) = args.n_sources {
        job.n_sources = v;
    }
    if let Some(v) = args.duration_s {
        job.duration_s = v;
    }
    if let Some(v) = args.seed {
        job.train.seed = v;
    }
    job.train.validate()?;
    if job.n_items == 0 || job.n_val_items == 0 {
        bail!("n_items and n_val_items must be positive");
    }

    let seed = job.train.seed;
    let proxy = build_proxy(job.train.rate_out_hz, job.n_sources, Rng::split_seed(seed, "proxy"))?;
    let data = synth_dataset(
        &proxy,
        job.train.rate_in_hz,
        job.n_items + job.n_val_items,
        job.duration_s,
        Rng::split_seed(seed, "train-items"),
    )?;
    let init = MlpKernelParams::init(
        job.train.rate_in_hz,
        KernelConfig::default().window_length,
        Rng::split_seed(seed, "init"),
    );

    let (params, record) = match job.objective {
        Objective::Full => {
            let (train_items, val_items) = data.items.split_at(job.n_items);
            train_kernel(train_items, val_items, &proxy, &job.train, &init)?
        }
        Objective::Regularizer => {
            let mixtures: Vec<Signal> =
                data.items.iter().map(|item| item.mixture.clone()).collect();
            pretrain_kernel(&mixtures, &job.train, &init)?
        }
    };

    let mut outputs = Outputs::new();
    if let Some(path) = &args.out_params {
        outputs.write_bytes(path, &to_json_bytes(&params)?)?;
    }
    if let Some(path) = &args.out_record {
        outputs.write_bytes(path, record.to_csv().as_bytes())?;
    }
    outputs.commit();

    let best = record.best();
    println!(
        "trained {} epoch(s); best validation loss {:.6e} at epoch {}",
        record.epochs.len(),
        best.val_loss,
        record.best_epoch
    );
    Ok(())
}

fn run_experiment(args: ExperimentArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(path) => load_json(path, "experiment config")?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.rate_low {
        cfg.input_rate_hz = v;
    }
    if let Some(v) = args.rate_high {
        cfg.trained_rate_hz = v;
    }
    if let Some(v) = args.n_items {
        cfg.n_items = v;
    }
    if let Some(v) = args.n_sources {
        cfg.n_sources = v;
    }
    if let Some(v) = args.duration_s {
        cfg.duration_s = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.no_train {
        cfg.train_trainable = None;
    }
    cfg.validate()?;

    let report = run_full_experiment(&cfg)?;

    let mut outputs = Outputs::new();
    outputs.write_bytes(&args.out_csv, report.to_csv().as_bytes())?;
    if let Some(path) = &args.out_params {
        let params = report
            .trained_params
            .as_ref()
            .ok_or_else(|| anyhow!("--out-params given but no kernel was trained"))?;
        outputs.write_bytes(path, &to_json_bytes(params)?)?;
    }
    outputs.commit();

    let mut seen: Vec<&str> = Vec::new();
    for row in &report.rows {
        if !seen.contains(&row.method.as_str()) {
            seen.push(&row.method);
        }
    }
    for method in seen {
        if let Some(mean) = report.method_mean(method) {
            println!("{method}: mean SDR {mean:.2} dB across sources");
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Resample(args) => run_resample(args),
        Command::Kernel(args) => run_kernel(args),
        Command::Train(args) => run_train(args),
        Command::Experiment(args) => run_experiment(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
