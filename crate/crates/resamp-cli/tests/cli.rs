//! End-to-end tests of the `resamp` binary: every test runs the real
//! executable against scratch files and checks exit codes, outputs, and
//! the reproducibility contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use resamp::analysis::band_energy;
use resamp::wav::{read_wav, write_wav, WavFormat};
use resamp::Signal;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resamp"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn assert_fails(out: &Output) {
    assert!(!out.status.success(), "command unexpectedly succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error"), "no error message on stderr: {stderr}");
}

fn sine_wav(path: &Path, rate_hz: u32, freq_hz: f64, n: usize, format: WavFormat) {
    let w = std::f64::consts::TAU * freq_hz / rate_hz as f64;
    let samples: Vec<f64> = (0..n).map(|i| 0.5 * (w * i as f64).sin()).collect();
    let x = Signal::mono(rate_hz, samples).unwrap();
    write_wav(path, &x, format).unwrap();
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &PathBuf) -> &str {
    p.to_str().unwrap()
}

/// Parse a `freq_hz,magnitude_db` CSV into (freq, db) pairs.
fn parse_response_csv(path: &Path) -> Vec<(f64, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("freq_hz,magnitude_db"));
    lines
        .map(|l| {
            let (f, m) = l.split_once(',').unwrap();
            (f.parse().unwrap(), m.parse().unwrap())
        })
        .collect()
}

fn mean_db_in(rows: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let vals: Vec<f64> =
        rows.iter().filter(|(f, _)| *f >= lo && *f <= hi).map(|(_, m)| *m).collect();
    assert!(!vals.is_empty(), "no bins in [{lo}, {hi}]");
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[test]
fn help_documents_the_defaults() {
    let out = run(&["--help"]);
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["window length 48", "Kaiser alpha 4.1", "SNR 20 dB", "1e-6"] {
        assert!(text.contains(needle), "--help does not mention {needle:?}:\n{text}");
    }
}

#[test]
fn resample_upsamples_to_the_contracted_length() {
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "in.wav");
    let output = path(&dir, "out.wav");
    sine_wav(&input, 8000, 1000.0, 4000, WavFormat::Pcm16);

    let out = run(&["resample", s(&input), s(&output), "--rate", "44100"]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("samples at 44100 Hz"), "stdout: {stdout}");
    assert!(stdout.contains("band energy"), "stdout: {stdout}");

    let (y, format) = read_wav(&output).unwrap();
    assert_eq!(format, WavFormat::Pcm16);
    assert_eq!(y.rate_hz(), 44100);
    assert_eq!(y.len(), 4000 * 44100 / 8000);
}

#[test]
fn same_rate_conventional_output_is_bit_identical() {
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "in.wav");
    let output = path(&dir, "out.wav");
    sine_wav(&input, 8000, 1000.0, 2048, WavFormat::Float32);

    assert_ok(&run(&["resample", s(&input), s(&output), "--rate", "8000"]));
    assert_eq!(
        std::fs::read(&input).unwrap(),
        std::fs::read(&output).unwrap(),
        "same-rate conversion must reproduce the float32 file byte for byte"
    );
}

#[test]
fn noisy_kernel_differs_from_conventional_only_above_the_input_nyquist() {
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "in.wav");
    let conv = path(&dir, "conv.wav");
    let noisy = path(&dir, "noisy.wav");
    sine_wav(&input, 8000, 1000.0, 8000, WavFormat::Float32);

    assert_ok(&run(&["resample", s(&input), s(&conv), "--rate", "44100"]));
    assert_ok(&run(&[
        "resample",
        s(&input),
        s(&noisy),
        "--rate",
        "44100",
        "--method",
        "noisy-kernel",
    ]));

    let (yc, _) = read_wav(&conv).unwrap();
    let (yn, _) = read_wav(&noisy).unwrap();
    // Below the input Nyquist the two agree within 0.1 dB of band energy;
    // above it the noisy kernel's images dominate the conventional floor.
    let low_c = band_energy(&yc, 0.0, 4000.0).unwrap();
    let low_n = band_energy(&yn, 0.0, 4000.0).unwrap();
    let diff_db = 10.0 * (low_n / low_c).log10();
    assert!(diff_db.abs() <= 0.1, "low-band energies differ by {diff_db} dB");
    let high_c = band_energy(&yc, 4000.0, 22050.0).unwrap();
    let high_n = band_energy(&yn, 4000.0, 22050.0).unwrap();
    assert!(
        high_n > 10.0 * high_c,
        "noisy high band {high_n} does not dominate conventional {high_c}"
    );
}

#[test]
fn noisy_resample_follows_the_seed() {
    let dir = TempDir::new().unwrap();
    let input = path(&dir, "in.wav");
    sine_wav(&input, 8000, 1000.0, 4000, WavFormat::Float32);
    let a = path(&dir, "a.wav");
    let b = path(&dir, "b.wav");
    let c = path(&dir, "c.wav");

    let args = |out: &PathBuf, seed: &str| {
        vec![
            "resample".to_string(),
            s(&input).to_string(),
            s(out).to_string(),
            "--rate".into(),
            "44100".into(),
            "--method".into(),
            "noisy-kernel".into(),
            "--seed".into(),
            seed.into(),
        ]
    };
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let argv = args(out, seed);
        let argv: Vec<&str> = argv.iter().map(|x| x.as_str()).collect();
        assert_ok(&run(&argv));
    }
    let (ba, bb, bc) =
        (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), std::fs::read(&c).unwrap());
    assert_eq!(ba, bb, "same seed must give byte-identical output");
    assert_ne!(ba, bc, "different seeds must give different noise draws");
}

#[test]
fn unreadable_input_fails_and_leaves_no_output() {
    let dir = TempDir::new().unwrap();
    let missing = path(&dir, "missing.wav");
    let output = path(&dir, "out.wav");
    let out = run(&["resample", s(&missing), s(&output), "--rate", "44100"]);
    assert_fails(&out);
    assert!(!output.exists(), "failed command left an output file behind");
}

#[test]
fn kernel_response_stopband_sits_forty_db_below_the_passband() {
    let dir = TempDir::new().unwrap();
    let csv = path(&dir, "resp.csv");
    let out = run(&[
        "kernel",
        "--rate-in",
        "8000",
        "--rate-out",
        "44100",
        "--out-csv",
        s(&csv),
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("8000 -> 44100 Hz"), "stdout: {stdout}");

    let rows = parse_response_csv(&csv);
    // Guard bands around the 4 kHz cutoff keep the transition out of both
    // averages.
    let pass = mean_db_in(&rows, 0.0, 3600.0);
    let stop = mean_db_in(&rows, 4400.0, 22050.0);
    assert!(
        pass - stop >= 40.0,
        "stopband only {:.1} dB below passband ({pass:.1} vs {stop:.1})",
        pass - stop
    );
}

#[test]
fn noisy_kernel_with_zero_variance_matches_conventional() {
    let dir = TempDir::new().unwrap();
    let conv = path(&dir, "conv.csv");
    let noisy = path(&dir, "noisy.csv");
    let base = ["kernel", "--rate-in", "8000", "--rate-out", "44100", "--out-csv"];
    let mut conv_args = base.to_vec();
    conv_args.push(s(&conv));
    assert_ok(&run(&conv_args));
    let mut noisy_args = base.to_vec();
    noisy_args.push(s(&noisy));
    noisy_args.extend(["--method", "noisy-kernel", "--sigma2", "0"]);
    assert_ok(&run(&noisy_args));
    assert_eq!(
        std::fs::read(&conv).unwrap(),
        std::fs::read(&noisy).unwrap(),
        "zero tap variance must reproduce the conventional response"
    );
}

#[test]
fn kernel_rejects_bad_requests() {
    let dir = TempDir::new().unwrap();
    let json = path(&dir, "taps.json");

    // Malformed parameter file.
    let params = path(&dir, "params.json");
    std::fs::write(&params, b"{ this is not json").unwrap();
    assert_fails(&run(&[
        "kernel",
        "--rate-in",
        "8000",
        "--rate-out",
        "44100",
        "--method",
        "trainable",
        "--params",
        s(&params),
        "--out-json",
        s(&json),
    ]));
    assert!(!json.exists());

    // Post-noise has no kernel to export.
    assert_fails(&run(&[
        "kernel",
        "--rate-in",
        "8000",
        "--rate-out",
        "44100",
        "--method",
        "post-noise",
        "--out-json",
        s(&json),
    ]));

    // No output flag at all.
    assert_fails(&run(&["kernel", "--rate-in", "8000", "--rate-out", "44100"]));
}

#[test]
fn failed_command_removes_outputs_it_already_wrote() {
    let dir = TempDir::new().unwrap();
    let json = path(&dir, "taps.json");
    let csv = path(&dir, "resp.csv");
    // The JSON is written first; the CSV then fails on an invalid FFT size,
    // and the cleanup must take the JSON with it.
    let out = run(&[
        "kernel",
        "--rate-in",
        "8000",
        "--rate-out",
        "44100",
        "--out-json",
        s(&json),
        "--out-csv",
        s(&csv),
        "--n-fft",
        "3",
    ]);
    assert_fails(&out);
    assert!(!json.exists(), "partial JSON output survived a failed command");
    assert!(!csv.exists());
}

#[test]
fn train_is_deterministic_and_respects_epoch_count() {
    let dir = TempDir::new().unwrap();
    let base = |rec: &PathBuf, par: &PathBuf| {
        vec![
            "train".to_string(),
            "--objective".into(),
            "regularizer".into(),
            "--n-items".into(),
            "2".into(),
            "--n-val-items".into(),
            "1".into(),
            "--duration-s".into(),
            "0.2".into(),
            "--max-epochs".into(),
            "1".into(),
            "--out-record".into(),
            s(rec).to_string(),
            "--out-params".into(),
            s(par).to_string(),
        ]
    };
    let (rec_a, par_a) = (path(&dir, "a.csv"), path(&dir, "a.json"));
    let (rec_b, par_b) = (path(&dir, "b.csv"), path(&dir, "b.json"));
    for (rec, par) in [(&rec_a, &par_a), (&rec_b, &par_b)] {
        let argv = base(rec, par);
        let argv: Vec<&str> = argv.iter().map(|x| x.as_str()).collect();
        let out = run(&argv);
        assert_ok(&out);
        assert!(String::from_utf8_lossy(&out.stdout).contains("best validation loss"));
    }

    let text = std::fs::read_to_string(&rec_a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,sep_term,reg_term,lr");
    assert_eq!(lines.len(), 2, "--max-epochs 1 must produce exactly one row");
    assert!(lines[1].starts_with("1,"));

    assert_eq!(std::fs::read(&rec_a).unwrap(), std::fs::read(&rec_b).unwrap());
    assert_eq!(std::fs::read(&par_a).unwrap(), std::fs::read(&par_b).unwrap());
}

#[test]
fn regularizer_objective_shrinks_its_term_to_one_percent() {
    let dir = TempDir::new().unwrap();
    let rec = path(&dir, "rec.csv");
    assert_ok(&run(&[
        "train",
        "--objective",
        "regularizer",
        "--n-items",
        "2",
        "--n-val-items",
        "1",
        "--duration-s",
        "0.2",
        "--batch-size",
        "1",
        "--decay-factor",
        "0.995",
        "--early-stop-patience",
        "200",
        "--max-epochs",
        "150",
        "--out-record",
        s(&rec),
    ]));
    let text = std::fs::read_to_string(&rec).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    let reg = |row: &str| row.split(',').nth(4).unwrap().parse::<f64>().unwrap();
    let first = reg(rows.first().unwrap());
    let last = reg(rows.last().unwrap());
    assert!(
        last <= 0.01 * first,
        "regularizer fell only from {first} to {last} over {} epochs",
        rows.len()
    );
}

#[test]
fn train_flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "job.json");
    let rec = path(&dir, "rec.csv");
    std::fs::write(
        &cfg,
        br#"{
  "objective": "regularizer",
  "n_items": 2,
  "n_val_items": 1,
  "duration_s": 0.2,
  "train": { "max_epochs": 3 }
}"#,
    )
    .unwrap();
    assert_ok(&run(&[
        "train",
        "--config",
        s(&cfg),
        "--max-epochs",
        "1",
        "--out-record",
        s(&rec),
    ]));
    let text = std::fs::read_to_string(&rec).unwrap();
    assert_eq!(text.lines().count(), 2, "flag must override the config's max_epochs");

    // Unknown keys in the config are rejected, not ignored.
    let bad = path(&dir, "bad.json");
    std::fs::write(&bad, br#"{ "n_items": 2, "not_a_field": 1 }"#).unwrap();
    assert_fails(&run(&["train", "--config", s(&bad), "--out-record", s(&rec)]));
}

#[test]
fn experiment_writes_one_group_per_method_plus_the_reference() {
    let dir = TempDir::new().unwrap();
    let csv_a = path(&dir, "a.csv");
    let csv_b = path(&dir, "b.csv");
    for csv in [&csv_a, &csv_b] {
        assert_ok(&run(&[
            "experiment",
            "--out-csv",
            s(csv),
            "--n-items",
            "2",
            "--duration-s",
            "0.3",
            "--no-train",
        ]));
    }
    let text = std::fs::read_to_string(&csv_a).unwrap();
    let methods: Vec<&str> =
        text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    for name in ["reference", "conventional", "post_noise", "noisy_kernel"] {
        assert_eq!(
            methods.iter().filter(|m| **m == name).count(),
            2,
            "expected one row per source for {name}: {methods:?}"
        );
    }
    assert_eq!(std::fs::read(&csv_a).unwrap(), std::fs::read(&csv_b).unwrap());
}

#[test]
fn experiment_with_training_adds_the_trainable_group() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "exp.json");
    let csv = path(&dir, "scores.csv");
    let params = path(&dir, "kernel.json");
    std::fs::write(
        &cfg,
        br#"{
  "n_items": 2,
  "duration_s": 0.3,
  "methods": [ { "method": "conventional" } ],
  "train_trainable": { "max_epochs": 2 }
}"#,
    )
    .unwrap();
    let out = run(&[
        "experiment",
        "--config",
        s(&cfg),
        "--out-csv",
        s(&csv),
        "--out-params",
        s(&params),
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("trainable: mean SDR"), "stdout: {stdout}");

    let text = std::fs::read_to_string(&csv).unwrap();
    let methods: Vec<&str> =
        text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    for name in ["reference", "conventional", "trainable"] {
        assert!(methods.contains(&name), "missing {name} rows: {methods:?}");
    }
    // The trained network must be exportable and well formed.
    let json = std::fs::read_to_string(&params).unwrap();
    let parsed: resamp::mlp::MlpKernelParams = serde_json::from_str(&json).unwrap();
    parsed.validate().unwrap();
}

#[test]
fn experiment_with_nothing_to_run_fails() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "exp.json");
    let csv = path(&dir, "scores.csv");
    std::fs::write(&cfg, br#"{ "methods": [] }"#).unwrap();
    let out = run(&["experiment", "--config", s(&cfg), "--out-csv", s(&csv), "--no-train"]);
    assert_fails(&out);
    assert!(!csv.exists());

    // Asking for trained parameters when nothing is trained is an error,
    // and the already-written CSV must not survive it.
    let params = path(&dir, "kernel.json");
    let out = run(&[
        "experiment",
        "--out-csv",
        s(&csv),
        "--n-items",
        "1",
        "--duration-s",
        "0.3",
        "--no-train",
        "--out-params",
        s(&params),
    ]);
    assert_fails(&out);
    assert!(!csv.exists(), "CSV written before the failure must be cleaned up");
    assert!(!params.exists());
}
