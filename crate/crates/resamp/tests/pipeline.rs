//! End-to-end flows across module boundaries: conversions driven from WAV
//! files, kernel tables and trained parameters passed through disk, and
//! measurements taken on the far side of a full chain.

use resamp::analysis::{band_energy, sdr_db, snr_db};
use resamp::kernel::{add_kernel_noise, discretize_kernel, KernelConfig, KernelTable};
use resamp::mlp::MlpKernelParams;
use resamp::proxy::{synth_dataset, ProxySeparator, DEFAULT_GATE_EPSILON};
use resamp::resample::{resample_conventional, resample_post_noise, resample_with_table};
use resamp::rng::Rng;
use resamp::signal::Signal;
use resamp::train::{export_kernel, pretrain_kernel, resample_trainable, TrainConfig};
use resamp::experiment::{run_full_experiment, ExperimentConfig};
use resamp::wav::{read_wav, write_wav, WavFormat};

fn random_stereo(seed: u64, rate: u32, n: usize) -> Signal {
    let mut rng = Rng::new(seed);
    let mut ch = || (0..n).map(|_| rng.next_range(-0.9, 0.9)).collect::<Vec<f64>>();
    Signal::new(rate, vec![ch(), ch()]).unwrap()
}

#[test]
fn wav_to_wav_conversion_preserves_the_tone() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("tone8k.wav");
    let dst = dir.path().join("tone44k.wav");

    let tone = Signal::sine(8000, 1000.0, 0.5, 8000);
    write_wav(&src, &tone, WavFormat::Float32).unwrap();

    let (x, fmt) = read_wav(&src).unwrap();
    assert_eq!(fmt, WavFormat::Float32);
    let y = resample_conventional(&x, 44100, &KernelConfig::default()).unwrap();
    write_wav(&dst, &y, WavFormat::Float32).unwrap();

    let (z, _) = read_wav(&dst).unwrap();
    assert_eq!(z.rate_hz(), 44100);
    assert_eq!(z.len(), 44100);
    // The converted file carries the same tone: compare against a sine
    // synthesized directly at the target rate, away from the edges.
    let direct = Signal::sine(44100, 1000.0, 0.5, z.len());
    let sdr = sdr_db(&direct.trim_edges(600).unwrap(), &z.trim_edges(600).unwrap()).unwrap();
    assert!(sdr >= 60.0, "tone degraded to {sdr:.1} dB through the WAV chain");
    // And nothing appeared above the source Nyquist.
    let high = band_energy(&z, 4200.0, 22051.0).unwrap();
    assert!(high <= 1e-6 * z.energy(), "high band at {high:.3e}");
}

#[test]
fn tables_passed_through_disk_reproduce_the_conversion_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kernel.json");
    let x = random_stereo(21, 8000, 700);

    let clean = discretize_kernel(&KernelConfig::default(), 8000, 44100).unwrap();
    let noisy = add_kernel_noise(&clean, 1e-6, 77).unwrap();
    std::fs::write(&path, serde_json::to_vec(&noisy).unwrap()).unwrap();

    let loaded: KernelTable =
        serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    loaded.validate().unwrap();

    let direct = resample_with_table(&x, &noisy).unwrap();
    let via_disk = resample_with_table(&x, &loaded).unwrap();
    for (a, b) in direct.channels().iter().zip(via_disk.channels()) {
        for (u, v) in a.iter().zip(b) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
}

#[test]
fn trained_parameters_survive_disk_and_reproduce_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.json");

    let proxy = ProxySeparator::new(44100, 2, 1024, 256, DEFAULT_GATE_EPSILON).unwrap();
    let data = synth_dataset(&proxy, 22050, 2, 0.2, 5).unwrap();
    let mixtures: Vec<Signal> = data.items.iter().map(|i| i.mixture.clone()).collect();
    let cfg = TrainConfig { max_epochs: 2, ..TrainConfig::default() };
    let init = MlpKernelParams::init(22050, 48, 1);
    let (params, record) = pretrain_kernel(&mixtures, &cfg, &init).unwrap();
    assert_eq!(record.epochs.len(), 2);

    std::fs::write(&path, serde_json::to_vec_pretty(&params).unwrap()).unwrap();
    let loaded: MlpKernelParams =
        serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    loaded.validate().unwrap();

    // Same table, bit for bit, hence the same conversion.
    let t1 = export_kernel(&params, 44100).unwrap();
    let t2 = export_kernel(&loaded, 44100).unwrap();
    for (a, b) in t1.taps.iter().zip(&t2.taps) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let x = data.items[0].mixture.clone();
    let (y1, _) = resample_trainable(&x, &params, 44100).unwrap();
    let (y2, _) = resample_trainable(&x, &loaded, 44100).unwrap();
    assert_eq!(y1.channel(0), y2.channel(0));
}

#[test]
fn stereo_pcm_survives_the_conversion_chain() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stereo.wav");
    let x = random_stereo(9, 22050, 2000);
    write_wav(&path, &x, WavFormat::Pcm24).unwrap();

    let (back, fmt) = read_wav(&path).unwrap();
    assert_eq!(fmt, WavFormat::Pcm24);
    assert_eq!(back.n_channels(), 2);

    let y = resample_conventional(&back, 44100, &KernelConfig::default()).unwrap();
    assert_eq!(y.n_channels(), 2);
    assert_eq!(y.len(), 4000);
    // Channel independence holds through the file: converting each loaded
    // channel alone gives the same samples.
    for c in 0..2 {
        let mono = Signal::mono(22050, back.channel(c).to_vec()).unwrap();
        let ym = resample_conventional(&mono, 44100, &KernelConfig::default()).unwrap();
        assert_eq!(y.channel(c), ym.channel(0));
    }
}

#[test]
fn noise_calibration_holds_after_a_float32_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let clean_path = dir.path().join("clean.wav");
    let noisy_path = dir.path().join("noisy.wav");

    let x = Signal::sine(8000, 700.0, 0.4, 8000);
    let cfg = KernelConfig::default();
    let clean = resample_conventional(&x, 44100, &cfg).unwrap();
    let noisy = resample_post_noise(&x, 44100, &cfg, 20.0, 12).unwrap();
    write_wav(&clean_path, &clean, WavFormat::Float32).unwrap();
    write_wav(&noisy_path, &noisy, WavFormat::Float32).unwrap();

    let (c, _) = read_wav(&clean_path).unwrap();
    let (n, _) = read_wav(&noisy_path).unwrap();
    // Float32 quantization sits near -150 dB, far below the 20 dB noise
    // being measured, so the calibration survives the file format.
    let snr = snr_db(&c, &n).unwrap();
    assert!((snr - 20.0).abs() <= 0.5, "measured {snr:.2} dB after the round trip");
}

#[test]
fn experiment_report_csv_parses_back_to_its_rows() {
    let cfg = ExperimentConfig {
        n_items: 2,
        duration_s: 0.3,
        train_trainable: None,
        seed: 4,
        ..ExperimentConfig::default()
    };
    let report = run_full_experiment(&cfg).unwrap();
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "method,source,mean_sdr_db,stderr_db,n_items");
    let mut parsed = 0;
    for (line, row) in lines.zip(&report.rows) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(fields[0], row.method);
        assert_eq!(fields[1].parse::<usize>().unwrap(), row.source);
        // Decimal text written by the report reparses to the same float.
        assert_eq!(fields[2].parse::<f64>().unwrap(), row.mean_sdr_db);
        assert_eq!(fields[3].parse::<f64>().unwrap(), row.stderr_db);
        assert_eq!(fields[4].parse::<usize>().unwrap(), row.n_items);
        parsed += 1;
    }
    assert_eq!(parsed, report.rows.len());
    // Reference plus the three untrained strategies, two sources each.
    assert_eq!(parsed, 8);
}
