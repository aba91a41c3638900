//! Reading and writing signals as WAV files (16/24-bit PCM and 32-bit
//! float). Samples are mapped to [-1, 1]; float data survives a
//! write-read-write cycle bit-exactly because `f32 -> f64 -> f32` is
//! lossless.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::signal::Signal;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Pcm24,
    Float32,
}

impl WavFormat {
    fn spec(&self, rate_hz: u32, channels: u16) -> WavSpec {
        let (bits, format) = match self {
            WavFormat::Pcm16 => (16, SampleFormat::Int),
            WavFormat::Pcm24 => (24, SampleFormat::Int),
            WavFormat::Float32 => (32, SampleFormat::Float),
        };
        WavSpec {
            channels,
            sample_rate: rate_hz,
            bits_per_sample: bits,
            sample_format: format,
        }
    }
}

fn wav_err(e: hound::Error) -> Error {
    Error::Wav(e.to_string())
}

/// Read a WAV file into a planar float signal, reporting the stored format.
pub fn read_wav(path: &Path) -> Result<(Signal, WavFormat)> {
    let mut reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if n_channels == 0 {
        return Err(Error::Wav("file declares zero channels".into()));
    }
    let (format, interleaved) = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => {
            let scale = 1.0 / 32768.0;
            let samples = reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(wav_err)?;
            (WavFormat::Pcm16, samples)
        }
        (SampleFormat::Int, 24) => {
            let scale = 1.0 / 8388608.0;
            let samples = reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(wav_err)?;
            (WavFormat::Pcm24, samples)
        }
        (SampleFormat::Float, 32) => {
            let samples = reader
                .samples::<f32>()
                .map(|s| s.map(|v| v as f64))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(wav_err)?;
            (WavFormat::Float32, samples)
        }
        (f, b) => {
            return Err(Error::Wav(format!("unsupported sample format: {b}-bit {f:?}")));
        }
    };
    if interleaved.is_empty() {
        return Err(Error::Wav("file contains no samples".into()));
    }
    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for (i, v) in interleaved.into_iter().enumerate() {
        channels[i % n_channels].push(v);
    }
    Ok((Signal::new(spec.sample_rate, channels)?, format))
}

/// Write a signal as a WAV file in the requested format. PCM samples are
/// scaled by the full-scale integer and clamped; floats are narrowed to
/// `f32`.
pub fn write_wav(path: &Path, signal: &Signal, format: WavFormat) -> Result<()> {
    let spec = format.spec(signal.rate_hz(), signal.n_channels() as u16);
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    let channels = signal.channels();
    for i in 0..signal.len() {
        for ch in channels {
            let v = ch[i];
            match format {
                WavFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q).map_err(wav_err)?;
                }
                WavFormat::Pcm24 => {
                    let q = (v * 8388608.0).round().clamp(-8388608.0, 8388607.0) as i32;
                    writer.write_sample(q).map_err(wav_err)?;
                }
                WavFormat::Float32 => {
                    writer.write_sample(v as f32).map_err(wav_err)?;
                }
            }
        }
    }
    writer.finalize().map_err(wav_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_stereo(seed: u64, n: usize) -> Signal {
        let mut rng = Rng::new(seed);
        let mut chan = || (0..n).map(|_| rng.next_range(-0.9, 0.9)).collect::<Vec<_>>();
        Signal::new(44100, vec![chan(), chan()]).unwrap()
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let x = random_stereo(1, 500);
        write_wav(&path, &x, WavFormat::Pcm16).unwrap();
        let (y, format) = read_wav(&path).unwrap();
        assert_eq!(format, WavFormat::Pcm16);
        assert_eq!(y.rate_hz(), 44100);
        assert_eq!(y.n_channels(), 2);
        for c in 0..2 {
            for (a, b) in x.channel(c).iter().zip(y.channel(c)) {
                assert!((a - b).abs() <= 0.5 / 32768.0);
            }
        }
    }

    #[test]
    fn pcm24_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let x = random_stereo(2, 300);
        write_wav(&path, &x, WavFormat::Pcm24).unwrap();
        let (y, format) = read_wav(&path).unwrap();
        assert_eq!(format, WavFormat::Pcm24);
        for c in 0..2 {
            for (a, b) in x.channel(c).iter().zip(y.channel(c)) {
                assert!((a - b).abs() <= 0.5 / 8388608.0);
            }
        }
    }

    #[test]
    fn float32_cycle_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.wav");
        let p2 = dir.path().join("b.wav");
        let x = random_stereo(3, 400);
        write_wav(&p1, &x, WavFormat::Float32).unwrap();
        let (y, _) = read_wav(&p1).unwrap();
        write_wav(&p2, &y, WavFormat::Float32).unwrap();
        let (z, _) = read_wav(&p2).unwrap();
        for c in 0..2 {
            assert_eq!(y.channel(c), z.channel(c));
        }
        // And the first read is already within f32 rounding of the source.
        for (a, b) in x.channel(0).iter().zip(y.channel(0)) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn pcm_clamps_out_of_range_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hot.wav");
        let x = Signal::mono(8000, vec![1.5, -1.5, 1.0, -1.0]).unwrap();
        write_wav(&path, &x, WavFormat::Pcm16).unwrap();
        let (y, _) = read_wav(&path).unwrap();
        assert!((y.channel(0)[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert_eq!(y.channel(0)[1], -1.0);
    }

    #[test]
    fn unsupported_formats_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("8bit.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for v in [0i8, 10, -10] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Wav(_))));
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(read_wav(Path::new("/nonexistent/nope.wav")).is_err());
    }
}
