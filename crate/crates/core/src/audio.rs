//! Waveforms, 16-bit PCM WAV I/O, encoder framing and the repo-wide seeded
//! generator.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono signal with double-precision samples in nominal range [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform::new(
            self.samples.iter().map(|v| v * gain).collect(),
            self.sample_rate,
        )
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.samples.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

const PCM_SCALE: f64 = 32768.0;

/// Reads a 16-bit PCM mono WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|source| match source {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(msg) => Error::UnsupportedFormat {
            path: path.into(),
            detail: msg.to_string(),
        },
        other => Error::Wav {
            path: path.into(),
            source: other,
        },
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::ChannelCount {
            path: path.into(),
            channels: spec.channels,
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat {
            path: path.into(),
            detail: format!(
                "{:?} with {} bits per sample, expected 16-bit PCM",
                spec.sample_format, spec.bits_per_sample
            ),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|source| Error::Wav {
            path: path.into(),
            source,
        })?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Writes a 16-bit PCM mono WAV file. Samples outside [-1, 1) are saturated.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    wave.check_finite()?;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |source: hound::Error| match source {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::Wav {
            path: path.into(),
            source: other,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &v in &wave.samples {
        writer.write_sample(quantize(v)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

fn quantize(v: f64) -> i16 {
    (v * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Encoder framing parameters in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpec {
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            frame_len: 40,
            hop: 10,
        }
    }
}

impl FrameSpec {
    pub fn new(frame_len: usize, hop: usize) -> Result<Self> {
        if hop == 0 || hop > frame_len {
            return Err(Error::InvalidArgument(format!(
                "frame spec needs 0 < hop <= frame_len, got hop={hop} frame_len={frame_len}"
            )));
        }
        Ok(Self { frame_len, hop })
    }

    /// Frames that fit inside `n_samples` without padding.
    pub fn raw_frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_len {
            0
        } else {
            (n_samples - self.frame_len) / self.hop + 1
        }
    }

    /// Frames produced by the model's padding policy: `frame_len - hop` zeros on
    /// the left and right padding up to a whole hop, so frame `k` ends at sample
    /// `(k + 1) * hop - 1`.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop)
    }

    pub fn left_pad(&self) -> usize {
        self.frame_len - self.hop
    }
}

/// Raw (unpadded) frame count; see [`FrameSpec::frame_count`] for the padded one.
pub fn frame_count(n_samples: usize, spec: FrameSpec) -> usize {
    spec.raw_frame_count(n_samples)
}

/// The repo-wide generator: ChaCha with 8 rounds, which yields the same stream
/// on every platform for a given seed.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for worker/item `index` under `master`, via a splitmix64 finalizer.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
