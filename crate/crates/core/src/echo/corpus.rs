//! Signal sources for dataset synthesis: directories of WAV files, or
//! built-in surrogates for speech and music when no corpus is supplied.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, Rng, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Speech,
    Music,
}

impl std::fmt::Display for SignalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SignalKind::Speech => "speech",
            SignalKind::Music => "music",
        })
    }
}

#[derive(Debug, Clone)]
pub enum Corpus {
    Synthetic(SignalKind),
    Files { kind: SignalKind, files: Vec<PathBuf> },
}

impl Corpus {
    /// All `.wav` files directly inside `dir`, sorted by name.
    pub fn from_dir(dir: &Path, kind: SignalKind) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
            {
                files.push(path);
            }
        }
        if files.is_empty() {
            return Err(Error::EmptyCorpus(dir.display().to_string()));
        }
        files.sort();
        Ok(Corpus::Files { kind, files })
    }

    pub fn kind(&self) -> SignalKind {
        match self {
            Corpus::Synthetic(kind) | Corpus::Files { kind, .. } => *kind,
        }
    }

    /// Draws an utterance of exactly `len` samples. File sources pick a random
    /// file and offset; files shorter than `len` are zero-padded.
    pub fn draw(&self, len: usize, sample_rate: u32, rng: &mut Rng) -> Result<Waveform> {
        match self {
            Corpus::Synthetic(SignalKind::Speech) => Ok(speech_surrogate(len, sample_rate, rng)),
            Corpus::Synthetic(SignalKind::Music) => Ok(music_surrogate(len, sample_rate, rng)),
            Corpus::Files { files, .. } => {
                let path = &files[rng.random_range(0..files.len())];
                let w = read_wav(path)?;
                if w.sample_rate != sample_rate {
                    return Err(Error::UnsupportedFormat {
                        path: path.clone(),
                        detail: format!("sample rate {} != {}", w.sample_rate, sample_rate),
                    });
                }
                let mut out = vec![0.0; len];
                if w.len() > len {
                    let off = rng.random_range(0..=w.len() - len);
                    out.copy_from_slice(&w.samples[off..off + len]);
                } else {
                    out[..w.len()].copy_from_slice(&w.samples);
                }
                Ok(Waveform::new(out, sample_rate))
            }
        }
    }
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        let g = peak / m;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

fn hann(pos: f64) -> f64 {
    0.5 - 0.5 * (2.0 * PI * pos).cos()
}

/// Speech-like surrogate: syllables of voiced harmonic sound shaped by random
/// formants, unvoiced noise bursts, and pauses.
pub fn speech_surrogate(len: usize, sample_rate: u32, rng: &mut Rng) -> Waveform {
    let fs = sample_rate as f64;
    let mut out = vec![0.0; len];
    let base_f0 = rng.random_range(90.0..240.0);
    let mut t = (rng.random_range(0.0..0.2) * fs) as usize;
    while t < len {
        let roll: f64 = rng.random();
        if roll < 0.15 {
            t += (rng.random_range(0.05..0.3) * fs) as usize;
            continue;
        }
        let dur = (rng.random_range(0.08..0.30) * fs) as usize;
        let end = (t + dur).min(len);
        let gain = rng.random_range(0.3..1.0);
        if roll < 0.3 {
            // fricative: differenced noise
            let mut prev = 0.0;
            for n in t..end {
                let w: f64 = StandardNormal.sample(rng);
                out[n] += 0.3 * gain * (w - 0.7 * prev) * hann((n - t) as f64 / dur as f64);
                prev = w;
            }
        } else {
            let formants = [
                (rng.random_range(300.0..900.0), 120.0),
                (rng.random_range(900.0..2500.0), 200.0),
                (rng.random_range(2400.0..3500.0), 300.0),
            ];
            let f0_start: f64 = base_f0 * rng.random_range(0.85..1.15);
            let f0_end = base_f0 * rng.random_range(0.85..1.15);
            let n_harm = ((4000.0 / f0_start.max(f0_end)) as usize).max(1);
            let amps: Vec<f64> = (1..=n_harm)
                .map(|k| {
                    let f = k as f64 * (f0_start + f0_end) * 0.5;
                    let env: f64 = formants
                        .iter()
                        .map(|&(c, bw)| (-((f - c) / bw).powi(2)).exp())
                        .sum();
                    (env + 0.05) / (k as f64).sqrt()
                })
                .collect();
            let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let mut phase0 = 0.0;
            for n in t..end {
                let pos = (n - t) as f64 / dur as f64;
                let f0 = f0_start + (f0_end - f0_start) * pos;
                phase0 += 2.0 * PI * f0 / fs;
                let env = hann(pos);
                let mut v = 0.0;
                for (k, (a, p)) in amps.iter().zip(&phases).enumerate() {
                    v += a * ((k + 1) as f64 * phase0 + p).sin();
                }
                out[n] += gain * env * v;
            }
        }
        t = end;
    }
    let peak = rng.random_range(0.3..0.9);
    normalize_peak(&mut out, peak);
    Waveform::new(out, sample_rate)
}

/// Music-like surrogate: overlapping harmonic notes on an equal-tempered
/// scale with exponential decay, plus occasional percussive noise hits.
pub fn music_surrogate(len: usize, sample_rate: u32, rng: &mut Rng) -> Waveform {
    let fs = sample_rate as f64;
    let mut out = vec![0.0; len];
    let voices = rng.random_range(1..=3);
    let root = rng.random_range(45..60) as f64;
    const SCALE: [f64; 7] = [0.0, 2.0, 4.0, 5.0, 7.0, 9.0, 11.0];
    for voice in 0..voices {
        let mut t = 0usize;
        let brightness = rng.random_range(1.0..2.0);
        while t < len {
            let dur = (rng.random_range(0.1..0.6) * fs) as usize;
            let step = SCALE[rng.random_range(0..SCALE.len())];
            let midi = root + 12.0 * voice as f64 + step;
            let f = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
            let n_harm = ((5000.0 / f) as usize).clamp(1, 12);
            let decay = rng.random_range(3.0..12.0);
            let gain = rng.random_range(0.4..1.0);
            let end = (t + dur + (0.05 * fs) as usize).min(len);
            for n in t..end {
                let tt = (n - t) as f64 / fs;
                let attack = (tt / 0.01).min(1.0);
                let env = attack * (-decay * tt).exp();
                let mut v = 0.0;
                for k in 1..=n_harm {
                    v += (2.0 * PI * f * k as f64 * tt).sin() / (k as f64).powf(brightness);
                }
                out[n] += gain * env * v;
            }
            t += dur;
        }
    }
    let hits = (len as f64 / fs * rng.random_range(0.0..3.0)) as usize;
    for _ in 0..hits {
        let start = rng.random_range(0..len.max(1));
        let dur = (0.05 * fs) as usize;
        for n in start..(start + dur).min(len) {
            let w: f64 = StandardNormal.sample(rng);
            out[n] += 0.4 * w * (-((n - start) as f64) / (0.01 * fs)).exp();
        }
    }
    let peak = rng.random_range(0.3..0.9);
    normalize_peak(&mut out, peak);
    Waveform::new(out, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::rng_from_seed;

    #[test]
    fn surrogates_are_deterministic_and_bounded() {
        for kind in [SignalKind::Speech, SignalKind::Music] {
            let c = Corpus::Synthetic(kind);
            let a = c.draw(16000, 16000, &mut rng_from_seed(5)).unwrap();
            let b = c.draw(16000, 16000, &mut rng_from_seed(5)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 16000);
            assert!(a.peak() <= 0.9 + 1e-12 && a.peak() > 0.0);
            a.check_finite().unwrap();
        }
    }

    #[test]
    fn empty_dir_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Corpus::from_dir(dir.path(), SignalKind::Speech),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn file_corpus_draws_segments() {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform::new((0..3000).map(|i| (i as f64 * 0.01).sin() * 0.5).collect(), 16000);
        crate::audio::write_wav(dir.path().join("a.wav"), &w).unwrap();
        let c = Corpus::from_dir(dir.path(), SignalKind::Music).unwrap();
        let seg = c.draw(1000, 16000, &mut rng_from_seed(1)).unwrap();
        assert_eq!(seg.len(), 1000);
        let padded = c.draw(5000, 16000, &mut rng_from_seed(1)).unwrap();
        assert_eq!(&padded.samples[3000..], &[0.0; 2000][..]);
    }
}
