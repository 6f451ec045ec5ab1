//! Nonlinear echo synthesis and microphone mixtures.

pub mod corpus;
pub mod dataset;
pub mod nonlinear;
pub mod rir;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{energy, Rng, Waveform};
use crate::dsp::fft_convolve;
use crate::error::{Error, Result};

pub use nonlinear::{loudspeaker_nl, soft_clip, DEFAULT_CLIP_RATIO};
pub use rir::{simulate_rir, RoomRanges, RoomSpec};
pub use corpus::{Corpus, SignalKind};
pub use dataset::{synth_dataset, Manifest, ManifestRecord, SynthConfig, Talk};

pub const SER_SET_DB: [f64; 4] = [-12.2, -14.2, -16.2, -18.2];
pub const SNR_SET_DB: [f64; 2] = [30.0, 20.0];

/// Echo `rir * NL(clip(x))`, truncated to the length of `x`.
pub fn make_echo(x: &Waveform, rir: &[f64], clip_ratio: f64) -> Result<Waveform> {
    if rir.is_empty() {
        return Err(Error::InvalidArgument("empty impulse response".into()));
    }
    let driven = loudspeaker_nl(&soft_clip(x, clip_ratio));
    Ok(Waveform::new(
        fft_convolve(&driven.samples, rir, x.len()),
        x.sample_rate,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub ser_db: f64,
    pub snr_db: f64,
    pub seed: u64,
}

/// Output of [`mix`]: the scaled echo, the noise and the microphone signal.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub s: Option<Waveform>,
    /// Echo after SER scaling.
    pub d: Waveform,
    pub v: Waveform,
    pub y: Waveform,
    pub echo_gain: f64,
}

/// Gain applied to `d` so that `10·log10(‖s‖² / ‖g·d‖²) = ser_db`.
pub fn ser_gain(s_energy: f64, d_energy: f64, ser_db: f64) -> f64 {
    (s_energy / (d_energy * 10f64.powf(ser_db / 10.0))).sqrt()
}

/// Scales the echo to the requested SER (double-talk only; single-talk keeps
/// unit gain) and adds white Gaussian noise at the requested SNR relative to
/// the noiseless microphone signal. SER and SNR are measured over the whole
/// utterance.
pub fn mix(s: Option<&Waveform>, d: &Waveform, spec: &MixSpec, rng: &mut Rng) -> Result<Mixture> {
    if let Some(s) = s {
        if s.len() != d.len() {
            return Err(Error::LengthMismatch {
                left: s.len(),
                right: d.len(),
            });
        }
    }
    let d_energy = d.energy();
    let echo_gain = match s {
        Some(s) => {
            if d_energy == 0.0 {
                return Err(Error::InvalidArgument(
                    "echo has zero energy; SER is undefined".into(),
                ));
            }
            let s_energy = s.energy();
            if s_energy == 0.0 {
                return Err(Error::InvalidArgument(
                    "near-end signal has zero energy in a double-talk mix".into(),
                ));
            }
            ser_gain(s_energy, d_energy, spec.ser_db)
        }
        None => 1.0,
    };
    let d = d.scaled(echo_gain);
    let clean: Vec<f64> = match s {
        Some(s) => s.samples.iter().zip(&d.samples).map(|(a, b)| a + b).collect(),
        None => d.samples.clone(),
    };
    let raw: Vec<f64> = (0..d.len()).map(|_| StandardNormal.sample(rng)).collect();
    let noise_gain = {
        let ce = energy(&clean);
        let re = energy(&raw);
        if ce == 0.0 || re == 0.0 {
            0.0
        } else {
            (ce / (re * 10f64.powf(spec.snr_db / 10.0))).sqrt()
        }
    };
    let v = Waveform::new(raw.iter().map(|r| r * noise_gain).collect(), d.sample_rate);
    let y = match s {
        Some(s) => s
            .samples
            .iter()
            .zip(&d.samples)
            .zip(&v.samples)
            .map(|((a, b), c)| a + b + c)
            .collect(),
        None => d.samples.iter().zip(&v.samples).map(|(b, c)| b + c).collect(),
    };
    Ok(Mixture {
        s: s.cloned(),
        y: Waveform::new(y, d.sample_rate),
        d,
        v,
        echo_gain,
    })
}

/// One utterance: far-end `x`, near-end `s` (absent in single-talk), echo `d`,
/// noise `v`, microphone `y`, and the canceller's residual `s_aec` and filter
/// output `d_hat` once the LAEC stage has run.
#[derive(Debug, Clone)]
pub struct ScenarioItem {
    pub x: Waveform,
    pub s: Option<Waveform>,
    pub d: Waveform,
    pub v: Waveform,
    pub y: Waveform,
    pub s_aec: Option<Waveform>,
    pub d_hat: Option<Waveform>,
    pub mix: MixSpec,
    pub room: Option<RoomSpec>,
}

impl ScenarioItem {
    pub fn from_mixture(x: Waveform, m: Mixture, mix: MixSpec, room: Option<RoomSpec>) -> Self {
        Self {
            x,
            s: m.s,
            d: m.d,
            v: m.v,
            y: m.y,
            s_aec: None,
            d_hat: None,
            mix,
            room,
        }
    }

    pub fn is_double_talk(&self) -> bool {
        self.s.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::rng_from_seed;
    use crate::dsp::direct_convolve;
    use rand::Rng as _;

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut rng = rng_from_seed(seed);
        Waveform::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), 16000)
    }

    #[test]
    fn zero_far_end_gives_zero_echo() {
        let d = make_echo(&Waveform::zeros(500, 16000), &[0.5, 0.2, 0.1], 0.8).unwrap();
        assert!(d.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_impulse_rir_is_pure_nonlinearity() {
        let x = noise(300, 1);
        let d = make_echo(&x, &[1.0], 0.8).unwrap();
        let expect = loudspeaker_nl(&soft_clip(&x, 0.8));
        for (a, b) in d.samples.iter().zip(&expect.samples) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn echo_matches_direct_convolution() {
        let x = noise(2000, 2);
        let mut rng = rng_from_seed(3);
        let h: Vec<f64> = (0..257).map(|i| rng.random_range(-1.0..1.0) * 0.98f64.powi(i)).collect();
        let d = make_echo(&x, &h, 0.8).unwrap();
        let driven = loudspeaker_nl(&soft_clip(&x, 0.8));
        let oracle = direct_convolve(&driven.samples, &h, x.len());
        let diff = d
            .samples
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
        assert!(make_echo(&x, &[], 0.8).is_err());
    }

    #[test]
    fn ser_gain_examples() {
        assert_eq!(ser_gain(1.0, 1.0, 0.0), 1.0);
        assert!((ser_gain(1.0, 1.0, -14.2) - 10f64.powf(1.42).sqrt()).abs() < 1e-12);
        assert!((ser_gain(1.0, 1.0, -14.2) - 5.1286).abs() < 1e-4);
    }

    #[test]
    fn mix_hits_ser_and_snr() {
        let s = noise(4000, 4);
        let d = noise(4000, 5).scaled(0.3);
        let spec = MixSpec {
            ser_db: -14.2,
            snr_db: 20.0,
            seed: 9,
        };
        let m = mix(Some(&s), &d, &spec, &mut rng_from_seed(9)).unwrap();
        let ser = 10.0 * (s.energy() / m.d.energy()).log10();
        assert!((ser - spec.ser_db).abs() < 1e-9);
        let clean: Vec<f64> = s.samples.iter().zip(&m.d.samples).map(|(a, b)| a + b).collect();
        let snr = 10.0 * (energy(&clean) / m.v.energy()).log10();
        assert!((snr - 20.0).abs() < 1e-9);
        for n in 0..s.len() {
            assert_eq!(m.y.samples[n], s.samples[n] + m.d.samples[n] + m.v.samples[n]);
        }
    }

    #[test]
    fn single_talk_unit_gain() {
        let d = noise(1000, 6);
        let spec = MixSpec {
            ser_db: -14.2,
            snr_db: 30.0,
            seed: 1,
        };
        let m = mix(None, &d, &spec, &mut rng_from_seed(1)).unwrap();
        assert_eq!(m.echo_gain, 1.0);
        assert_eq!(m.d, d);
        for n in 0..d.len() {
            assert_eq!(m.y.samples[n], d.samples[n] + m.v.samples[n]);
        }
    }

    #[test]
    fn zero_echo_rejected() {
        let s = noise(100, 7);
        let d = Waveform::zeros(100, 16000);
        let spec = MixSpec {
            ser_db: 0.0,
            snr_db: 30.0,
            seed: 0,
        };
        assert!(mix(Some(&s), &d, &spec, &mut rng_from_seed(0)).is_err());
        assert!(mix(Some(&s), &noise(99, 1), &spec, &mut rng_from_seed(0)).is_err());
    }
}
