//! Image-method (Allen–Berkley) room impulse responses with uniform wall
//! reflection derived from T60 by Sabine's formula, followed by the
//! method's 100 Hz high-pass filter.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::audio::Rng;
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;
const RIR_TAIL_SAMPLES: usize = 1024;
pub const HIGH_PASS_HZ: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Room size in meters (x, y, z).
    pub dimensions: [f64; 3],
    /// Reverberation time in seconds.
    pub t60: f64,
    pub mic_pos: [f64; 3],
    pub src_pos: [f64; 3],
    pub rir_len: usize,
    pub sample_rate: u32,
}

/// Sampling ranges for random rooms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomRanges {
    pub dim_min: f64,
    pub dim_max: f64,
    pub t60_min: f64,
    pub t60_max: f64,
    /// Minimum distance of mic/source from any wall, meters.
    pub wall_margin: f64,
}

impl Default for RoomRanges {
    fn default() -> Self {
        Self {
            dim_min: 2.0,
            dim_max: 5.0,
            t60_min: 0.150,
            t60_max: 0.450,
            wall_margin: 0.3,
        }
    }
}

pub fn default_rir_len(t60: f64, sample_rate: u32) -> usize {
    (t60 * sample_rate as f64).ceil() as usize + RIR_TAIL_SAMPLES
}

impl RoomSpec {
    pub fn new(
        dimensions: [f64; 3],
        t60: f64,
        mic_pos: [f64; 3],
        src_pos: [f64; 3],
        sample_rate: u32,
    ) -> Result<Self> {
        let room = Self {
            dimensions,
            t60,
            mic_pos,
            src_pos,
            rir_len: default_rir_len(t60.max(0.0), sample_rate),
            sample_rate,
        };
        room.validate()?;
        Ok(room)
    }

    /// Random room, mic and loudspeaker placement.
    pub fn random(ranges: &RoomRanges, sample_rate: u32, rng: &mut Rng) -> Self {
        let dimensions: [f64; 3] =
            std::array::from_fn(|_| rng.random_range(ranges.dim_min..=ranges.dim_max));
        let t60 = rng.random_range(ranges.t60_min..=ranges.t60_max);
        let mut point = || -> [f64; 3] {
            std::array::from_fn(|i| {
                rng.random_range(ranges.wall_margin..=dimensions[i] - ranges.wall_margin)
            })
        };
        let mic_pos = point();
        let src_pos = point();
        Self {
            dimensions,
            t60,
            mic_pos,
            src_pos,
            rir_len: default_rir_len(t60, sample_rate),
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "room dimensions must be positive: {:?}",
                self.dimensions
            )));
        }
        if !(self.t60 >= 0.0) {
            return Err(Error::InvalidArgument(format!("t60 must be >= 0: {}", self.t60)));
        }
        for (name, p) in [("mic", &self.mic_pos), ("source", &self.src_pos)] {
            if p
                .iter()
                .zip(&self.dimensions)
                .any(|(&c, &d)| !(c > 0.0 && c < d))
            {
                return Err(Error::InvalidArgument(format!(
                    "{name} position {p:?} outside room {:?}",
                    self.dimensions
                )));
            }
        }
        if self.rir_len == 0 {
            return Err(Error::InvalidArgument("rir_len must be > 0".into()));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        2.0 * (x * y + x * z + y * z)
    }

    /// Wall reflection coefficient from Sabine absorption `0.161·V / (S·T60)`,
    /// clamped to the anechoic case when the required absorption exceeds 1.
    pub fn reflection_coefficient(&self) -> f64 {
        if self.t60 <= 0.0 {
            return 0.0;
        }
        let alpha = 0.161 * self.volume() / (self.surface() * self.t60);
        if alpha >= 1.0 {
            0.0
        } else {
            (1.0 - alpha).sqrt()
        }
    }

    pub fn direct_distance(&self) -> f64 {
        dist(&self.mic_pos, &self.src_pos)
    }

    pub fn direct_delay_samples(&self) -> f64 {
        self.direct_distance() / SPEED_OF_SOUND * self.sample_rate as f64
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Image-method impulse response. Each image contributes
/// `β^(#reflections) / (4π·r)` at the nearest sample of its delay `r/c·fs`.
///
/// Absorption starts from Sabine's formula and is refined until the
/// Schroeder decay of the generated response lands within 5% of `t60`
/// (at most a few passes).
///
/// The generator is deterministic given the room; `_rng` is accepted so
/// callers can thread one generator through a whole scenario.
pub fn simulate_rir(room: &RoomSpec, _rng: &mut Rng) -> Result<Vec<f64>> {
    room.validate()?;
    let beta = room.reflection_coefficient();
    if beta == 0.0 {
        return Ok(high_pass(image_response(room, 0.0), room.sample_rate));
    }
    let mut alpha = 1.0 - beta * beta;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..CALIBRATION_PASSES {
        let h = high_pass(image_response(room, (1.0 - alpha).sqrt()), room.sample_rate);
        let Some(est) = estimate_t60(&h, room.sample_rate) else {
            return Ok(h);
        };
        let err = (est / room.t60 - 1.0).abs();
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, h));
        }
        if err <= 0.05 {
            break;
        }
        alpha = (alpha * est / room.t60).min(0.999);
    }
    Ok(best.expect("at least one pass").1)
}

const CALIBRATION_PASSES: usize = 5;

fn image_response(room: &RoomSpec, beta: f64) -> Vec<f64> {
    let fs = room.sample_rate as f64;
    let len = room.rir_len;
    let mut h = vec![0.0; len];
    let max_dist = len as f64 / fs * SPEED_OF_SOUND;
    let l = room.dimensions;
    let s = room.src_pos;
    let m = room.mic_pos;
    if beta == 0.0 {
        add_image(&mut h, dist(&s, &m), 1.0, fs);
        return h;
    }

    // Per-axis image offsets: for mirror index n and parity q, the image
    // coordinate difference is (1 - 2q)·s - m + 2n·L, with |n - q| + |n|
    // reflections along that axis.
    let n_max: [i64; 3] = std::array::from_fn(|i| (max_dist / (2.0 * l[i])).ceil() as i64 + 1);
    let axis_terms = |i: usize| -> Vec<(f64, i32)> {
        let mut v = Vec::new();
        for n in -n_max[i]..=n_max[i] {
            for q in 0..2i64 {
                let d = (1 - 2 * q) as f64 * s[i] - m[i] + 2.0 * n as f64 * l[i];
                let refl = ((n - q).abs() + n.abs()) as i32;
                v.push((d, refl));
            }
        }
        v
    };
    let (ax, ay, az) = (axis_terms(0), axis_terms(1), axis_terms(2));
    let max_sq = max_dist * max_dist;
    for &(dx, rx) in &ax {
        let dx2 = dx * dx;
        if dx2 > max_sq {
            continue;
        }
        for &(dy, ry) in &ay {
            let dxy2 = dx2 + dy * dy;
            if dxy2 > max_sq {
                continue;
            }
            for &(dz, rz) in &az {
                let d2 = dxy2 + dz * dz;
                if d2 > max_sq {
                    continue;
                }
                add_image(&mut h, d2.sqrt(), beta.powi(rx + ry + rz), fs);
            }
        }
    }
    h
}

/// Allen and Berkley's two-pole DC-blocking filter.
fn high_pass(mut h: Vec<f64>, sample_rate: u32) -> Vec<f64> {
    let w = 2.0 * std::f64::consts::PI * HIGH_PASS_HZ / sample_rate as f64;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let mut y = [0.0f64; 3];
    for v in h.iter_mut() {
        y[2] = y[1];
        y[1] = y[0];
        y[0] = b1 * y[1] + b2 * y[2] + *v;
        *v = y[0] + a1 * y[1] + r1 * y[2];
    }
    h
}

fn add_image(h: &mut [f64], r: f64, gain: f64, fs: f64) {
    let idx = (r / SPEED_OF_SOUND * fs).round() as usize;
    if idx < h.len() {
        h[idx] += gain / (4.0 * std::f64::consts::PI * r.max(1e-3));
    }
}

/// Schroeder backward-integrated energy decay curve in dB (0 dB at t = 0).
pub fn energy_decay_curve_db(h: &[f64]) -> Vec<f64> {
    let mut edc = vec![0.0; h.len()];
    let mut acc = 0.0;
    for i in (0..h.len()).rev() {
        acc += h[i] * h[i];
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter()
        .map(|&e| 10.0 * (e / total).max(1e-300).log10())
        .collect()
}

/// T60 estimate from a least-squares line through the EDC between -5 and
/// -25 dB, extrapolated to 60 dB of decay.
pub fn estimate_t60(h: &[f64], sample_rate: u32) -> Option<f64> {
    let edc = energy_decay_curve_db(h);
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .filter(|(_, &e)| (-25.0..=-5.0).contains(&e))
        .map(|(i, &e)| (i as f64 / sample_rate as f64, e))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let me = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - me)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    let slope = cov / var;
    (slope < 0.0).then(|| -60.0 / slope)
}
