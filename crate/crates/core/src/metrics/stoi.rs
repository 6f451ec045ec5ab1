//! Short-time objective intelligibility.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

const STOI_RATE: u32 = 10_000;
const FRAME_LEN: usize = 256;
const HOP: usize = 128;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT_FRAMES: usize = 30;
const CLIP_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;

/// STOI of `processed` against `clean`, both sampled at `sample_rate`.
pub fn stoi(processed: &[f64], clean: &[f64], sample_rate: u32) -> Result<f64> {
    if processed.len() != clean.len() {
        return Err(Error::LengthMismatch {
            left: processed.len(),
            right: clean.len(),
        });
    }
    let (x, y) = if sample_rate == STOI_RATE {
        (clean.to_vec(), processed.to_vec())
    } else {
        (
            resample(clean, sample_rate, STOI_RATE)?,
            resample(processed, sample_rate, STOI_RATE)?,
        )
    };
    let (x, y) = remove_silent_frames(&x, &y);
    let x_bands = band_envelopes(&x);
    let y_bands = band_envelopes(&y);
    let frames = x_bands.first().map_or(0, Vec::len);
    if frames < SEGMENT_FRAMES {
        return Err(Error::TooShort(format!(
            "STOI needs {SEGMENT_FRAMES} active frames, got {frames}"
        )));
    }
    let clip = 10f64.powf(-CLIP_DB / 20.0);
    let mut total = 0.0;
    let segments = frames - SEGMENT_FRAMES + 1;
    for m in SEGMENT_FRAMES..=frames {
        for (xb, yb) in x_bands.iter().zip(&y_bands) {
            let xs = &xb[m - SEGMENT_FRAMES..m];
            let ys = &yb[m - SEGMENT_FRAMES..m];
            let scale = norm(xs) / (norm(ys) + f64::EPSILON);
            let yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(yv, xv)| (yv * scale).min(xv * (1.0 + clip)))
                .collect();
            total += correlation(xs, &yp);
        }
    }
    Ok(total / (segments * NUM_BANDS) as f64)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let ac: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let bc: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let na = norm(&ac) + f64::EPSILON;
    let nb = norm(&bc) + f64::EPSILON;
    ac.iter().zip(&bc).map(|(p, q)| (p / na) * (q / nb)).sum()
}

fn hann_inner(n: usize) -> Vec<f64> {
    // Hann window of length n+2 without its zero endpoints.
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann_inner(FRAME_LEN);
    if x.len() < FRAME_LEN {
        return (Vec::new(), Vec::new());
    }
    let starts: Vec<usize> = (0..=x.len() - FRAME_LEN).step_by(HOP).collect();
    let window = |sig: &[f64], s: usize| -> Vec<f64> {
        sig[s..s + FRAME_LEN].iter().zip(&w).map(|(a, b)| a * b).collect()
    };
    let xf: Vec<Vec<f64>> = starts.iter().map(|&s| window(x, s)).collect();
    let yf: Vec<Vec<f64>> = starts.iter().map(|&s| window(y, s)).collect();
    let energies: Vec<f64> = xf
        .iter()
        .map(|f| 20.0 * (norm(f) + f64::EPSILON).log10())
        .collect();
    let max_e = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..xf.len())
        .filter(|&i| max_e - DYN_RANGE_DB - energies[i] < 0.0)
        .collect();
    let ola = |frames: &[Vec<f64>]| -> Vec<f64> {
        if keep.is_empty() {
            return Vec::new();
        }
        let mut out = vec![0.0; (keep.len() - 1) * HOP + FRAME_LEN];
        for (k, &i) in keep.iter().enumerate() {
            for (o, v) in out[k * HOP..k * HOP + FRAME_LEN].iter_mut().zip(&frames[i]) {
                *o += v;
            }
        }
        out
    };
    (ola(&xf), ola(&yf))
}

/// One-third-octave band envelopes, `bands × frames`.
fn band_envelopes(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann_inner(FRAME_LEN);
    let bins = NFFT / 2 + 1;
    let ranges = band_ranges();
    let mut out = vec![Vec::new(); NUM_BANDS];
    if x.len() <= FRAME_LEN {
        return out;
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    for start in (0..x.len() - FRAME_LEN).step_by(HOP) {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, (b, v)) in buf.iter_mut().zip(&x[start..start + FRAME_LEN]).enumerate() {
            *b = Complex::new(v * w[i], 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..bins].iter().map(|c| c.norm_sqr()).collect();
        for (band, &(lo, hi)) in out.iter_mut().zip(&ranges) {
            band.push(power[lo..hi].iter().sum::<f64>().sqrt());
        }
    }
    out
}

fn band_ranges() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins)
        .map(|i| i as f64 * STOI_RATE as f64 / NFFT as f64)
        .collect();
    let nearest = |f: f64| -> usize {
        let mut best = 0;
        for (i, v) in freqs.iter().enumerate() {
            if (v - f).powi(2) < (freqs[best] - f).powi(2) {
                best = i;
            }
        }
        best
    };
    (0..NUM_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Rational-factor polyphase resampling with a Kaiser-windowed sinc
/// anti-aliasing filter, zero-delay aligned.
pub fn resample(x: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == 0 || to == 0 {
        return Err(Error::InvalidArgument("sample rate must be positive".into()));
    }
    let g = gcd(from, to);
    let up = (to / g) as usize;
    let down = (from / g) as usize;
    if up == 1 && down == 1 {
        return Ok(x.to_vec());
    }
    let max_rate = up.max(down);
    let half = 10 * max_rate;
    let cutoff = 1.0 / max_rate as f64;
    let beta = 5.0;
    let i0b = bessel_i0(beta);
    let taps: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let t = i as f64 - half as f64;
            let arg = std::f64::consts::PI * cutoff * t;
            let sinc = if t == 0.0 { 1.0 } else { arg.sin() / arg };
            let r = t / half as f64;
            let win = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b;
            cutoff * sinc * win * up as f64
        })
        .collect();
    let out_len = (x.len() * up).div_ceil(down);
    let mut out = vec![0.0; out_len];
    for (m, o) in out.iter_mut().enumerate() {
        let u = (m * down) as isize;
        let n_lo = ((u - half as isize).max(0) as usize).div_ceil(up);
        let n_hi = (((u + half as isize) / up as isize) as usize).min(x.len().saturating_sub(1));
        let mut acc = 0.0;
        let mut n = n_lo;
        while n <= n_hi {
            let idx = (u - (n * up) as isize + half as isize) as usize;
            acc += x[n] * taps[idx];
            n += 1;
        }
        *o = acc;
    }
    Ok(out)
}
