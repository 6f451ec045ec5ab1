//! Frequency-domain adaptive Kalman filter (FDKF) used as the linear echo
//! canceller. Overlap-save with 50% frame shift: each block of `block_len`
//! new samples is processed with a `2·block_len` FFT, and the filter image is
//! constrained to `block_len` taps after every correction.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::audio::{write_wav, Waveform};
use crate::echo::{Manifest, ScenarioItem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdkfConfig {
    /// New samples per block; the filter has this many taps.
    pub block_len: usize,
    /// State transition coefficient in (0, 1).
    pub transition: f64,
    /// Exponential smoothing factor for the observation-noise PSD.
    pub psi_smoothing: f64,
    /// Initial state-error variance per bin, relative to the microphone to
    /// far-end power ratio of the first block whose far-end power is within
    /// 30 dB of the microphone power.
    pub p_init: f64,
    /// Guard added to denominators.
    pub eps: f64,
}

impl Default for FdkfConfig {
    fn default() -> Self {
        Self {
            block_len: 4096,
            transition: 0.999,
            psi_smoothing: 0.9,
            p_init: 1.0,
            eps: 1e-10,
        }
    }
}

impl FdkfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_len == 0 {
            return Err(Error::Config("fdkf.block_len must be > 0".into()));
        }
        if !(self.transition > 0.0 && self.transition < 1.0) {
            return Err(Error::Config("fdkf.transition must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.psi_smoothing) {
            return Err(Error::Config("fdkf.psi_smoothing must lie in [0, 1)".into()));
        }
        if !(self.p_init >= 0.0 && self.eps > 0.0) {
            return Err(Error::Config("fdkf.p_init must be >= 0 and fdkf.eps > 0".into()));
        }
        Ok(())
    }
}

/// Largest microphone to far-end power ratio accepted for priming.
const PRIME_MAX_RATIO: f64 = 1e3;

pub struct FdkfState {
    cfg: FdkfConfig,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    /// Filter estimate in the (unnormalized) DFT domain, 2·block_len bins.
    w_hat: Vec<Complex64>,
    /// State-error variance per bin.
    p: Vec<f64>,
    /// Observation-noise PSD estimate per bin.
    psi_ss: Vec<f64>,
    x_buffer: Vec<f64>,
    scratch: Vec<Complex64>,
    primed: bool,
}

/// Output of one block: residual `s_aec = y - d_hat` and the filter output.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub s_aec: Vec<f64>,
    pub d_hat: Vec<f64>,
}

impl FdkfState {
    pub fn new(cfg: FdkfConfig) -> Result<Self> {
        cfg.validate()?;
        let n = 2 * cfg.block_len;
        let mut planner = FftPlanner::new();
        Ok(Self {
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
            w_hat: vec![Complex64::new(0.0, 0.0); n],
            p: vec![cfg.p_init; n],
            psi_ss: vec![0.0; n],
            x_buffer: vec![0.0; n],
            scratch: vec![Complex64::new(0.0, 0.0); n],
            primed: false,
            cfg,
        })
    }

    pub fn config(&self) -> &FdkfConfig {
        &self.cfg
    }

    pub fn state_variance(&self) -> &[f64] {
        &self.p
    }

    pub fn noise_psd(&self) -> &[f64] {
        &self.psi_ss
    }

    /// Time-domain filter taps (first `block_len` samples of the filter image).
    pub fn filter_taps(&self) -> Vec<f64> {
        let n = self.w_hat.len();
        let mut buf = self.w_hat.clone();
        self.ifft.process(&mut buf);
        buf[..n / 2].iter().map(|c| c.re / n as f64).collect()
    }

    /// Processes one block of far-end `x` and microphone `y` samples.
    pub fn process_block(&mut self, x_block: &[f64], y_block: &[f64]) -> Result<BlockOutput> {
        let b = self.cfg.block_len;
        if x_block.len() != b || y_block.len() != b {
            return Err(Error::LengthMismatch {
                left: x_block.len().min(y_block.len()),
                right: b,
            });
        }
        let n = 2 * b;
        let inv_n = 1.0 / n as f64;
        let a = self.cfg.transition;
        let eps = self.cfg.eps;

        if !self.primed {
            let ex: f64 = x_block.iter().map(|v| v * v).sum();
            let ey: f64 = y_block.iter().map(|v| v * v).sum();
            if ex > 0.0 && ey <= PRIME_MAX_RATIO * ex {
                self.p.fill(self.cfg.p_init * ey / ex);
                self.primed = true;
            }
        }

        self.x_buffer.copy_within(b.., 0);
        self.x_buffer[b..].copy_from_slice(x_block);
        let mut xf: Vec<Complex64> = self
            .x_buffer
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.fft.process(&mut xf);

        // predict
        for k in 0..n {
            self.p[k] = a * a * self.p[k] + (1.0 - a * a) * self.w_hat[k].norm_sqr();
            self.w_hat[k] *= a;
        }

        // filter output: valid (last) half of the circular convolution
        for k in 0..n {
            self.scratch[k] = xf[k] * self.w_hat[k];
        }
        self.ifft.process(&mut self.scratch);
        let d_hat: Vec<f64> = self.scratch[b..].iter().map(|c| c.re * inv_n).collect();
        let s_aec: Vec<f64> = y_block.iter().zip(&d_hat).map(|(y, d)| y - d).collect();

        // innovation spectrum of the zero-prefixed error block
        let mut ef = vec![Complex64::new(0.0, 0.0); n];
        for (dst, &e) in ef[b..].iter_mut().zip(&s_aec) {
            dst.re = e;
        }
        self.fft.process(&mut ef);

        let lam = self.cfg.psi_smoothing;
        for k in 0..n {
            self.psi_ss[k] = lam * self.psi_ss[k] + (1.0 - lam) * ef[k].norm_sqr();
            let x2 = xf[k].norm_sqr();
            let denom = x2 * self.p[k] + 2.0 * self.psi_ss[k] + eps;
            let gain = xf[k].conj() * (self.p[k] / denom);
            self.w_hat[k] += gain * ef[k];
            // gain·X = p·|X|²/denom is real and lies in [0, 1)
            let kx = self.p[k] * x2 / denom;
            self.p[k] = ((1.0 - 0.5 * kx) * self.p[k]).max(0.0);
        }

        // constrain the filter image to block_len taps
        self.ifft.process(&mut self.w_hat);
        for (i, c) in self.w_hat.iter_mut().enumerate() {
            if i >= b {
                *c = Complex64::new(0.0, 0.0);
            } else {
                *c *= inv_n;
            }
        }
        self.fft.process(&mut self.w_hat);

        Ok(BlockOutput { s_aec, d_hat })
    }

    /// Runs the filter over whole signals, zero-padding the final block.
    pub fn process(&mut self, x: &[f64], y: &[f64]) -> Result<BlockOutput> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
        let b = self.cfg.block_len;
        let mut d_hat = Vec::with_capacity(x.len() + b);
        let mut xb = vec![0.0; b];
        let mut yb = vec![0.0; b];
        for start in (0..x.len()).step_by(b) {
            let end = (start + b).min(x.len());
            xb.fill(0.0);
            yb.fill(0.0);
            xb[..end - start].copy_from_slice(&x[start..end]);
            yb[..end - start].copy_from_slice(&y[start..end]);
            let out = self.process_block(&xb, &yb)?;
            d_hat.extend_from_slice(&out.d_hat[..end - start]);
        }
        let s_aec = y.iter().zip(&d_hat).map(|(y, d)| y - d).collect();
        Ok(BlockOutput { s_aec, d_hat })
    }
}

/// Runs the canceller on `item`, filling `s_aec` and `d_hat`.
pub fn run_laec(item: &mut ScenarioItem, cfg: &FdkfConfig) -> Result<()> {
    let mut state = FdkfState::new(*cfg)?;
    let out = state.process(&item.x.samples, &item.y.samples)?;
    let rate = item.y.sample_rate;
    item.s_aec = Some(Waveform::new(out.s_aec, rate));
    item.d_hat = Some(Waveform::new(out.d_hat, rate));
    Ok(())
}

/// Runs the canceller on every manifest item, writing `s_aec.wav` and
/// `d_hat.wav` next to each item's audio and updating the manifest file.
pub fn laec_manifest(manifest: &mut Manifest, cfg: &FdkfConfig, jobs: usize) -> Result<()> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let m = &*manifest;
    let paths = pool.install(|| {
        m.records
            .par_iter()
            .map(|rec| {
                let mut item = m.load_item(rec)?;
                run_laec(&mut item, cfg)?;
                let dir = rec.paths.y.parent().map(Path::to_path_buf).unwrap_or_default();
                let s_rel = dir.join("s_aec.wav");
                let d_rel = dir.join("d_hat.wav");
                write_wav(m.resolve(&s_rel), item.s_aec.as_ref().expect("set by run_laec"))?;
                write_wav(m.resolve(&d_rel), item.d_hat.as_ref().expect("set by run_laec"))?;
                Ok((s_rel, d_rel))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (rec, (s_rel, d_rel)) in manifest.records.iter_mut().zip(paths) {
        rec.paths.s_aec = Some(s_rel);
        rec.paths.d_hat = Some(d_rel);
    }
    manifest.write()
}

/// Echo attenuation `10·log10(Σd² / Σ(d - d_hat)²)` from sample `skip` on.
pub fn echo_attenuation_db(d: &[f64], d_hat: &[f64], skip: usize) -> f64 {
    let num: f64 = d[skip..].iter().map(|v| v * v).sum();
    let den: f64 = d[skip..]
        .iter()
        .zip(&d_hat[skip..])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    10.0 * (num / den).log10()
}
