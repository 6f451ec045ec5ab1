//! Convolution helpers shared by the echo simulator and tests.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Linear convolution via zero-padded FFT, truncated to `out_len` samples.
pub fn fft_convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut xa = pad_complex(x, n);
    let mut ha = pad_complex(h, n);
    fwd.process(&mut xa);
    fwd.process(&mut ha);
    for (a, b) in xa.iter_mut().zip(&ha) {
        *a *= b;
    }
    inv.process(&mut xa);
    let scale = 1.0 / n as f64;
    (0..out_len)
        .map(|i| if i < full { xa[i].re * scale } else { 0.0 })
        .collect()
}

/// Direct O(N·L) convolution, truncated to `out_len` samples.
pub fn direct_convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_len];
    for (n, o) in out.iter_mut().enumerate() {
        let lo = (n + 1).saturating_sub(h.len());
        for m in lo..=n.min(x.len().saturating_sub(1)) {
            if m < x.len() {
                *o += x[m] * h[n - m];
            }
        }
    }
    out
}

pub(crate) fn pad_complex(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for (d, &s) in v.iter_mut().zip(x) {
        d.re = s;
    }
    v
}
