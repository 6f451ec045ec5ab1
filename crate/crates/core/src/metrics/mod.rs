//! Training objective and evaluation metrics.

pub mod report;
pub mod stoi;

use std::f64::consts::LN_10;

use crate::error::{Error, Result};

pub use report::{ItemMetrics, MetricsReport};
pub use stoi::stoi;

/// Magnitude at which dB ratios are clamped (perfect or null reconstruction).
pub const CLAMP_DB: f64 = 300.0;

/// Scale-invariant SNR in dB and its gradient with respect to `est`
/// (`None` when the value is clamped).
pub fn sisnr_with_grad(est: &[f64], target: &[f64], zero_mean: bool) -> Result<(f64, Option<Vec<f64>>)> {
    if est.len() != target.len() {
        return Err(Error::LengthMismatch {
            left: est.len(),
            right: target.len(),
        });
    }
    let center = |v: &[f64]| -> Vec<f64> {
        if zero_mean && !v.is_empty() {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| x - m).collect()
        } else {
            v.to_vec()
        }
    };
    let s = center(target);
    let e_hat = center(est);
    let s_energy: f64 = s.iter().map(|v| v * v).sum();
    if s_energy == 0.0 {
        return Err(Error::InvalidArgument("SISNR target has zero energy".into()));
    }
    let proj: f64 = e_hat.iter().zip(&s).map(|(a, b)| a * b).sum();
    let scale = proj / s_energy;
    let t_energy = proj * proj / s_energy;
    let noise: Vec<f64> = e_hat.iter().zip(&s).map(|(a, b)| a - scale * b).collect();
    let n_energy: f64 = noise.iter().map(|v| v * v).sum();
    if n_energy == 0.0 || t_energy > n_energy * 1e30 {
        return Ok((CLAMP_DB, None));
    }
    if t_energy < n_energy * 1e-30 {
        return Ok((-CLAMP_DB, None));
    }
    let value = 10.0 * (t_energy / n_energy).log10();
    let c = 10.0 / LN_10;
    let mut grad: Vec<f64> = s
        .iter()
        .zip(&noise)
        .map(|(sv, nv)| c * (2.0 * sv / proj - 2.0 * nv / n_energy))
        .collect();
    if zero_mean {
        let m = grad.iter().sum::<f64>() / grad.len() as f64;
        grad.iter_mut().for_each(|g| *g -= m);
    }
    Ok((value, Some(grad)))
}

/// Scale-invariant source-to-noise ratio in dB, clamped to ±300 dB.
pub fn sisnr(est: &[f64], target: &[f64], zero_mean: bool) -> Result<f64> {
    sisnr_with_grad(est, target, zero_mean).map(|(v, _)| v)
}

/// Scale-projection SDR ("SDR-proj"): the SISNR formula without mean
/// removal. Not the filtered BSS-eval SDR.
pub fn sdr_proj(est: &[f64], target: &[f64]) -> Result<f64> {
    sisnr(est, target, false)
}

/// Echo return loss enhancement `10·log10(Σy² / Σe²)` over samples
/// `skip..`, clamped to 300 dB when the residual is silent.
pub fn erle(y: &[f64], e: &[f64], skip: usize) -> Result<f64> {
    if y.len() != e.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: e.len(),
        });
    }
    if skip >= y.len() {
        return Err(Error::TooShort(format!(
            "ERLE window starts at {skip} but signal has {} samples",
            y.len()
        )));
    }
    let num: f64 = y[skip..].iter().map(|v| v * v).sum();
    let den: f64 = e[skip..].iter().map(|v| v * v).sum();
    if den == 0.0 || num > den * 1e30 {
        return Ok(CLAMP_DB);
    }
    Ok(10.0 * (num / den).log10())
}

/// Per-level normalized weights of the multi-level objective: the final
/// output has weight `1/Z`, intermediate level `i` (1-based) `w^(R-i)/Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub last: f64,
    pub intermediate: Vec<f64>,
    pub denominator: f64,
}

pub fn loss_weights(w: f64, repeats: usize) -> LossWeights {
    let raw: Vec<f64> = (1..repeats).map(|i| w.powi((repeats - i) as i32)).collect();
    let denominator = 1.0 + raw.iter().sum::<f64>();
    LossWeights {
        last: 1.0 / denominator,
        intermediate: raw.iter().map(|r| r / denominator).collect(),
        denominator,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub loss_last: f64,
    /// Losses of the intermediate estimates, level 1 first.
    pub loss_i: Vec<f64>,
    pub total: f64,
    pub w: f64,
}

impl LossBreakdown {
    pub fn new(loss_last: f64, loss_i: Vec<f64>, w: f64) -> Self {
        let lw = loss_weights(w, loss_i.len() + 1);
        let total = (loss_last
            + loss_i
                .iter()
                .zip(&lw.intermediate)
                .map(|(l, c)| l * c * lw.denominator)
                .sum::<f64>())
            / lw.denominator;
        Self {
            loss_last,
            loss_i,
            total,
            w,
        }
    }
}

/// Weighted multi-level loss with component losses `-SISNR`.
pub fn total_loss(
    s_hat: &[f64],
    intermediates: &[Vec<f64>],
    target: &[f64],
    w: f64,
    repeats: usize,
    zero_mean: bool,
) -> Result<LossBreakdown> {
    if intermediates.len() + 1 != repeats {
        return Err(Error::InvalidArgument(format!(
            "expected {} intermediate estimates, got {}",
            repeats.saturating_sub(1),
            intermediates.len()
        )));
    }
    let loss_last = -sisnr(s_hat, target, zero_mean)?;
    let loss_i = intermediates
        .iter()
        .map(|e| sisnr(e, target, zero_mean).map(|v| -v))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::new(loss_last, loss_i, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::rng_from_seed;
    use rand::Rng as _;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn sisnr_hand_case() {
        let v = sisnr(&[1.0, 0.0], &[1.0, 1.0], false).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn sisnr_perfect_is_clamped() {
        let s = noise(100, 1);
        let est: Vec<f64> = s.iter().map(|v| 3.0 * v).collect();
        assert_eq!(sisnr(&est, &s, true).unwrap(), CLAMP_DB);
        assert!(sisnr(&s, &[0.0; 100], true).is_err());
    }

    #[test]
    fn sisnr_scale_invariant() {
        let s = noise(500, 2);
        let e = noise(500, 3);
        let est: Vec<f64> = s.iter().zip(&e).map(|(a, b)| a + 0.3 * b).collect();
        let base = sisnr(&est, &s, true).unwrap();
        for a in [0.1, 1.0, 10.0] {
            let scaled: Vec<f64> = est.iter().map(|v| a * v).collect();
            assert!((sisnr(&scaled, &s, true).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn sisnr_increases_as_error_shrinks() {
        let s = noise(300, 4);
        let e = noise(300, 5);
        let mut last = f64::NEG_INFINITY;
        for k in [1.0, 0.5, 0.25, 0.1, 0.01] {
            let est: Vec<f64> = s.iter().zip(&e).map(|(a, b)| a + k * b).collect();
            let v = sisnr(&est, &s, false).unwrap();
            assert!(v > last && v <= CLAMP_DB);
            last = v;
        }
    }

    #[test]
    fn sisnr_gradient_matches_finite_differences() {
        let s = noise(40, 6);
        let est: Vec<f64> = s.iter().zip(noise(40, 7)).map(|(a, b)| a + 0.5 * b).collect();
        for zero_mean in [false, true] {
            let (_, g) = sisnr_with_grad(&est, &s, zero_mean).unwrap();
            let g = g.unwrap();
            let h = 1e-6;
            for i in 0..est.len() {
                let mut p = est.clone();
                p[i] += h;
                let mut m = est.clone();
                m[i] -= h;
                let fd = (sisnr(&p, &s, zero_mean).unwrap() - sisnr(&m, &s, zero_mean).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1.0), "{i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn sdr_equals_sisnr_without_centering() {
        let s = noise(200, 8);
        let est = noise(200, 9);
        assert!((sdr_proj(&est, &s).unwrap() - sisnr(&est, &s, false).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn erle_examples() {
        let y = noise(1000, 10);
        assert!(erle(&y, &y, 0).unwrap().abs() < 1e-12);
        let e: Vec<f64> = y.iter().map(|v| v / 10.0).collect();
        assert!((erle(&y, &e, 0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(erle(&y, &[0.0; 1000], 0).unwrap(), CLAMP_DB);
        assert!(erle(&y, &y, 1000).is_err());
        for g in [0.5, 2.0, 7.0] {
            let eg: Vec<f64> = e.iter().map(|v| v * g).collect();
            let diff = erle(&y, &eg, 100).unwrap() - erle(&y, &e, 100).unwrap();
            assert!((diff + 20.0 * f64::log10(g)).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_weights_arithmetic() {
        let w = 0.5f64.sqrt();
        let lw = loss_weights(w, 4);
        assert!((lw.denominator - 2.56066).abs() < 1e-5);
        let raw: Vec<f64> = lw.intermediate.iter().map(|c| c * lw.denominator).collect();
        assert!((raw[0] - 0.35355).abs() < 1e-5);
        assert!((raw[1] - 0.5).abs() < 1e-12);
        assert!((raw[2] - 0.70711).abs() < 1e-5);
        let b = LossBreakdown::new(-3.0, vec![-3.0, -3.0, -3.0], w);
        assert!((b.total + 3.0).abs() < 1e-12);
        let b = LossBreakdown::new(-3.0, vec![5.0, 6.0, 7.0], 0.0);
        assert_eq!(b.total, -3.0);
    }

    #[test]
    fn total_loss_requires_all_intermediates() {
        let s = noise(64, 11);
        assert!(total_loss(&s, &[], &s, 0.7, 4, true).is_err());
        let inter = vec![noise(64, 12), noise(64, 13), noise(64, 14)];
        let b = total_loss(&noise(64, 15), &inter, &s, 0.7, 4, true).unwrap();
        assert_eq!(b.loss_i.len(), 3);
        let again = LossBreakdown::new(b.loss_last, b.loss_i.clone(), b.w);
        assert!((again.total - b.total).abs() < 1e-12);
    }
}
