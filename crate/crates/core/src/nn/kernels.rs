//! Forward and backward kernels for the layer primitives. Latents are
//! `features × frames` matrices.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Latent = Array2<f64>;

/// Padding and dilation of a convolution over frames. Output length is
/// `K + pad_left + pad_right - dilation·(kernel - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvSpec {
    /// Length-preserving padding with `lookahead` frames of right context.
    pub fn same(kernel: usize, dilation: usize, lookahead: usize) -> Self {
        let span = dilation * (kernel - 1);
        assert!(lookahead <= span, "lookahead exceeds receptive span");
        Self {
            kernel,
            dilation,
            pad_left: span - lookahead,
            pad_right: lookahead,
        }
    }

    pub fn causal(kernel: usize, dilation: usize) -> Self {
        Self::same(kernel, dilation, 0)
    }

    pub fn out_len(&self, k: usize) -> usize {
        (k + self.pad_left + self.pad_right).saturating_sub(self.dilation * (self.kernel - 1))
    }

    /// Output range `[lo, hi)` whose input frame `k + offset` is in bounds.
    fn valid_range(&self, tap: usize, k_in: usize, k_out: usize) -> (usize, isize, usize) {
        let offset = (tap * self.dilation) as isize - self.pad_left as isize;
        let lo = (-offset).max(0) as usize;
        let hi = ((k_in as isize - offset).max(0) as usize).min(k_out);
        (lo, offset, hi.max(lo))
    }
}

/// Dense 1-D convolution. `w` is `C_out × (kernel·C_in)` with tap-major
/// columns: tap `t` occupies columns `t·C_in .. (t+1)·C_in`.
pub fn conv1d_forward(
    x: &ArrayView2<f64>,
    w: &ArrayView2<f64>,
    bias: Option<&ArrayView2<f64>>,
    spec: ConvSpec,
) -> Result<Latent> {
    let (c_in, k_in) = x.dim();
    let (c_out, cols) = w.dim();
    if cols != spec.kernel * c_in {
        return Err(Error::Shape(format!(
            "conv1d weight {c_out}x{cols} vs input channels {c_in} and kernel {}",
            spec.kernel
        )));
    }
    let k_out = spec.out_len(k_in);
    let mut out = Array2::zeros((c_out, k_out));
    for t in 0..spec.kernel {
        let (lo, off, hi) = spec.valid_range(t, k_in, k_out);
        if lo >= hi {
            continue;
        }
        let wt = w.slice(s![.., t * c_in..(t + 1) * c_in]);
        let xs = x.slice(s![.., (lo as isize + off) as usize..(hi as isize + off) as usize]);
        let mut os = out.slice_mut(s![.., lo..hi]);
        general_mat_mul(1.0, &wt, &xs, 1.0, &mut os);
    }
    if let Some(b) = bias {
        add_bias(&mut out, b)?;
    }
    Ok(out)
}

/// Returns `(dx, dw, db)`.
pub fn conv1d_backward(
    x: &ArrayView2<f64>,
    w: &ArrayView2<f64>,
    g: &ArrayView2<f64>,
    spec: ConvSpec,
) -> (Latent, Array2<f64>, Array2<f64>) {
    let (c_in, k_in) = x.dim();
    let k_out = g.ncols();
    let mut dx = Array2::zeros(x.dim());
    let mut dw = Array2::zeros(w.dim());
    for t in 0..spec.kernel {
        let (lo, off, hi) = spec.valid_range(t, k_in, k_out);
        if lo >= hi {
            continue;
        }
        let range = (lo as isize + off) as usize..(hi as isize + off) as usize;
        let wt = w.slice(s![.., t * c_in..(t + 1) * c_in]);
        let gs = g.slice(s![.., lo..hi]);
        let xs = x.slice(s![.., range.clone()]);
        let mut dxs = dx.slice_mut(s![.., range]);
        general_mat_mul(1.0, &wt.t(), &gs, 1.0, &mut dxs);
        let mut dwt = dw.slice_mut(s![.., t * c_in..(t + 1) * c_in]);
        general_mat_mul(1.0, &gs, &xs.t(), 1.0, &mut dwt);
    }
    (dx, dw, row_sums(g))
}

pub fn row_sums(g: &ArrayView2<f64>) -> Array2<f64> {
    g.sum_axis(Axis(1)).insert_axis(Axis(1))
}

pub fn add_bias(out: &mut Latent, b: &ArrayView2<f64>) -> Result<()> {
    if b.dim() != (out.nrows(), 1) {
        return Err(Error::Shape(format!(
            "bias {:?} vs {} channels",
            b.dim(),
            out.nrows()
        )));
    }
    for (mut row, &v) in out.rows_mut().into_iter().zip(b.column(0)) {
        row += v;
    }
    Ok(())
}

/// Depthwise convolution: channel `c` is filtered by row `c` of `w`
/// (`C × kernel`).
pub fn depthwise_forward(
    x: &ArrayView2<f64>,
    w: &ArrayView2<f64>,
    bias: Option<&ArrayView2<f64>>,
    spec: ConvSpec,
) -> Result<Latent> {
    let (c, k_in) = x.dim();
    if w.dim() != (c, spec.kernel) {
        return Err(Error::Shape(format!(
            "depthwise weight {:?} vs {c} channels, kernel {}",
            w.dim(),
            spec.kernel
        )));
    }
    let k_out = spec.out_len(k_in);
    let mut out = Array2::<f64>::zeros((c, k_out));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("fresh array");
    for ch in 0..c {
        let xr = &xs[ch * k_in..(ch + 1) * k_in];
        let orow = &mut os[ch * k_out..(ch + 1) * k_out];
        for t in 0..spec.kernel {
            let (lo, off, hi) = spec.valid_range(t, k_in, k_out);
            let wt = w[[ch, t]];
            if wt == 0.0 || hi == lo {
                continue;
            }
            let src = &xr[(lo as isize + off) as usize..(hi as isize + off) as usize];
            for (o, &v) in orow[lo..hi].iter_mut().zip(src) {
                *o += wt * v;
            }
        }
    }
    if let Some(b) = bias {
        add_bias(&mut out, b)?;
    }
    Ok(out)
}

pub fn depthwise_backward(
    x: &ArrayView2<f64>,
    w: &ArrayView2<f64>,
    g: &ArrayView2<f64>,
    spec: ConvSpec,
) -> (Latent, Array2<f64>, Array2<f64>) {
    let (c, k_in) = x.dim();
    let k_out = g.ncols();
    let mut dx = Array2::<f64>::zeros(x.dim());
    let mut dw = Array2::zeros(w.dim());
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let gs = g.as_standard_layout();
    let gs = gs.as_slice().expect("standard layout");
    let dxs = dx.as_slice_mut().expect("fresh array");
    for ch in 0..c {
        let xr = &xs[ch * k_in..(ch + 1) * k_in];
        let gr = &gs[ch * k_out..(ch + 1) * k_out];
        let dxr = &mut dxs[ch * k_in..(ch + 1) * k_in];
        for t in 0..spec.kernel {
            let (lo, off, hi) = spec.valid_range(t, k_in, k_out);
            let wt = w[[ch, t]];
            let range = (lo as isize + off) as usize..(hi as isize + off) as usize;
            let mut acc = 0.0;
            for ((&gv, &xv), d) in gr[lo..hi].iter().zip(&xr[range.clone()]).zip(&mut dxr[range]) {
                acc += gv * xv;
                *d += wt * gv;
            }
            dw[[ch, t]] = acc;
        }
    }
    (dx, dw, row_sums(g))
}

/// Which running mean centers past frames in the variance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceCentering {
    /// Frame `k - p` is centered by its own running mean `E[k - p]`.
    PerFrame,
    /// Every frame in the window is centered by the current mean `E[k]`.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElnConfig {
    /// Forgetting rate.
    pub alpha: f64,
    /// Window length is `n_taps + 1` frames.
    pub n_taps: usize,
    pub eps: f64,
    /// Exponent applied to the variance estimate.
    pub omega: f64,
    pub centering: VarianceCentering,
}

impl Default for ElnConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001f64.powf(1.0 / 640.0),
            n_taps: 640,
            eps: 1e-8,
            omega: 0.5,
            centering: VarianceCentering::PerFrame,
        }
    }
}

impl ElnConfig {
    pub fn with_omega(self, omega: f64) -> Self {
        Self { omega, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("eln.alpha must lie in (0, 1)".into()));
        }
        if self.n_taps == 0 || !(self.eps > 0.0) || !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::Config(
                "eln needs n_taps >= 1, eps > 0 and omega in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// `(1 - α)/F · α^p` for `p = 0..=N`.
    fn kernel(&self, features: usize) -> Vec<f64> {
        let c = (1.0 - self.alpha) / features as f64;
        let mut w = Vec::with_capacity(self.n_taps + 1);
        let mut a = 1.0;
        for _ in 0..=self.n_taps {
            w.push(c * a);
            a *= self.alpha;
        }
        w
    }
}

/// `out[k] = Σ_p kernel[p]·v[k - p]` (zeros before index 0), for the
/// geometric kernel `kernel[p] = kernel[0]·α^p`, by recursion.
fn causal_filter(v: &[f64], kernel: &[f64], alpha: f64) -> Vec<f64> {
    let c = kernel[0];
    let taps = kernel.len();
    let drop = kernel[taps - 1] * alpha;
    let mut out = vec![0.0; v.len()];
    let mut acc = 0.0;
    for k in 0..v.len() {
        acc = alpha * acc + c * v[k];
        if k >= taps {
            acc -= drop * v[k - taps];
        }
        out[k] = acc;
    }
    out
}

/// Adjoint of [`causal_filter`]: `out[m] = Σ_p kernel[p]·g[m + p]`.
fn causal_filter_adjoint(g: &[f64], kernel: &[f64], alpha: f64) -> Vec<f64> {
    let n = g.len();
    let c = kernel[0];
    let taps = kernel.len();
    let drop = kernel[taps - 1] * alpha;
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for m in (0..n).rev() {
        acc = alpha * acc + c * g[m];
        if m + taps < n {
            acc -= drop * g[m + taps];
        }
        out[m] = acc;
    }
    out
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ElnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// `(var + eps)^omega` per frame.
    pub denom: Vec<f64>,
    /// `(x - mean) / denom`.
    pub normalized: Latent,
}

/// Exponential layer normalization over a finite geometric window.
pub fn eln_forward(
    x: &ArrayView2<f64>,
    gamma: &ArrayView2<f64>,
    beta: &ArrayView2<f64>,
    cfg: &ElnConfig,
) -> Result<(Latent, ElnCache)> {
    let (f, k) = x.dim();
    if gamma.dim() != (f, 1) || beta.dim() != (f, 1) {
        return Err(Error::Shape(format!(
            "eln affine params {:?}/{:?} vs {f} features",
            gamma.dim(),
            beta.dim()
        )));
    }
    let kern = cfg.kernel(f);
    let sums: Vec<f64> = x.sum_axis(Axis(0)).to_vec();
    let mean = causal_filter(&sums, &kern, cfg.alpha);
    let var: Vec<f64> = match cfg.centering {
        VarianceCentering::PerFrame => {
            let mut q = vec![0.0; k];
            for row in x.rows() {
                for ((q, &v), &e) in q.iter_mut().zip(row).zip(&mean) {
                    *q += (v - e) * (v - e);
                }
            }
            causal_filter(&q, &kern, cfg.alpha)
        }
        VarianceCentering::Current => {
            let mut sq = vec![0.0; k];
            for row in x.rows() {
                for (s, &v) in sq.iter_mut().zip(row) {
                    *s += v * v;
                }
            }
            let second = causal_filter(&sq, &kern, cfg.alpha);
            let kappa = 1.0 + cfg.alpha.powi(cfg.n_taps as i32 + 1);
            second
                .iter()
                .zip(&mean)
                .map(|(s2, e)| (s2 - kappa * e * e).max(0.0))
                .collect()
        }
    };
    let denom: Vec<f64> = var.iter().map(|v| (v + cfg.eps).powf(cfg.omega)).collect();
    let mut normalized = x.to_owned();
    let mut out = Array2::zeros((f, k));
    for (j, (mut nrow, mut orow)) in normalized.rows_mut().into_iter().zip(out.rows_mut()).enumerate() {
        let (g, b) = (gamma[[j, 0]], beta[[j, 0]]);
        for (((n, o), &e), &dn) in nrow.iter_mut().zip(orow.iter_mut()).zip(&mean).zip(&denom) {
            *n = (*n - e) / dn;
            *o = *n * g + b;
        }
    }
    Ok((
        out,
        ElnCache {
            mean,
            var,
            denom,
            normalized,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn eln_backward(
    x: &ArrayView2<f64>,
    gamma: &ArrayView2<f64>,
    g: &ArrayView2<f64>,
    cache: &ElnCache,
    cfg: &ElnConfig,
) -> (Latent, Array2<f64>, Array2<f64>) {
    let (f, k) = x.dim();
    let kern = cfg.kernel(f);
    let mut dgamma = Array2::zeros((f, 1));
    let dbeta = row_sums(g);
    let mut dx = Array2::zeros((f, k));
    let mut sum_g = vec![0.0; k];
    let mut sum_gn = vec![0.0; k];
    let gs = g.as_standard_layout();
    let gs = gs.as_slice().expect("standard layout");
    let ns = cache.normalized.as_slice().expect("owned array");
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("standard layout");
    let dxs = dx.as_slice_mut().expect("fresh array");
    for j in 0..f {
        let gj = gamma[[j, 0]];
        let mut dg = 0.0;
        let rows = j * k..(j + 1) * k;
        for ((((&gv, &n), d), (sg, sgn)), &dn) in gs[rows.clone()]
            .iter()
            .zip(&ns[rows.clone()])
            .zip(&mut dxs[rows])
            .zip(sum_g.iter_mut().zip(sum_gn.iter_mut()))
            .zip(&cache.denom)
        {
            dg += gv * n;
            let gn = gv * gj;
            *sg += gn;
            *sgn += gn * n;
            *d = gn / dn;
        }
        dgamma[[j, 0]] = dg;
    }
    let mut d_mean = vec![0.0; k];
    let mut d_var = vec![0.0; k];
    for m in 0..k {
        let dn = cache.denom[m];
        d_mean[m] = -sum_g[m] / dn;
        // d(denom) = -Σ g·(x - E)/denom² = -Σ g·n/denom
        let d_denom = -sum_gn[m] / dn;
        if cfg.centering == VarianceCentering::Current && cache.var[m] == 0.0 {
            continue;
        }
        d_var[m] = d_denom * cfg.omega * dn / (cache.var[m] + cfg.eps);
    }
    match cfg.centering {
        VarianceCentering::PerFrame => {
            let dq = causal_filter_adjoint(&d_var, &kern, cfg.alpha);
            let mut col_sum = vec![0.0; k];
            for j in 0..f {
                let rows = j * k..(j + 1) * k;
                for ((((&xv, d), &e), &q), cs) in xs[rows.clone()]
                    .iter()
                    .zip(&mut dxs[rows])
                    .zip(&cache.mean)
                    .zip(&dq)
                    .zip(col_sum.iter_mut())
                {
                    let c = xv - e;
                    *d += 2.0 * c * q;
                    *cs += c;
                }
            }
            for m in 0..k {
                d_mean[m] -= 2.0 * dq[m] * col_sum[m];
            }
        }
        VarianceCentering::Current => {
            let ds2 = causal_filter_adjoint(&d_var, &kern, cfg.alpha);
            let kappa = 1.0 + cfg.alpha.powi(cfg.n_taps as i32 + 1);
            for j in 0..f {
                let rows = j * k..(j + 1) * k;
                for ((&xv, d), &q) in xs[rows.clone()].iter().zip(&mut dxs[rows]).zip(&ds2) {
                    *d += 2.0 * xv * q;
                }
            }
            for m in 0..k {
                d_mean[m] -= 2.0 * kappa * cache.mean[m] * d_var[m];
            }
        }
    }
    let ds = causal_filter_adjoint(&d_mean, &kern, cfg.alpha);
    for row in dxs.chunks_mut(k.max(1)) {
        for (d, &v) in row.iter_mut().zip(&ds) {
            *d += v;
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::rng_from_seed;
    use ndarray::Array2;
    use rand::Rng as _;

    fn rand_mat(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Triple-loop oracle straight from the convolution definition.
    fn naive_conv(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>, spec: ConvSpec) -> Array2<f64> {
        let (c_in, k_in) = x.dim();
        let c_out = w.nrows();
        let k_out = spec.out_len(k_in);
        let mut out = Array2::zeros((c_out, k_out));
        for o in 0..c_out {
            for k in 0..k_out {
                let mut acc = b[[o, 0]];
                for t in 0..spec.kernel {
                    let src = k as isize + (t * spec.dilation) as isize - spec.pad_left as isize;
                    if src < 0 || src >= k_in as isize {
                        continue;
                    }
                    for i in 0..c_in {
                        acc += w[[o, t * c_in + i]] * x[[i, src as usize]];
                    }
                }
                out[[o, k]] = acc;
            }
        }
        out
    }

    fn max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        assert_eq!(a.dim(), b.dim());
        a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn conv1d_identity_kernel() {
        let x = rand_mat(3, 9, 1);
        let mut w = Array2::zeros((3, 9));
        for c in 0..3 {
            w[[c, 3 + c]] = 1.0; // centre tap of kernel 3
        }
        let spec = ConvSpec::same(3, 1, 1);
        let y = conv1d_forward(&x.view(), &w.view(), None, spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv1d_zero_input_with_and_without_bias() {
        let x = Array2::zeros((2, 5));
        let w = rand_mat(4, 6, 2);
        let spec = ConvSpec::causal(3, 1);
        let y = conv1d_forward(&x.view(), &w.view(), None, spec).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        let b = rand_mat(4, 1, 3);
        let y = conv1d_forward(&x.view(), &w.view(), Some(&b.view()), spec).unwrap();
        for o in 0..4 {
            assert!(y.row(o).iter().all(|&v| v == b[[o, 0]]));
        }
    }

    #[test]
    fn conv1d_matches_naive_oracle() {
        let x = rand_mat(3, 7, 4);
        let w = rand_mat(5, 9, 5);
        let b = rand_mat(5, 1, 6);
        for spec in [ConvSpec::causal(3, 2), ConvSpec::same(3, 2, 2), ConvSpec::same(3, 2, 4)] {
            let y = conv1d_forward(&x.view(), &w.view(), Some(&b.view()), spec).unwrap();
            assert!(max_diff(&y, &naive_conv(&x, &w, &b, spec)) < 1e-12);
        }
        assert!(conv1d_forward(&x.view(), &rand_mat(5, 8, 1).view(), None, ConvSpec::causal(3, 2)).is_err());
    }

    #[test]
    fn depthwise_matches_naive_oracle() {
        let x = rand_mat(4, 11, 7);
        let w = rand_mat(4, 5, 8);
        let b = rand_mat(4, 1, 9);
        for spec in [ConvSpec::causal(5, 2), ConvSpec::same(5, 3, 5)] {
            let y = depthwise_forward(&x.view(), &w.view(), Some(&b.view()), spec).unwrap();
            let mut naive = Array2::zeros((4, spec.out_len(11)));
            for c in 0..4 {
                for k in 0..naive.ncols() {
                    let mut acc = b[[c, 0]];
                    for t in 0..5 {
                        let src = k as isize + (t * spec.dilation) as isize - spec.pad_left as isize;
                        if (0..11).contains(&src) {
                            acc += w[[c, t]] * x[[c, src as usize]];
                        }
                    }
                    naive[[c, k]] = acc;
                }
            }
            assert!(max_diff(&y, &naive) < 1e-12);
        }
    }

    #[test]
    fn causal_padding_does_not_see_future() {
        let mut x = rand_mat(2, 10, 10);
        let w = rand_mat(2, 3, 11);
        let spec = ConvSpec::causal(3, 2);
        let y0 = depthwise_forward(&x.view(), &w.view(), None, spec).unwrap();
        x[[0, 6]] += 1.0;
        let y1 = depthwise_forward(&x.view(), &w.view(), None, spec).unwrap();
        assert_eq!(y0.slice(s![.., ..6]), y1.slice(s![.., ..6]));
    }

    /// Literal double sums over the window, frames before 0 read as zero.
    fn eln_brute(x: &Array2<f64>, gamma: &Array2<f64>, beta: &Array2<f64>, cfg: &ElnConfig) -> Array2<f64> {
        let (f, k) = x.dim();
        let c = (1.0 - cfg.alpha) / f as f64;
        let frame = |m: isize, j: usize| if m < 0 { 0.0 } else { x[[j, m as usize]] };
        let mean: Vec<f64> = (0..k as isize)
            .map(|kk| {
                let mut acc = 0.0;
                for p in 0..=cfg.n_taps as isize {
                    for j in 0..f {
                        acc += cfg.alpha.powi(p as i32) * frame(kk - p, j);
                    }
                }
                c * acc
            })
            .collect();
        let mean_at = |m: isize| if m < 0 { 0.0 } else { mean[m as usize] };
        let mut out = Array2::zeros((f, k));
        for kk in 0..k as isize {
            let mut acc = 0.0;
            for p in 0..=cfg.n_taps as isize {
                let center = match cfg.centering {
                    VarianceCentering::PerFrame => mean_at(kk - p),
                    VarianceCentering::Current => mean[kk as usize],
                };
                for j in 0..f {
                    acc += cfg.alpha.powi(p as i32) * (frame(kk - p, j) - center).powi(2);
                }
            }
            let d = c * acc;
            for j in 0..f {
                out[[j, kk as usize]] = (x[[j, kk as usize]] - mean[kk as usize]) / (d + cfg.eps).powf(cfg.omega)
                    * gamma[[j, 0]]
                    + beta[[j, 0]];
            }
        }
        out
    }

    #[test]
    fn eln_matches_brute_force() {
        for (i, centering) in [VarianceCentering::PerFrame, VarianceCentering::Current].into_iter().enumerate() {
            for (n_taps, alpha) in [(5, 0.7), (640, ElnConfig::default().alpha)] {
                let cfg = ElnConfig { n_taps, alpha, centering, ..ElnConfig::default() };
                let x = rand_mat(5, 700, 40 + i as u64);
                let g = rand_mat(5, 1, 41);
                let b = rand_mat(5, 1, 42);
                let (y, _) = eln_forward(&x.view(), &g.view(), &b.view(), &cfg).unwrap();
                let want = eln_brute(&x, &g, &b, &cfg);
                let err = (&y - &want).mapv(f64::abs).fold(0.0f64, |a, &v| a.max(v));
                assert!(err < 1e-10, "{centering:?} N={n_taps}: {err}");
            }
        }
    }

    #[test]
    fn eln_window_is_causal_and_bounded() {
        let cfg = ElnConfig { n_taps: 4, alpha: 0.5, ..ElnConfig::default() };
        let g = Array2::ones((3, 1));
        let b = Array2::zeros((3, 1));
        let x = rand_mat(3, 30, 43);
        let (y0, _) = eln_forward(&x.view(), &g.view(), &b.view(), &cfg).unwrap();
        let mut x1 = x.clone();
        x1[[1, 10]] += 5.0;
        let (y1, _) = eln_forward(&x1.view(), &g.view(), &b.view(), &cfg).unwrap();
        for k in 0..30 {
            let changed = (0..3).any(|j| y0[[j, k]] != y1[[j, k]]);
            // PerFrame centering reaches back through the mean of earlier
            // frames, so the footprint spans two windows.
            assert_eq!(changed, (10..=10 + 2 * 4).contains(&k), "frame {k}");
        }
    }
}
