//! Tape-based reverse-mode differentiation over latent matrices.
//!
//! Operations append nodes to a [`Tape`] during the forward pass;
//! [`Tape::backward`] walks the tape in reverse and accumulates gradients
//! into a [`Grads`] aligned with the parameter store. Parameters are
//! borrowed, not copied.

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use super::kernels::{self, ConvSpec, ElnCache, ElnConfig, Latent};
use super::params::{sigmoid, softplus, Constraint, Grads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::metrics::sisnr_with_grad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Latent),
    Param(ParamId),
}

enum Op {
    Input,
    Param(ParamId),
    Conv1x1 {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Prelu {
        x: Var,
        slope: Var,
    },
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleRows {
        x: Var,
        s: Var,
    },
    Concat(Var, Var),
    Eln {
        x: Var,
        gamma: Var,
        beta: Var,
        cfg: ElnConfig,
        cache: ElnCache,
    },
    OverlapAdd {
        x: Var,
        hop: usize,
        left_pad: usize,
    },
    Sisnr {
        est: Var,
        grad: Option<Vec<f64>>,
    },
    Combine(Vec<(Var, f64)>),
    Sum(Var),
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a.view(),
            Value::Param(id) => self.store.get(*id).value.view(),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn push(&mut self, value: Latent, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Latent) -> Var {
        self.push(value, Op::Input, &[])
    }

    /// Leaf for a parameter; positive-constrained parameters come back
    /// through a softplus.
    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad: true,
        });
        let raw = Var(self.nodes.len() - 1);
        match self.store.get(id).constraint {
            Constraint::None => raw,
            Constraint::Positive => self.softplus(raw),
        }
    }

    pub fn conv1x1(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.ncols() != xv.nrows() {
            return Err(Error::Shape(format!(
                "1x1 conv weight {:?} vs input {:?}",
                wv.dim(),
                xv.dim()
            )));
        }
        let mut out = wv.dot(&xv);
        if let Some(b) = b {
            kernels::add_bias(&mut out, &self.value(b))?;
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv1x1 { x, w, b }, &inputs))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let bv = b.map(|b| self.value(b));
        let out = kernels::conv1d_forward(&self.value(x), &self.value(w), bv.as_ref(), spec)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv { x, w, b, spec }, &inputs))
    }

    pub fn depthwise(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let bv = b.map(|b| self.value(b));
        let out = kernels::depthwise_forward(&self.value(x), &self.value(w), bv.as_ref(), spec)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Depthwise { x, w, b, spec }, &inputs))
    }

    /// PReLU with a single learned slope.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Var {
        let a = self.scalar(slope);
        let out = self.value(x).mapv(|v| if v >= 0.0 { v } else { a * v });
        self.push(out, Op::Prelu { x, slope }, &[x, slope])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(softplus);
        self.push(out, Op::Softplus(x), &[x])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (da, db) = (self.value(a).dim(), self.value(b).dim());
        if da != db {
            return Err(Error::Shape(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = &self.value(a) + &self.value(b);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = &self.value(a) - &self.value(b);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = &self.value(a) * &self.value(b);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Multiplies row `f` of `x` by `s[f]` (`s` is `F × 1`).
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.dim() != (xv.nrows(), 1) {
            return Err(Error::Shape(format!(
                "row scale {:?} vs {:?}",
                sv.dim(),
                xv.dim()
            )));
        }
        let out = &xv * &sv;
        Ok(self.push(out, Op::ScaleRows { x, s }, &[x, s]))
    }

    /// Stacks `a` over `b` along the feature axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = concatenate(Axis(0), &[self.value(a), self.value(b)])
            .map_err(|e| Error::Shape(format!("concat: {e}")))?;
        Ok(self.push(out, Op::Concat(a, b), &[a, b]))
    }

    pub fn eln(&mut self, x: Var, gamma: Var, beta: Var, cfg: &ElnConfig) -> Result<Var> {
        let (out, cache) =
            kernels::eln_forward(&self.value(x), &self.value(gamma), &self.value(beta), cfg)?;
        Ok(self.push(
            out,
            Op::Eln {
                x,
                gamma,
                beta,
                cfg: *cfg,
                cache,
            },
            &[x, gamma, beta],
        ))
    }

    /// Overlap-adds the columns of `x` (`L × K`) into a `1 × len` signal:
    /// column `k` starts at sample `k·hop - left_pad`; samples outside
    /// `[0, len)` are dropped.
    pub fn overlap_add(&mut self, x: Var, hop: usize, left_pad: usize, len: usize) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((1, len));
        for k in 0..xv.ncols() {
            for l in 0..xv.nrows() {
                let n = (k * hop + l) as isize - left_pad as isize;
                if n >= 0 && (n as usize) < len {
                    out[[0, n as usize]] += xv[[l, k]];
                }
            }
        }
        self.push(out, Op::OverlapAdd { x, hop, left_pad }, &[x])
    }

    /// Scale-invariant SNR in dB of the `1 × T` estimate against a fixed
    /// target, optionally after removing both means.
    pub fn sisnr(&mut self, est: Var, target: &[f64], zero_mean: bool) -> Result<Var> {
        let ev = self.value(est);
        if ev.nrows() != 1 || ev.ncols() != target.len() {
            return Err(Error::LengthMismatch {
                left: ev.len(),
                right: target.len(),
            });
        }
        let est_s: Vec<f64> = ev.iter().copied().collect();
        let (value, grad) = sisnr_with_grad(&est_s, target, zero_mean)?;
        Ok(self.push(
            Array2::from_elem((1, 1), value),
            Op::Sisnr { est, grad },
            &[est],
        ))
    }

    /// `Σ coeff·scalar` over scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        let total = terms.iter().map(|&(v, c)| c * self.scalar(v)).sum();
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(
            Array2::from_elem((1, 1), total),
            Op::Combine(terms.to_vec()),
            &inputs,
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(x), &[x])
    }

    /// Gradients of the scalar `loss` with respect to every parameter's
    /// stored value.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(
                "backward called on a variable that is not on this tape".into(),
            ));
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).dim()
            )));
        }
        let mut param_grads = Grads::zeros_like(self.store);
        let mut grads: Vec<Option<Latent>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let needs = |v: Var| self.nodes[v.0].requires_grad;
            let acc = |v: Var, d: Latent, grads: &mut Vec<Option<Latent>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &d,
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => param_grads.values[id.index()] += &g,
                Op::Conv1x1 { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    if needs(*x) {
                        acc(*x, wv.t().dot(&g), &mut grads);
                    }
                    if needs(*w) {
                        acc(*w, g.dot(&xv.t()), &mut grads);
                    }
                    if let Some(b) = b {
                        acc(*b, kernels::row_sums(&g.view()), &mut grads);
                    }
                }
                Op::Conv { x, w, b, spec } => {
                    let (dx, dw, db) = kernels::conv1d_backward(
                        &self.value(*x),
                        &self.value(*w),
                        &g.view(),
                        *spec,
                    );
                    acc(*x, dx, &mut grads);
                    acc(*w, dw, &mut grads);
                    if let Some(b) = b {
                        acc(*b, db, &mut grads);
                    }
                }
                Op::Depthwise { x, w, b, spec } => {
                    let (dx, dw, db) = kernels::depthwise_backward(
                        &self.value(*x),
                        &self.value(*w),
                        &g.view(),
                        *spec,
                    );
                    acc(*x, dx, &mut grads);
                    acc(*w, dw, &mut grads);
                    if let Some(b) = b {
                        acc(*b, db, &mut grads);
                    }
                }
                Op::Prelu { x, slope } => {
                    let xv = self.value(*x);
                    let a = self.scalar(*slope);
                    let mut da = 0.0;
                    let mut dx = g;
                    ndarray::Zip::from(&mut dx).and(&xv).for_each(|d, &v| {
                        if v < 0.0 {
                            da += *d * v;
                            *d *= a;
                        }
                    });
                    acc(*x, dx, &mut grads);
                    acc(*slope, Array2::from_elem((1, 1), da), &mut grads);
                }
                Op::Sigmoid(x) => {
                    let y = self.value(Var(i));
                    let mut dx = g;
                    ndarray::Zip::from(&mut dx)
                        .and(&y)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    acc(*x, dx, &mut grads);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    ndarray::Zip::from(&mut dx).and(&xv).for_each(|d, &v| {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(*x, dx, &mut grads);
                }
                Op::Softplus(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    ndarray::Zip::from(&mut dx)
                        .and(&xv)
                        .for_each(|d, &v| *d *= sigmoid(v));
                    acc(*x, dx, &mut grads);
                }
                Op::Add(a, b) => {
                    if needs(*b) {
                        acc(*b, g.clone(), &mut grads);
                    }
                    acc(*a, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        acc(*b, -&g, &mut grads);
                    }
                    acc(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        acc(*a, &g * &self.value(*b), &mut grads);
                    }
                    if needs(*b) {
                        acc(*b, &g * &self.value(*a), &mut grads);
                    }
                }
                Op::ScaleRows { x, s } => {
                    if needs(*s) {
                        let ds = (&g * &self.value(*x))
                            .sum_axis(Axis(1))
                            .insert_axis(Axis(1));
                        acc(*s, ds, &mut grads);
                    }
                    if needs(*x) {
                        acc(*x, &g * &self.value(*s), &mut grads);
                    }
                }
                Op::Concat(a, b) => {
                    let fa = self.value(*a).nrows();
                    acc(*a, g.slice(ndarray::s![..fa, ..]).to_owned(), &mut grads);
                    acc(*b, g.slice(ndarray::s![fa.., ..]).to_owned(), &mut grads);
                }
                Op::Eln {
                    x,
                    gamma,
                    beta,
                    cfg,
                    cache,
                } => {
                    let (dx, dgamma, dbeta) = kernels::eln_backward(
                        &self.value(*x),
                        &self.value(*gamma),
                        &g.view(),
                        cache,
                        cfg,
                    );
                    acc(*x, dx, &mut grads);
                    acc(*gamma, dgamma, &mut grads);
                    acc(*beta, dbeta, &mut grads);
                }
                Op::OverlapAdd { x, hop, left_pad } => {
                    let (rows, cols) = self.value(*x).dim();
                    let len = g.ncols();
                    let dx = Array2::from_shape_fn((rows, cols), |(l, k)| {
                        let n = (k * hop + l) as isize - *left_pad as isize;
                        if n >= 0 && (n as usize) < len {
                            g[[0, n as usize]]
                        } else {
                            0.0
                        }
                    });
                    acc(*x, dx, &mut grads);
                }
                Op::Sisnr { est, grad } => {
                    if let Some(dg) = grad {
                        let s = g[[0, 0]];
                        let dx = Array2::from_shape_fn((1, dg.len()), |(_, n)| s * dg[n]);
                        acc(*est, dx, &mut grads);
                    }
                }
                Op::Combine(terms) => {
                    let s = g[[0, 0]];
                    for &(v, c) in terms {
                        acc(v, Array2::from_elem((1, 1), s * c), &mut grads);
                    }
                }
                Op::Sum(x) => {
                    let dim = self.value(*x).dim();
                    acc(*x, Array2::from_elem(dim, g[[0, 0]]), &mut grads);
                }
            }
        }
        Ok(param_grads)
    }
}
