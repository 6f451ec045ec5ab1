//! Adam with bias correction and global-norm gradient clipping.

use ndarray::Array2;

use super::params::{Grads, ParamStore};

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = Grads::zeros_like(store).values;
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in store
            .iter_mut()
            .zip(&grads.values)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(&mut p.value)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

/// Scales `grads` so that their global l2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Constraint;
    use ndarray::array;

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut store = ParamStore::new();
        store.add("w", array![[1.0, -2.0]], Constraint::None);
        let before = store.clone();
        let mut adam = Adam::new(&store);
        let g = Grads::zeros_like(&store);
        for _ in 0..3 {
            adam.step(&mut store, &g, 1e-3);
        }
        assert_eq!(store, before);
    }

    #[test]
    fn clip_scales_exactly() {
        let mut store = ParamStore::new();
        store.add("w", array![[0.0, 0.0]], Constraint::None);
        let mut g = Grads::zeros_like(&store);
        g.values[0] = array![[6.0, 8.0]];
        let n = clip_global_norm(&mut g, 5.0);
        assert_eq!(n, 10.0);
        assert_eq!(g.values[0], array![[3.0, 4.0]]);
        let n = clip_global_norm(&mut g, 5.0);
        assert_eq!(n, 5.0);
        assert_eq!(g.values[0], array![[3.0, 4.0]]);
    }

    #[test]
    fn quadratic_converges() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[5.0]], Constraint::None);
        let mut adam = Adam::new(&store);
        let opt = 2.0;
        let start = (store.get(id).value[[0, 0]] - opt).abs();
        for _ in 0..100 {
            let w = store.get(id).value[[0, 0]];
            let mut g = Grads::zeros_like(&store);
            g.values[0][[0, 0]] = 2.0 * (w - opt);
            adam.step(&mut store, &g, 0.1);
        }
        let end = (store.get(id).value[[0, 0]] - opt).abs();
        assert!(end < start && end < 0.5, "{start} -> {end}");
    }
}
