use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng as _;

use crate::audio::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    None,
    /// Stored unconstrained; the effective value is `softplus(stored)`.
    Positive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub constraint: Constraint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>, constraint: Constraint) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            constraint,
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar values.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Effective value after applying the constraint.
    pub fn effective(&self, id: ParamId) -> Array2<f64> {
        let p = self.get(id);
        match p.constraint {
            Constraint::None => p.value.clone(),
            Constraint::Positive => p.value.mapv(softplus),
        }
    }

    /// Copies values from `other`, which must have the same names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} parameters vs {} expected",
                other.len(),
                self.len()
            )));
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.name != theirs.name || mine.value.dim() != theirs.value.dim() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter {} {:?} vs {} {:?}",
                    theirs.name,
                    theirs.value.dim(),
                    mine.name,
                    mine.value.dim()
                )));
            }
            mine.value.assign(&theirs.value);
        }
        Ok(())
    }
}

/// `ln(1 + e^u)`, floored at the smallest positive normal so the result
/// is strictly positive in floating point too.
pub fn softplus(u: f64) -> f64 {
    let v = if u > 30.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    };
    v.max(f64::MIN_POSITIVE)
}

/// Logistic function kept inside the open unit interval.
pub fn sigmoid(u: f64) -> f64 {
    let v = if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    };
    v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Stored value `u` with `softplus(u) = target`.
pub fn inverse_softplus(target: f64) -> f64 {
    target + (-(-target).exp_m1()).ln()
}

/// Uniform fan-in initialization with variance `1 / fan_in`.
pub fn fan_in_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut Rng) -> Array2<f64> {
    let bound = (3.0 / fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Gradient buffers aligned with a [`ParamStore`], with respect to the
/// stored (unconstrained) values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub values: Vec<Array2<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            values: store
                .params
                .iter()
                .map(|p| Array2::zeros(p.value.dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.values {
            a.mapv_inplace(|v| v * c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|a| a.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|a| a.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_inverse_and_positivity() {
        for t in [1e-3, 0.5, 1.0, 3.0, 40.0] {
            assert!((softplus(inverse_softplus(t)) - t).abs() < 1e-12 * t.max(1.0));
        }
        assert!(softplus(-700.0) > 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() == 0.0);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
