use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Index of a parameter within a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter matrices in registration order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = libm::sqrt(6.0 / (fan_in + fan_out).max(1) as f64);
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.add(name, Matrix::from_vec(fan_in, fan_out, data))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Matrix::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    /// True when names and shapes agree entry by entry.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Replaces all values, keeping names; shapes must match.
    pub fn load_values(&mut self, values: Vec<Matrix>) -> Result<()> {
        if values.len() != self.values.len() || values.iter().zip(&self.values).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::InconsistentParams);
        }
        if values.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("parameter values"));
        }
        self.values = values;
        Ok(())
    }
}

/// One gradient matrix per parameter, aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Matrix>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.values.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
        }
    }

    pub fn from_matrices(grads: Vec<Matrix>) -> Self {
        Self { grads }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn as_slice(&self) -> &[Matrix] {
        &self.grads
    }

    pub(crate) fn add_to(&mut self, id: ParamId, g: &Matrix) {
        self.grads[id.0].add_assign(g);
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().for_each(|g| g.scale_assign(s));
    }

    /// Adds `other` entry by entry; layouts must agree.
    pub fn add_assign(&mut self, other: &ParamGrads) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::InconsistentParams);
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
        Ok(())
    }

    fn same_layout(&self, other: &ParamGrads) -> bool {
        self.grads.len() == other.grads.len()
            && self.grads.iter().zip(&other.grads).all(|(a, b)| a.shape() == b.shape())
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Sums micro-batch gradients and divides by the total number of samples.
///
/// Each entry of `micro` is the gradient of the summed per-sample loss over
/// `samples[i]` samples.
pub fn accumulate_gradients(micro: &[ParamGrads], samples: &[usize]) -> Result<ParamGrads> {
    if micro.is_empty() || micro.len() != samples.len() {
        return Err(Error::InvalidConfig(
            "accumulation needs one sample count per micro-batch".into(),
        ));
    }
    let total: usize = samples.iter().sum();
    if total == 0 {
        return Err(Error::Empty("accumulated batch"));
    }
    let mut out = micro[0].clone();
    for g in &micro[1..] {
        out.add_assign(g)?;
    }
    out.scale(1.0 / total as f64);
    Ok(out)
}

/// Running form of [`accumulate_gradients`].
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    sum: ParamGrads,
    samples: usize,
}

impl GradAccumulator {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            sum: ParamGrads::zeros_like(store),
            samples: 0,
        }
    }

    pub fn add(&mut self, grads: &ParamGrads, samples: usize) -> Result<()> {
        self.sum.add_assign(grads)?;
        self.samples += samples;
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Averaged gradients; the accumulator is reset.
    pub fn finish(&mut self) -> Result<ParamGrads> {
        if self.samples == 0 {
            return Err(Error::Empty("accumulated batch"));
        }
        let mut zero = self.sum.clone();
        zero.scale(0.0);
        let mut out = core::mem::replace(&mut self.sum, zero);
        out.scale(1.0 / self.samples as f64);
        self.samples = 0;
        Ok(out)
    }
}
