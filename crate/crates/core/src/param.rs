//! Named parameters, non-trainable buffers, and Glorot initialization.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// A trainable tensor together with its Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Real = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub adam_m: Vec<T>,
    pub adam_v: Vec<T>,
    pub step_count: u64,
}

/// Non-trainable state that still belongs in a checkpoint (batch-norm
/// running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<T: Real = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Parameter<T>>,
    buffers: Vec<Buffer<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let n = tensor.len();
        self.params.push(Parameter {
            name: name.into(),
            tensor,
            adam_m: vec![T::ZERO; n],
            adam_v: vec![T::ZERO; n],
            step_count: 0,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> BufferId {
        self.buffers.push(Buffer {
            name: name.into(),
            tensor,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer<T> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Buffer<T> {
        &mut self.buffers[id.0]
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Overwrites a tensor by name (parameter or buffer); the shape must
    /// match what the model was built with.
    pub fn load_tensor(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let slot = if let Some(p) = self.params.iter_mut().find(|p| p.name == name) {
            &mut p.tensor
        } else if let Some(b) = self.buffers.iter_mut().find(|b| b.name == name) {
            &mut b.tensor
        } else {
            return Err(invalid("load_tensor", alloc::format!("unknown tensor `{name}`")));
        };
        if slot.shape() != tensor.shape() {
            return Err(crate::Error::ShapeMismatch {
                op: "load_tensor",
                lhs: slot.shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        *slot = tensor;
        Ok(())
    }
}

/// `(fan_in, fan_out)` of a weight shape: `[K, K, Cin, Cout]` for
/// convolutions, `[in, out]` for dense maps.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [i, o] => (*i, *o),
        _ => {
            let receptive: usize = shape[..shape.len() - 2].iter().product();
            let (cin, cout) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            (receptive * cin, receptive * cout)
        }
    }
}

/// Half-width of the Glorot uniform interval for `shape`.
pub fn glorot_limit(shape: &[usize]) -> f64 {
    let (fi, fo) = fans(shape);
    libm::sqrt(6.0 / (fi + fo) as f64)
}

/// Samples `U(-L, L)`, `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform_with<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor<T>> {
    if shape.is_empty() {
        return Err(invalid("glorot_uniform", "empty shape"));
    }
    let limit = glorot_limit(shape);
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-limit..=limit))).collect();
    Tensor::new(shape, data)
}

pub fn glorot_uniform_init<T: Real>(shape: &[usize], seed: u64) -> Result<Tensor<T>> {
    glorot_uniform_with(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_fans() {
        assert_eq!(fans(&[3, 3, 67, 64]), (9 * 67, 9 * 64));
        assert_eq!(fans(&[512, 18]), (512, 18));
    }

    #[test]
    fn glorot_support_determinism_mean() {
        let shape = [5, 5, 64, 128];
        let t: Tensor<f32> = glorot_uniform_init(&shape, 7).unwrap();
        let l = glorot_limit(&shape) as f32;
        assert!(t.data().iter().all(|v| v.abs() <= l));
        assert_eq!(t, glorot_uniform_init(&shape, 7).unwrap());
        assert_ne!(t, glorot_uniform_init(&shape, 8).unwrap());

        let big: Tensor<f64> = glorot_uniform_init(&[100_000, 1], 3).unwrap();
        let mean = big.data().iter().sum::<f64>() / 1e5;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!(glorot_uniform_init::<f32>(&[], 0).is_err());
    }
}
