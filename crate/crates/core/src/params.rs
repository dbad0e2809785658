//! Named, ordered parameter collections and deterministic initialization.
//!
//! A [`ParamSet`] is the persistent storage for trainable tensors. Order is
//! significant: binding to a tape, optimizer state, and checkpoint layout all
//! follow insertion order, which keeps every consumer deterministic.

use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{CoreError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(CoreError::Config(alloc::format!(
                "duplicate parameter name {name:?}"
            )));
        }
        self.entries.push(ParamEntry { name, value });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.value)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|e| &mut e.value)
    }

    /// Total number of scalar values across all entries.
    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Records every entry as a tape leaf, in order.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|e| tape.leaf(e.value.clone(), requires_grad))
            .collect()
    }
}

/// Deterministic parameter sampler: same seed, same bits, on every platform.
pub struct ParamInit {
    rng: ChaCha8Rng,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        ParamInit {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform draw in `(0, 1]`.
    pub fn uniform01(&mut self) -> f64 {
        (((self.rng.next_u64() >> 11) + 1) as f64) * (1.0 / (1u64 << 53) as f64)
    }

    /// One zero-mean normal draw with the given standard deviation
    /// (Box-Muller, cosine branch).
    pub fn normal(&mut self, std: f64) -> f64 {
        let u1 = self.uniform01();
        let u2 = self.uniform01();
        let mag = libm::sqrt(-2.0 * libm::log(u1));
        std * mag * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    pub fn normal_tensor(&mut self, shape: Vec<usize>, std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.normal(std)).collect();
        Tensor { shape, data }
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Tensor {
        Tensor::zeros(shape)
    }

    pub fn ones(&mut self, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: alloc::vec![1.0; n],
        }
    }
}
