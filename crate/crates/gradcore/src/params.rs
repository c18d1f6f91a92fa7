use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{GradError, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Ordered, uniquely named set of trainable tensors.
///
/// Iteration order is insertion order, which fixes both the initialization
/// draws and the checkpoint layout.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    seed: u64,
    rng: ChaCha8Rng,
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(GradError::Argument(format!("duplicate parameter name {name}")));
        }
        self.names.push(name);
        self.values.push(value);
        self.grads.push(None);
        Ok(self.names.len() - 1)
    }

    /// Kaiming-style normal init with standard deviation `sqrt(2 / fan_in)`.
    pub fn add_kaiming(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> Result<usize> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let dist = Normal::new(0.0, std).map_err(|e| GradError::Argument(e.to_string()))?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(dist.sample(&mut self.rng))).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_full(&mut self, name: impl Into<String>, shape: &[usize], value: T) -> Result<usize> {
        self.add(name, Tensor::full(shape.to_vec(), value))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, i: usize) -> &Tensor<T> {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.values[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Copies every parameter onto the tape as a leaf, in store order.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.values.iter().map(|v| g.leaf(v.clone(), trainable)).collect()
    }

    /// Adds the gradients a backward pass left on `vars` into the store.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, vars: &[Var]) -> Result<()> {
        if vars.len() != self.len() {
            return Err(GradError::Argument(format!(
                "{} bound variables for {} parameters",
                vars.len(),
                self.len()
            )));
        }
        for (i, v) in vars.iter().enumerate() {
            let Some(src) = g.grad(*v) else { continue };
            match &mut self.grads[i] {
                Some(acc) => acc.iter_mut().zip(src).for_each(|(a, s)| *a += *s),
                None => self.grads[i] = Some(src.to_vec()),
            }
        }
        Ok(())
    }

    pub fn grad(&self, i: usize) -> Option<&[T]> {
        self.grads[i].as_deref()
    }

    pub fn set_grad(&mut self, i: usize, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.values[i].len() {
            return Err(GradError::Shape(format!("gradient for {} has wrong length", self.names[i])));
        }
        self.grads[i] = Some(grad);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub(crate) fn grads_and_values(&mut self) -> (&[Option<Vec<T>>], &mut [Tensor<T>], &[String]) {
        (&self.grads, &mut self.values, &self.names)
    }
}
