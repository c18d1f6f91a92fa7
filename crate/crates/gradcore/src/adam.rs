use crate::error::{GradError, Result};
use crate::params::ParamStore;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(GradError::Argument(format!("invalid Adam configuration {self:?}")))
        }
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, m: Vec::new(), v: Vec::new(), step: 0 })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> Option<&[T]> {
        self.m.get(i).map(Vec::as_slice)
    }

    pub fn second_moment(&self, i: usize) -> Option<&[T]> {
        self.v.get(i).map(Vec::as_slice)
    }

    /// Applies one update to every parameter, then clears the gradients.
    /// Every parameter must carry a gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        let (grads, values, names) = params.grads_and_values();
        if let Some(i) = grads.iter().position(Option::is_none) {
            return Err(GradError::State(format!("parameter {} has no gradient", names[i])));
        }
        if self.m.is_empty() {
            self.m = values.iter().map(|t| vec![T::zero(); t.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != values.len() {
            return Err(GradError::State("optimizer bound to a different parameter set".into()));
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        let bc1 = T::lit(1.0 - c.beta1.powf(self.step as f64));
        let bc2 = T::lit(1.0 - c.beta2.powf(self.step as f64));
        for (i, value) in values.iter_mut().enumerate() {
            let g = grads[i].as_ref().expect("checked above");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in value.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}
