//! Adaptive-moment optimizer.

use crate::error::{FdpError, Result};
use crate::numerics::{ParamId, ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    // Indexed by parameter position; `None` until the parameter first gets a gradient.
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        let c = config;
        if !(c.learning_rate > 0.0 && (0.0..1.0).contains(&c.beta1) && (0.0..1.0).contains(&c.beta2) && c.eps > 0.0) {
            return Err(FdpError::Config(format!("invalid optimizer settings {c:?}")));
        }
        Ok(Adam {
            config,
            step: 0,
            moments: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every trainable parameter in `grads`.
    pub fn step<T: Scalar>(&mut self, params: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        if self.moments.len() < params.len() {
            self.moments.resize(params.len(), None);
        }
        for (id, grad) in grads {
            if !params.is_trainable(*id) {
                continue;
            }
            let value = params.get_mut(*id);
            if value.shape() != grad.shape() {
                return Err(FdpError::Shape(format!(
                    "gradient {:?} for parameter {:?}",
                    grad.shape(),
                    value.shape()
                )));
            }
            let n = value.numel();
            let (m, v) = self.moments[id.0].get_or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.as_f64();
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *w = T::of(w.as_f64() - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.register("w", Tensor::from_vec(vec![2], vec![1.0, -1.0]).unwrap());
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.1, ..AdamConfig::default() }).unwrap();
        let g = Tensor::from_vec(vec![2], vec![3.0, -0.5]).unwrap();
        adam.step(&mut store, &[(id, g)]).unwrap();
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.register("w", Tensor::from_vec(vec![1], vec![5.0]).unwrap());
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.1, ..AdamConfig::default() }).unwrap();
        for _ in 0..500 {
            let w = store.get(id).data()[0];
            adam.step(&mut store, &[(id, Tensor::from_vec(vec![1], vec![2.0 * (w - 2.0)]).unwrap())])
                .unwrap();
        }
        assert!((store.get(id).data()[0] - 2.0).abs() < 1e-2);
    }
}
