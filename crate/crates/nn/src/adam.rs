use ndarray::{ArrayD, Zip};

use crate::error::{NnError, Result};
use crate::{Params, Scalar};

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    first: Vec<ArrayD<T>>,
    second: Vec<ArrayD<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T) -> Self {
        Adam {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update of `model` along `grads` (same type, same shapes).
    ///
    /// Rejects non-finite gradients before touching any parameter.
    pub fn step<M: Params<T>>(&mut self, model: &mut M, grads: &M) -> Result<()> {
        let grad_tensors = grads.tensors();
        for (name, g) in &grad_tensors {
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(format!("gradient of {name} (value {bad})")));
            }
        }
        if self.first.is_empty() {
            self.first = grad_tensors.iter().map(|(_, g)| ArrayD::zeros(g.raw_dim())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != grad_tensors.len() {
            return Err(NnError::Config("optimizer reused across models of different layout".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, eps) = (self.lr, self.eps);
        for (((param, (_, g)), m), v) in model
            .tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            Zip::from(param).and(&g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Activation, Dense};

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut rng = rand::rng();
        let mut layer = Dense::<f64>::new(3, 2, Activation::Linear, &mut rng);
        let before = layer.clone();
        let grads = layer.zeros_like();
        let mut opt = Adam::new(1e-3);
        for _ in 0..5 {
            opt.step(&mut layer, &grads).unwrap();
        }
        assert_eq!(layer, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Dense::<f64>::zeros(1, 1, Activation::Linear);
        let mut g = p.zeros_like();
        g.weights[[0, 0]] = 1.0;
        g.bias[0] = 1.0;
        let mut opt = Adam::new(0.001);
        opt.step(&mut p, &g).unwrap();
        assert!((p.weights[[0, 0]] + 0.001).abs() < 1e-10);
        // constant gradient keeps m_hat / sqrt(v_hat) at one
        opt.step(&mut p, &g).unwrap();
        assert!((p.weights[[0, 0]] + 0.002).abs() < 1e-10);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let mut p = Dense::<f64>::zeros(2, 1, Activation::Linear);
        let mut g = p.zeros_like();
        g.weights[[0, 1]] = f64::NAN;
        g.bias[0] = 1.0;
        let mut opt = Adam::new(0.001);
        assert!(matches!(opt.step(&mut p, &g), Err(NnError::NonFinite(_))));
        assert_eq!(p.bias[0], 0.0);
        assert_eq!(opt.steps_taken(), 0);
    }
}
