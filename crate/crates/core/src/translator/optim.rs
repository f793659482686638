use std::collections::BTreeMap;

use super::nets::ParamSet;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self { beta1, beta2, eps: 1e-8, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr`. Parameters without a
    /// gradient are left untouched.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &BTreeMap<String, Tensor<T>>, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step_size = T::of(lr / c1);
        let inv_c2 = T::of(1.0 / c2);
        let eps = T::of(self.eps);
        for (name, tensor) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != tensor.shape() {
                return Err(Error::Shape(format!("gradient for {name} has shape {:?}", g.shape())));
            }
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.numel()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.numel()]);
            for (((p, &gi), mi), vi) in tensor.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                *p -= step_size * *mi / ((*vi * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translator::nets::Role;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut params = ParamSet::<f64>::new(Role::Generator);
        params.insert("w", Tensor::from_vec([1, 1, 1, 2], vec![1.0, -1.0]).unwrap()).unwrap();
        let grads = BTreeMap::from([("w".to_string(), Tensor::from_vec([1, 1, 1, 2], vec![3.0, -0.5]).unwrap())]);
        let mut adam = Adam::new(0.5, 0.999);
        adam.update(&mut params, &grads, 0.1).unwrap();
        let w = params.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }
}
