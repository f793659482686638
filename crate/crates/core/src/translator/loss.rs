//! Least-squares adversarial and L1 objectives on plain tensors.
//!
//! The discriminator pushes real pairs to 1 and generated pairs to 0; the
//! generator pushes its pairs to 1 and adds a weighted pixel L1 term.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

fn mean_sq_to<T: Real>(t: &Tensor<T>, target: f64) -> f64 {
    t.data().iter().map(|v| (v.f64() - target).powi(2)).sum::<f64>() / t.numel() as f64
}

/// `mean((d_real - 1)^2) + mean(d_fake^2)`.
pub fn discriminator_loss<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<f64> {
    if d_real.shape() != d_fake.shape() {
        return Err(Error::Shape(format!("score maps {:?} vs {:?}", d_real.shape(), d_fake.shape())));
    }
    Ok(mean_sq_to(d_real, 1.0) + mean_sq_to(d_fake, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLoss {
    pub total: f64,
    pub adversarial: f64,
    pub l1: f64,
}

/// `mean((d_fake - 1)^2) + lambda * mean(|y - y_pred|)`.
pub fn generator_loss<T: Real>(d_fake: &Tensor<T>, y_pred: &Tensor<T>, y: &Tensor<T>, lambda: f64) -> Result<GeneratorLoss> {
    if y_pred.shape() != y.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", y_pred.shape(), y.shape())));
    }
    let adversarial = mean_sq_to(d_fake, 1.0);
    let l1 = mean_abs_diff(y_pred, y);
    Ok(GeneratorLoss { total: adversarial + lambda * l1, adversarial, l1 })
}

pub fn mean_abs_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data().iter().zip(b.data()).map(|(p, q)| (p.f64() - q.f64()).abs()).sum::<f64>() / a.numel() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn full(v: f64) -> Tensor<f64> {
        Tensor::full([2, 1, 3, 3], v)
    }

    #[test]
    fn perfect_and_fooled_discriminator() {
        assert_eq!(discriminator_loss(&full(1.0), &full(0.0)).unwrap(), 0.0);
        assert_eq!(discriminator_loss(&full(0.0), &full(1.0)).unwrap(), 2.0);
    }

    #[test]
    fn discriminator_loss_matches_elementwise_loop() {
        let mut rng = crate::seed::rng(11);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            Tensor::from_vec([2, 1, 5, 5], (0..50).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
        };
        let (real, fake) = (mk(&mut rng), mk(&mut rng));
        let mut a = 0.0;
        let mut b = 0.0;
        for i in 0..50 {
            a += (real.data()[i] - 1.0) * (real.data()[i] - 1.0);
            b += fake.data()[i] * fake.data()[i];
        }
        let expected = a / 50.0 + b / 50.0;
        assert!((discriminator_loss(&real, &fake).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn generator_loss_cases() {
        let y = full(0.5);
        assert_eq!(generator_loss(&full(1.0), &y, &y, 100.0).unwrap().total, 0.0);
        let off = full(0.75);
        let l = generator_loss(&full(1.0), &off, &y, 1.0).unwrap();
        assert!((l.total - 0.25).abs() < 1e-12);
        let l0 = generator_loss(&full(0.3), &off, &y, 0.0).unwrap();
        assert_eq!(l0.total, l0.adversarial);
        assert!(generator_loss(&full(1.0), &Tensor::<f64>::zeros([1, 1, 2, 2]), &y, 1.0).is_err());
    }
}
