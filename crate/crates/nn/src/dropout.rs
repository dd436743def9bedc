use ndarray::{Array, Dimension};
use rand::Rng;

use crate::error::{NnError, Result};
use crate::Scalar;

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` during
/// training so inference is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Samples a mask of `0` / `1/(1-rate)` entries.
    pub fn mask<T: Scalar, D: Dimension, R: Rng + ?Sized>(&self, shape: D, rng: &mut R) -> Array<T, D> {
        let keep = 1.0 - self.rate;
        let scale = T::of(1.0 / keep);
        Array::from_shape_simple_fn(shape, || {
            if rng.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        })
    }

    /// Returns the output and, in training mode with a non-zero rate, the mask used.
    pub fn apply<T: Scalar, D: Dimension, R: Rng + ?Sized>(
        &self,
        x: &Array<T, D>,
        training: bool,
        rng: &mut R,
    ) -> (Array<T, D>, Option<Array<T, D>>) {
        if !training || self.rate == 0.0 {
            return (x.clone(), None);
        }
        let mask = self.mask(x.raw_dim(), rng);
        (x * &mask, Some(mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_and_inference_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array1::from_vec(vec![1.0, -2.0, 3.5]);
        let (y, m) = Dropout::new(0.0).unwrap().apply(&x, true, &mut rng);
        assert_eq!(y, x);
        assert!(m.is_none());
        let (y, m) = Dropout::new(0.2).unwrap().apply(&x, false, &mut rng);
        assert_eq!(y, x);
        assert!(m.is_none());
    }

    #[test]
    fn rejects_rate_of_one() {
        assert!(Dropout::new(1.0).is_err());
        assert!(Dropout::new(-0.1).is_err());
    }

    #[test]
    fn expectation_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Array1::from_elem(100_000, 1.0f64);
        let (y, _) = Dropout::new(0.2).unwrap().apply(&x, true, &mut rng);
        let mean = y.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        let dropped = y.iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((dropped - 0.2).abs() < 0.01);
    }
}
