use ndarray::{Array, ArrayView, Dimension, Zip};

use crate::error::{check_shape, Result};
use crate::Scalar;

/// Mean squared error over all elements, with its gradient w.r.t. `pred`.
pub fn mse_loss<T: Scalar, D: Dimension>(
    pred: ArrayView<'_, T, D>,
    target: ArrayView<'_, T, D>,
) -> Result<(T, Array<T, D>)> {
    check_shape("mse operands", target.shape(), pred.shape())?;
    let count = T::from_usize(pred.len().max(1)).unwrap();
    let mut grad = Array::zeros(pred.raw_dim());
    let mut total = T::zero();
    let two = T::of(2.0);
    Zip::from(&mut grad)
        .and(&pred)
        .and(&target)
        .for_each(|g, &p, &t| {
            let d = p - t;
            total += d * d;
            *g = two * d / count;
        });
    Ok((total / count, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn equal_inputs_have_zero_loss() {
        let a = Array3::from_shape_fn((2, 10, 2), |(i, j, k)| (i + j * k) as f64);
        let (l, g) = mse_loss(a.view(), a.view()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_offset_has_unit_loss() {
        let t = Array3::<f64>::zeros((3, 10, 2));
        let p = Array3::<f64>::ones((3, 10, 2));
        let (l, g) = mse_loss(p.view(), t.view()).unwrap();
        assert_eq!(l, 1.0);
        assert!(g.iter().all(|&v| (v - 2.0 / 60.0).abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t: ndarray::Array2<f64> = array![[0.3, -1.2], [2.0, 0.5]];
        let p: ndarray::Array2<f64> = array![[0.1, 0.4], [-0.7, 1.9]];
        let (_, g) = mse_loss(p.view(), t.view()).unwrap();
        let h = 1e-6;
        for idx in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let mut up = p.clone();
            up[idx] += h;
            let mut dn = p.clone();
            dn[idx] -= h;
            let fd = (mse_loss(up.view(), t.view()).unwrap().0 - mse_loss(dn.view(), t.view()).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Array3::<f64>::zeros((1, 10, 2));
        let b = Array3::<f64>::zeros((1, 9, 2));
        assert!(mse_loss(a.view(), b.view()).is_err());
    }
}
