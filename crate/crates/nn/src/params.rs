use ndarray::{ArrayViewD, ArrayViewMutD, Zip};

use crate::Scalar;

/// A model (or a gradient container of identical shape) viewed as an ordered
/// list of named tensors.
///
/// Gradients are stored in the same type as the model they belong to, so
/// optimizers and target-network updates only need to zip two tensor lists.
pub trait Params<T: Scalar> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)>;

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>>;

    /// A value of identical shape with every parameter set to zero.
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn fill_zero(&mut self) {
        for mut t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Copy of all parameters in tensor order.
    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.tensors() {
            out.extend(t.iter().copied());
        }
        out
    }

    fn copy_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src = other.tensors();
        for (mut dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.assign(&s);
        }
    }
}

/// Soft target update: `target <- (1 - tau) * target + tau * online`.
pub fn polyak_update<T: Scalar, M: Params<T>>(target: &mut M, online: &M, tau: T) {
    let keep = T::one() - tau;
    let src = online.tensors();
    for (dst, (_, s)) in target.tensors_mut().into_iter().zip(src) {
        Zip::from(dst).and(&s).for_each(|d, &o| *d = keep * *d + tau * o);
    }
}
