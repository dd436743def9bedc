//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use crate::{Params, Scalar};

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are compared in absolute terms.
    pub floor: f64,
    /// Maximum number of coordinates probed per tensor (`None` = all).
    pub per_tensor: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            floor: 1e-6,
            per_tensor: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `tensor[index]` of the worst coordinate.
    pub worst: String,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

impl GradCheck {
    /// Compares `analytic` (gradient container shaped like `model`) against
    /// central differences of `loss` evaluated at perturbed copies of `model`.
    ///
    /// `model` is restored exactly after every probe.
    pub fn run<T, M, F, R>(&self, model: &mut M, analytic: &M, mut loss: F, rng: &mut R) -> GradCheckReport
    where
        T: Scalar,
        M: Params<T>,
        F: FnMut(&M) -> T,
        R: Rng + ?Sized,
    {
        let h = T::of(self.step);
        let layout: Vec<(String, usize)> = model.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
        let analytic_flat: Vec<Vec<T>> = analytic
            .tensors()
            .iter()
            .map(|(_, t)| t.iter().copied().collect())
            .collect();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
        };
        for (ti, (name, len)) in layout.iter().enumerate() {
            let coords: Vec<usize> = match self.per_tensor {
                Some(k) if k < *len => (0..k).map(|_| rng.random_range(0..*len)).collect(),
                _ => (0..*len).collect(),
            };
            for j in coords {
                let original = get(model, ti, j);
                set(model, ti, j, original + h);
                let up = loss(model);
                set(model, ti, j, original - h);
                let down = loss(model);
                set(model, ti, j, original);
                let numeric = ((up - down) / (h + h)).to_f64_lossless();
                let err = relative_error(analytic_flat[ti][j].to_f64_lossless(), numeric, self.floor);
                report.checked += 1;
                if err >= report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = format!("{name}[{j}]");
                }
            }
        }
        report
    }
}

fn slot<T: Scalar, M: Params<T>>(model: &mut M, tensor: usize, flat: usize) -> &mut T {
    let t = model.tensors_mut().swap_remove(tensor);
    match t.into_slice() {
        Some(s) => &mut s[flat],
        None => unreachable!("parameter tensors are stored contiguously"),
    }
}

fn get<T: Scalar, M: Params<T>>(model: &mut M, tensor: usize, flat: usize) -> T {
    *slot(model, tensor, flat)
}

fn set<T: Scalar, M: Params<T>>(model: &mut M, tensor: usize, flat: usize, value: T) {
    *slot(model, tensor, flat) = value;
}
