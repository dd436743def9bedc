use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Result};
use crate::{Params, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }

    /// Derivative expressed through the activation output `y = act(v)`.
    #[inline]
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Linear => T::one(),
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored as `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
}

pub(crate) fn uniform_fill<T: Scalar, R: Rng + ?Sized>(
    shape: (usize, usize),
    bound: f64,
    rng: &mut R,
) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || T::of(rng.random_range(-bound..bound)))
}

impl<T: Scalar> Dense<T> {
    /// Uniform `±1/sqrt(fan_in)` initialisation for weights and bias.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weights = uniform_fill((output, input), bound, rng);
        let bias = Array1::from_shape_simple_fn(output, || T::of(rng.random_range(-bound..bound)));
        Dense {
            weights,
            bias,
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Dense {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Applies the layer to a `[batch, in]` matrix.
    pub fn forward(&self, input: ArrayView2<'_, T>) -> Result<Array2<T>> {
        check_shape("dense input width", &[self.input_dim()], &[input.ncols()])?;
        let mut out = Array2::zeros((input.nrows(), self.output_dim()));
        general_mat_mul(T::one(), &input, &self.weights.t(), T::zero(), &mut out);
        let act = self.activation;
        for mut row in out.rows_mut() {
            for (v, &b) in row.iter_mut().zip(self.bias.iter()) {
                *v = act.apply(*v + b);
            }
        }
        Ok(out)
    }

    /// Backpropagates `grad_output` (w.r.t. the activated output).
    ///
    /// Parameter gradients are accumulated into `grads` when given. The input
    /// gradient is only formed when `need_input_grad` is set.
    pub fn backward(
        &self,
        input: ArrayView2<'_, T>,
        output: ArrayView2<'_, T>,
        grad_output: ArrayView2<'_, T>,
        grads: Option<&mut Dense<T>>,
        need_input_grad: bool,
    ) -> Option<Array2<T>> {
        let act = self.activation;
        let mut delta = grad_output.to_owned();
        if act != Activation::Linear {
            delta.zip_mut_with(&output, |d, &y| *d *= act.derivative_from_output(y));
        }
        if let Some(g) = grads {
            general_mat_mul(T::one(), &delta.t(), &input, T::one(), &mut g.weights);
            g.bias += &delta.sum_axis(Axis(0));
        }
        need_input_grad.then(|| delta.dot(&self.weights))
    }
}

impl<T: Scalar> Params<T> for Dense<T> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        vec![
            ("weight".into(), self.weights.view().into_dyn()),
            ("bias".into(), self.bias.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        vec![
            self.weights.view_mut().into_dyn(),
            self.bias.view_mut().into_dyn(),
        ]
    }

    fn zeros_like(&self) -> Self {
        Dense::zeros(self.input_dim(), self.output_dim(), self.activation)
    }
}

/// Stack of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Layer inputs/outputs retained by [`Mlp::forward_trace`].
#[derive(Clone, Debug)]
pub struct MlpTrace<T> {
    /// `activations[0]` is the network input, `activations[i + 1]` the output of layer `i`.
    pub activations: Vec<Array2<T>>,
}

impl<T> MlpTrace<T> {
    pub fn output(&self) -> &Array2<T> {
        self.activations.last().expect("trace holds at least the input")
    }
}

impl<T: Scalar> Mlp<T> {
    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the last layer `output`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "an mlp needs at least input and output widths");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::new(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::output_dim).unwrap_or(0)
    }

    pub fn forward(&self, input: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let mut x = self.layers[0].forward(input)?;
        for layer in &self.layers[1..] {
            x = layer.forward(x.view())?;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: ArrayView2<'_, T>) -> Result<MlpTrace<T>> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap().view())?;
            activations.push(next);
        }
        Ok(MlpTrace { activations })
    }

    /// Backpropagates through the whole stack; see [`Dense::backward`].
    pub fn backward(
        &self,
        trace: &MlpTrace<T>,
        grad_output: ArrayView2<'_, T>,
        mut grads: Option<&mut Mlp<T>>,
        need_input_grad: bool,
    ) -> Option<Array2<T>> {
        let mut grad = grad_output.to_owned();
        for i in (0..self.layers.len()).rev() {
            let g = grads.as_deref_mut().map(|m| &mut m.layers[i]);
            let need = i > 0 || need_input_grad;
            match self.layers[i].backward(
                trace.activations[i].view(),
                trace.activations[i + 1].view(),
                grad.view(),
                g,
                need,
            ) {
                Some(next) => grad = next,
                None => return None,
            }
        }
        Some(grad)
    }
}

impl<T: Scalar> Params<T> for Mlp<T> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.tensors()
                    .into_iter()
                    .map(move |(name, t)| (format!("layer{i}.{name}"), t))
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }
}
