//! Batched LSTM layer with backpropagation through time.
//!
//! Gate pre-activations are `z = W_x x_t + W_h h_{t-1} + b`, split into the
//! input, forget, candidate and output blocks (in that order):
//!
//! ```text
//! i = σ(z_i)   f = σ(z_f)   g = tanh(z_g)   o = σ(z_o)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use crate::dense::uniform_fill;
use crate::error::{check_shape, Result};
use crate::scalar::sigmoid;
use crate::{Params, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Lstm<T> {
    /// `[4H, in]`, gate blocks stacked row-wise as i, f, g, o.
    pub w_input: Array2<T>,
    /// `[4H, H]`
    pub w_hidden: Array2<T>,
    /// `[4H]`
    pub bias: Array1<T>,
}

/// Everything one cell step needs for its backward pass.
#[derive(Clone, Debug)]
pub struct LstmStepCache<T> {
    x: Array2<T>,
    h_prev: Array2<T>,
    c_prev: Array2<T>,
    /// Activated gates `[B, 4H]` laid out as i, f, g, o.
    gates: Array2<T>,
    tanh_c: Array2<T>,
}

#[derive(Clone, Debug)]
pub struct LstmSeqCache<T> {
    steps: Vec<LstmStepCache<T>>,
}

impl<T: Scalar> Lstm<T> {
    /// Uniform `±1/sqrt(hidden)` initialisation with the forget-gate bias set to 1.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_input = uniform_fill((4 * hidden, input), bound, rng);
        let w_hidden = uniform_fill((4 * hidden, hidden), bound, rng);
        let mut bias = Array1::from_shape_simple_fn(4 * hidden, || {
            T::of(rng.random_range(-bound..bound))
        });
        bias.slice_mut(s![hidden..2 * hidden]).fill(T::one());
        Lstm {
            w_input,
            w_hidden,
            bias,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Lstm {
            w_input: Array2::zeros((4 * hidden, input)),
            w_hidden: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.ncols()
    }

    fn check_step(&self, x: &ArrayView2<'_, T>, h: &ArrayView2<'_, T>, c: &ArrayView2<'_, T>) -> Result<()> {
        let hd = self.hidden_dim();
        check_shape("lstm input width", &[self.input_dim()], &[x.ncols()])?;
        check_shape("lstm hidden state", &[x.nrows(), hd], &[h.nrows(), h.ncols()])?;
        check_shape("lstm cell state", &[x.nrows(), hd], &[c.nrows(), c.ncols()])
    }

    /// One recurrence step over a batch. Returns `(h_t, c_t, cache)`.
    pub fn step(
        &self,
        x: ArrayView2<'_, T>,
        h_prev: ArrayView2<'_, T>,
        c_prev: ArrayView2<'_, T>,
    ) -> Result<(Array2<T>, Array2<T>, LstmStepCache<T>)> {
        self.check_step(&x, &h_prev, &c_prev)?;
        let (h, c, gates, tanh_c) = self.step_raw(x, h_prev, c_prev);
        let cache = LstmStepCache {
            x: x.to_owned(),
            h_prev: h_prev.to_owned(),
            c_prev: c_prev.to_owned(),
            gates,
            tanh_c,
        };
        Ok((h, c, cache))
    }

    fn step_raw(
        &self,
        x: ArrayView2<'_, T>,
        h_prev: ArrayView2<'_, T>,
        c_prev: ArrayView2<'_, T>,
    ) -> (Array2<T>, Array2<T>, Array2<T>, Array2<T>) {
        let batch = x.nrows();
        let hd = self.hidden_dim();
        let mut z = Array2::zeros((batch, 4 * hd));
        general_mat_mul(T::one(), &x, &self.w_input.t(), T::zero(), &mut z);
        general_mat_mul(T::one(), &h_prev, &self.w_hidden.t(), T::one(), &mut z);
        let mut c = Array2::zeros((batch, hd));
        let mut h = Array2::zeros((batch, hd));
        let mut tanh_c = Array2::zeros((batch, hd));
        let bias = self.bias.as_slice().expect("bias is contiguous");
        for r in 0..batch {
            let zr = z.row_mut(r).into_slice().expect("row-major");
            for (v, &b) in zr.iter_mut().zip(bias) {
                *v += b;
            }
            for j in 0..hd {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[hd + j]);
                let g = zr[2 * hd + j].tanh();
                let o = sigmoid(zr[3 * hd + j]);
                zr[j] = i;
                zr[hd + j] = f;
                zr[2 * hd + j] = g;
                zr[3 * hd + j] = o;
                let ct = f * c_prev[[r, j]] + i * g;
                let tc = ct.tanh();
                c[[r, j]] = ct;
                tanh_c[[r, j]] = tc;
                h[[r, j]] = o * tc;
            }
        }
        (h, c, z, tanh_c)
    }

    /// Backward through one step.
    ///
    /// `dh` and `dc` are the total gradients reaching `h_t` and `c_t`. Returns
    /// `(dx, dh_prev, dc_prev)`; `dx` only when `need_input_grad`.
    pub fn step_backward(
        &self,
        cache: &LstmStepCache<T>,
        dh: ArrayView2<'_, T>,
        dc: ArrayView2<'_, T>,
        grads: &mut Lstm<T>,
        need_input_grad: bool,
    ) -> (Option<Array2<T>>, Array2<T>, Array2<T>) {
        let batch = dh.nrows();
        let hd = self.hidden_dim();
        let mut dz = Array2::zeros((batch, 4 * hd));
        let mut dc_prev = Array2::zeros((batch, hd));
        for r in 0..batch {
            let gates = cache.gates.row(r);
            let dzr = dz.row_mut(r).into_slice().expect("row-major");
            for j in 0..hd {
                let i = gates[j];
                let f = gates[hd + j];
                let g = gates[2 * hd + j];
                let o = gates[3 * hd + j];
                let tc = cache.tanh_c[[r, j]];
                let dhv = dh[[r, j]];
                let d_o = dhv * tc;
                let dct = dc[[r, j]] + dhv * o * (T::one() - tc * tc);
                let di = dct * g;
                let dg = dct * i;
                let df = dct * cache.c_prev[[r, j]];
                dc_prev[[r, j]] = dct * f;
                dzr[j] = di * i * (T::one() - i);
                dzr[hd + j] = df * f * (T::one() - f);
                dzr[2 * hd + j] = dg * (T::one() - g * g);
                dzr[3 * hd + j] = d_o * o * (T::one() - o);
            }
        }
        general_mat_mul(T::one(), &dz.t(), &cache.x, T::one(), &mut grads.w_input);
        general_mat_mul(T::one(), &dz.t(), &cache.h_prev, T::one(), &mut grads.w_hidden);
        grads.bias += &dz.sum_axis(Axis(0));
        let dx = need_input_grad.then(|| dz.dot(&self.w_input));
        let dh_prev = dz.dot(&self.w_hidden);
        (dx, dh_prev, dc_prev)
    }

    fn check_sequence(&self, input: &ArrayView3<'_, T>) -> Result<()> {
        check_shape("lstm sequence width", &[self.input_dim()], &[input.len_of(Axis(2))])
    }

    /// Runs `[N, T, in]` from zero initial state and returns hidden states `[N, T, H]`.
    pub fn forward_sequence(&self, input: ArrayView3<'_, T>) -> Result<(Array3<T>, LstmSeqCache<T>)> {
        self.check_sequence(&input)?;
        let (n, steps, _) = input.dim();
        let hd = self.hidden_dim();
        let mut out = Array3::zeros((n, steps, hd));
        let mut h = Array2::zeros((n, hd));
        let mut c = Array2::zeros((n, hd));
        let mut caches = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = input.index_axis(Axis(1), t).to_owned();
            let (h_next, c_next, gates, tanh_c) = self.step_raw(x.view(), h.view(), c.view());
            out.index_axis_mut(Axis(1), t).assign(&h_next);
            caches.push(LstmStepCache {
                x,
                h_prev: h,
                c_prev: c,
                gates,
                tanh_c,
            });
            h = h_next;
            c = c_next;
        }
        Ok((out, LstmSeqCache { steps: caches }))
    }

    /// Forward pass without retaining anything for backpropagation.
    pub fn infer_sequence(&self, input: ArrayView3<'_, T>) -> Result<Array3<T>> {
        self.check_sequence(&input)?;
        let (n, steps, _) = input.dim();
        let hd = self.hidden_dim();
        let mut out = Array3::zeros((n, steps, hd));
        let mut h = Array2::zeros((n, hd));
        let mut c = Array2::zeros((n, hd));
        for t in 0..steps {
            let (h_next, c_next, _, _) = self.step_raw(input.index_axis(Axis(1), t), h.view(), c.view());
            out.index_axis_mut(Axis(1), t).assign(&h_next);
            h = h_next;
            c = c_next;
        }
        Ok(out)
    }

    /// BPTT over the full unroll. `grad_hidden` is `[N, T, H]` (loss gradient
    /// w.r.t. each emitted hidden state). Returns the input gradient `[N, T, in]`
    /// when requested.
    pub fn backward_sequence(
        &self,
        cache: &LstmSeqCache<T>,
        grad_hidden: ArrayView3<'_, T>,
        grads: &mut Lstm<T>,
        need_input_grad: bool,
    ) -> Option<Array3<T>> {
        let (n, steps, hd) = grad_hidden.dim();
        let mut dx_all = need_input_grad.then(|| Array3::zeros((n, steps, self.input_dim())));
        let mut dh_next = Array2::<T>::zeros((n, hd));
        let mut dc_next = Array2::<T>::zeros((n, hd));
        for t in (0..steps).rev() {
            let dh = &grad_hidden.index_axis(Axis(1), t) + &dh_next;
            let (dx, dh_prev, dc_prev) =
                self.step_backward(&cache.steps[t], dh.view(), dc_next.view(), grads, need_input_grad);
            if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
                all.index_axis_mut(Axis(1), t).assign(&dx);
            }
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        dx_all
    }
}

impl<T: Scalar> Params<T> for Lstm<T> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        vec![
            ("w_input".into(), self.w_input.view().into_dyn()),
            ("w_hidden".into(), self.w_hidden.view().into_dyn()),
            ("bias".into(), self.bias.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        vec![
            self.w_input.view_mut().into_dyn(),
            self.w_hidden.view_mut().into_dyn(),
            self.bias.view_mut().into_dyn(),
        ]
    }

    fn zeros_like(&self) -> Self {
        Lstm::zeros(self.input_dim(), self.hidden_dim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn zero_weights_halve_the_cell_state() {
        let cell = Lstm::<f64>::zeros(3, 4);
        let x = Array2::from_elem((2, 3), 0.7);
        let h0 = Array2::from_elem((2, 4), -0.3);
        let c0 = Array::from_shape_vec((2, 4), vec![1.0, -2.0, 0.5, 3.0, 0.0, 0.1, -0.1, 4.0]).unwrap();
        let (h, c, _) = cell.step(x.view(), h0.view(), c0.view()).unwrap();
        for (&ct, &cp) in c.iter().zip(c0.iter()) {
            assert_eq!(ct, 0.5 * cp);
        }
        for (&ht, &cp) in h.iter().zip(c0.iter()) {
            assert!((ht - 0.5 * (0.5 * cp).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_state_and_zero_bias_gives_zero_cell() {
        let mut rng = rand::rng();
        let mut cell = Lstm::<f64>::new(3, 5, &mut rng);
        cell.bias.fill(0.0);
        let zeros_x = Array2::zeros((1, 3));
        let zeros_h = Array2::zeros((1, 5));
        let (h, c, _) = cell.step(zeros_x.view(), zeros_h.view(), zeros_h.view()).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = rand::rng();
        let cell = Lstm::<f32>::new(3, 8, &mut rng);
        assert!(cell.bias.slice(s![8..16]).iter().all(|&b| b == 1.0));
    }

    #[test]
    fn infer_matches_cached_forward() {
        let mut rng = rand::rng();
        let cell = Lstm::<f64>::new(3, 6, &mut rng);
        let input = Array3::from_shape_fn((4, 10, 3), |(a, b, c)| ((a * 31 + b * 7 + c) as f64).sin());
        let (h1, _) = cell.forward_sequence(input.view()).unwrap();
        let h2 = cell.infer_sequence(input.view()).unwrap();
        assert_eq!(h1, h2);
    }
}
