use std::path::Path;

use catheter_nn::{Activation, CheckpointReader, CheckpointWriter, Dense, Dropout, Lstm, LstmSeqCache, Params, Scalar};
use ndarray::{Array2, Array3, ArrayView3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::train::TrainingHistory;
use crate::error::{CoreError, Result};
use crate::protocol::WINDOW;
use crate::scaler::MinMaxScaler;
use crate::types::{ServoAngles, TipPosition};

pub const HIDDEN: usize = 64;
pub const INPUTS: usize = 3;
pub const OUTPUTS: usize = 2;
pub const DROPOUT_RATE: f64 = 0.2;

/// `3 -> LSTM(64) -> LSTM(64) -> dropout -> dense(2)`, emitting one output per time step.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateNet<T> {
    pub lstm1: Lstm<T>,
    pub lstm2: Lstm<T>,
    pub head: Dense<T>,
}

pub struct ForwardCache<T> {
    lstm1: LstmSeqCache<T>,
    lstm2: LstmSeqCache<T>,
    /// Head input `[N*T, H]` after dropout.
    head_input: Array2<T>,
    head_output: Array2<T>,
    mask: Option<Array2<T>>,
    shape: (usize, usize),
}

impl<T: Scalar> SurrogateNet<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        SurrogateNet {
            lstm1: Lstm::new(INPUTS, HIDDEN, rng),
            lstm2: Lstm::new(HIDDEN, HIDDEN, rng),
            head: Dense::new(HIDDEN, OUTPUTS, Activation::Linear, rng),
        }
    }

    pub fn zeros() -> Self {
        SurrogateNet {
            lstm1: Lstm::zeros(INPUTS, HIDDEN),
            lstm2: Lstm::zeros(HIDDEN, HIDDEN),
            head: Dense::zeros(HIDDEN, OUTPUTS, Activation::Linear),
        }
    }

    fn check_window(input: &ArrayView3<'_, T>) -> Result<()> {
        let (_, steps, width) = input.dim();
        if steps != WINDOW || width != INPUTS {
            return Err(CoreError::Domain(format!(
                "surrogate expects windows of shape [N, {WINDOW}, {INPUTS}], got [_, {steps}, {width}]"
            )));
        }
        Ok(())
    }

    /// Inference: no dropout, nothing cached.
    pub fn infer(&self, input: ArrayView3<'_, T>) -> Result<Array3<T>> {
        Self::check_window(&input)?;
        let (n, steps, _) = input.dim();
        let h1 = self.lstm1.infer_sequence(input)?;
        let h2 = self.lstm2.infer_sequence(h1.view())?;
        let flat = h2
            .into_shape_with_order((n * steps, HIDDEN))
            .expect("freshly allocated hidden states are contiguous");
        let out = self.head.forward(flat.view())?;
        Ok(out
            .into_shape_with_order((n, steps, OUTPUTS))
            .expect("head output is contiguous"))
    }

    /// Forward pass keeping everything needed by [`SurrogateNet::backward`].
    /// Dropout is active only when `training` is set.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: ArrayView3<'_, T>,
        dropout: &Dropout,
        training: bool,
        rng: &mut R,
    ) -> Result<(Array3<T>, ForwardCache<T>)> {
        Self::check_window(&input)?;
        let (n, steps, _) = input.dim();
        let (h1, c1) = self.lstm1.forward_sequence(input)?;
        let (h2, c2) = self.lstm2.forward_sequence(h1.view())?;
        let flat = h2
            .into_shape_with_order((n * steps, HIDDEN))
            .expect("freshly allocated hidden states are contiguous");
        let (head_input, mask) = dropout.apply(&flat, training, rng);
        let head_output = self.head.forward(head_input.view())?;
        let out = head_output
            .clone()
            .into_shape_with_order((n, steps, OUTPUTS))
            .expect("head output is contiguous");
        Ok((
            out,
            ForwardCache {
                lstm1: c1,
                lstm2: c2,
                head_input,
                head_output,
                mask,
                shape: (n, steps),
            },
        ))
    }

    /// Accumulates parameter gradients for `grad_output` (`[N, T, 2]`) into
    /// `grads`; returns the input gradient when requested.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_output: ArrayView3<'_, T>,
        grads: &mut SurrogateNet<T>,
        need_input_grad: bool,
    ) -> Option<Array3<T>> {
        let (n, steps) = cache.shape;
        let g = grad_output
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n * steps, OUTPUTS))
            .expect("contiguous gradient");
        let mut d_head_in = self
            .head
            .backward(
                cache.head_input.view(),
                cache.head_output.view(),
                g.view(),
                Some(&mut grads.head),
                true,
            )
            .expect("input gradient requested");
        if let Some(mask) = &cache.mask {
            d_head_in *= mask;
        }
        let d_h2 = d_head_in
            .into_shape_with_order((n, steps, HIDDEN))
            .expect("contiguous gradient");
        let d_h1 = self
            .lstm2
            .backward_sequence(&cache.lstm2, d_h2.view(), &mut grads.lstm2, true)
            .expect("input gradient requested");
        self.lstm1
            .backward_sequence(&cache.lstm1, d_h1.view(), &mut grads.lstm1, need_input_grad)
    }
}

impl<T: Scalar> Params<T> for SurrogateNet<T> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        for (prefix, t) in [("lstm1", self.lstm1.tensors()), ("lstm2", self.lstm2.tensors()), ("head", self.head.tensors())] {
            out.extend(t.into_iter().map(|(n, v)| (format!("{prefix}.{n}"), v)));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        let mut out = self.lstm1.tensors_mut();
        out.extend(self.lstm2.tensors_mut());
        out.extend(self.head.tensors_mut());
        out
    }

    fn zeros_like(&self) -> Self {
        SurrogateNet::zeros()
    }
}

/// Trained surrogate: network weights plus the scalers that defined its inputs and outputs.
#[derive(Clone, Debug)]
pub struct SurrogateModel<T = f64> {
    pub net: SurrogateNet<T>,
    pub input_scaler: MinMaxScaler,
    pub output_scaler: MinMaxScaler,
    pub history: TrainingHistory,
}

impl<T: Scalar> SurrogateModel<T> {
    pub fn new(net: SurrogateNet<T>, input_scaler: MinMaxScaler, output_scaler: MinMaxScaler) -> Result<Self> {
        if input_scaler.channels() != INPUTS || output_scaler.channels() != OUTPUTS {
            return Err(CoreError::Config("scaler widths do not match the surrogate architecture".into()));
        }
        Ok(SurrogateModel {
            net,
            input_scaler,
            output_scaler,
            history: TrainingHistory::default(),
        })
    }

    pub fn normalize_angles(&self, a: &ServoAngles) -> [f64; 3] {
        let mut row = a.as_array();
        self.input_scaler.normalize_row(&mut row);
        row
    }

    /// Predicts normalised outputs for `[N, 10, 3]` normalised inputs.
    pub fn predict_normalized(&self, inputs: ArrayView3<'_, f64>) -> Result<Array3<f64>> {
        let x = inputs.mapv(T::of);
        Ok(self.net.infer(x.view())?.mapv(|v| v.to_f64_lossless()))
    }

    fn denormalize_tip(&self, x: f64, y: f64) -> TipPosition {
        TipPosition::new(self.output_scaler.denormalize(0, x), self.output_scaler.denormalize(1, y))
    }

    /// Final-step tip (mm) for one window of normalised angle triples.
    pub fn predict_final(&self, window: &[[f64; 3]]) -> Result<TipPosition> {
        let x = Array3::from_shape_fn((1, window.len(), INPUTS), |(_, t, c)| T::of(window[t][c]));
        let out = self.net.infer(x.view())?;
        let last = window.len() - 1;
        Ok(self.denormalize_tip(out[[0, last, 0]].to_f64_lossless(), out[[0, last, 1]].to_f64_lossless()))
    }

    /// Ten predicted tips (mm) for up to ten raw command triples. Shorter
    /// windows are left-padded with zeros in normalised space.
    pub fn predict_window(&self, raw: &[ServoAngles]) -> Result<Vec<TipPosition>> {
        if raw.len() > WINDOW {
            return Err(CoreError::Domain(format!(
                "window holds {} commands, at most {WINDOW} allowed",
                raw.len()
            )));
        }
        let mut window = [[0.0; 3]; WINDOW];
        let pad = WINDOW - raw.len();
        for (slot, a) in window[pad..].iter_mut().zip(raw) {
            *slot = self.normalize_angles(a);
        }
        let x = Array3::from_shape_fn((1, WINDOW, INPUTS), |(_, t, c)| T::of(window[t][c]));
        let out = self.net.infer(x.view())?;
        Ok(out
            .index_axis(Axis(0), 0)
            .rows()
            .into_iter()
            .map(|r| self.denormalize_tip(r[0].to_f64_lossless(), r[1].to_f64_lossless()))
            .collect())
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut meta = toml::Table::new();
        meta.insert("kind".into(), "surrogate".into());
        meta.insert("hidden".into(), (HIDDEN as i64).into());
        meta.insert("window".into(), (WINDOW as i64).into());
        meta.insert("dropout".into(), DROPOUT_RATE.into());
        meta.insert("layers".into(), "lstm1(3->64), lstm2(64->64), dropout, head(64->2 linear)".into());
        meta.insert("best_epoch".into(), (self.history.best_epoch as i64).into());
        let mut w = CheckpointWriter::new().meta(meta);
        w.add("net", &self.net)
            .add_raw("scaler.input.min", &[INPUTS], &self.input_scaler.min)
            .add_raw("scaler.input.max", &[INPUTS], &self.input_scaler.max)
            .add_raw("scaler.output.min", &[OUTPUTS], &self.output_scaler.min)
            .add_raw("scaler.output.max", &[OUTPUTS], &self.output_scaler.max);
        w.write(dir, stem)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let r = CheckpointReader::open(dir, stem)?;
        let mut net = SurrogateNet::zeros();
        r.load_into("net", &mut net)?;
        let scaler = |name: &str| -> Result<MinMaxScaler> {
            let (_, lo) = r.raw(&format!("scaler.{name}.min"))?;
            let (_, hi) = r.raw(&format!("scaler.{name}.max"))?;
            MinMaxScaler::from_bounds(lo.to_vec(), hi.to_vec())
        };
        let mut model = SurrogateModel::new(net, scaler("input")?, scaler("output")?)?;
        model.history.best_epoch = r.meta().get("best_epoch").and_then(|v| v.as_integer()).unwrap_or(0) as usize;
        Ok(model)
    }
}
