use std::fmt::Write as _;

use catheter_nn::{mse_loss, Adam, Dropout, NnError, Params, Scalar};
use log::info;
use ndarray::{s, Array3, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{SurrogateModel, SurrogateNet};
use crate::error::{CoreError, Result};
use crate::protocol::WindowedDataset;
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateTrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before the learning rate is cut.
    pub lr_patience: usize,
    pub lr_factor: f64,
    /// Epochs without validation improvement before training stops.
    pub early_stop_patience: usize,
    pub dropout: f64,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        SurrogateTrainConfig {
            batch_size: 128,
            learning_rate: 1e-3,
            max_epochs: 300,
            lr_patience: 10,
            lr_factor: 0.5,
            early_stop_patience: 30,
            dropout: super::model::DROPOUT_RATE,
        }
    }
}

impl SurrogateTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(CoreError::Config("surrogate: batch_size and max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(CoreError::Config("surrogate: learning_rate > 0 and lr_factor in (0, 1) required".into()));
        }
        Dropout::new(self.dropout)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// `(epoch, new learning rate)` for every plateau reduction.
    pub lr_reductions: Vec<(usize, f64)>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:?},{:?},{:?}", e.epoch, e.train_loss, e.val_loss, e.lr);
        }
        out
    }
}

/// Mean squared error (normalised units) of `net` over a dataset, inference mode.
pub fn dataset_loss<T: Scalar>(net: &SurrogateNet<T>, data: &WindowedDataset) -> Result<f64> {
    const CHUNK: usize = 1024;
    let n = data.len();
    if n == 0 {
        return Err(CoreError::Config("empty dataset".into()));
    }
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let x = data.inputs.slice(s![start..end, .., ..]).mapv(T::of);
        let y = data.targets.slice(s![start..end, .., ..]).mapv(T::of);
        let pred = net.infer(x.view())?;
        let (loss, _) = mse_loss(pred.view(), y.view())?;
        total += loss.to_f64_lossless() * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

fn divergence(err: NnError, history: &TrainingHistory) -> CoreError {
    CoreError::Divergence(format!(
        "{err} after {} epochs (best val loss {:?} at epoch {})",
        history.epochs.len(),
        history.best_val_loss,
        history.best_epoch
    ))
}

/// Mini-batch Adam on MSE with plateau learning-rate halving and early
/// stopping, both driven by validation loss. Returns the best-validation weights.
pub fn train_surrogate<T: Scalar>(
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &SurrogateTrainConfig,
    seed: u64,
) -> Result<SurrogateModel<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(CoreError::Config("surrogate training needs non-empty train and validation sets".into()));
    }
    let dropout = Dropout::new(cfg.dropout)?;
    let x_train: Array3<T> = train.inputs.mapv(T::of);
    let y_train: Array3<T> = train.targets.mapv(T::of);
    let mut net = SurrogateNet::<T>::new(&mut stream(seed, 1));
    let mut shuffle_rng = stream(seed, 2);
    let mut dropout_rng = stream(seed, 3);
    let mut opt = Adam::new(T::of(cfg.learning_rate));
    let mut grads = net.zeros_like();
    let mut best = net.clone();
    let mut history = TrainingHistory {
        best_val_loss: f64::INFINITY,
        ..TrainingHistory::default()
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut since_best = 0;
    let mut plateau = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x_train.select(Axis(0), batch);
            let yb = y_train.select(Axis(0), batch);
            let (pred, cache) = net.forward(xb.view(), &dropout, true, &mut dropout_rng)?;
            let (loss, g) = mse_loss(pred.view(), yb.view())?;
            grads.fill_zero();
            net.backward(&cache, g.view(), &mut grads, false);
            opt.step(&mut net, &grads).map_err(|e| divergence(e, &history))?;
            epoch_loss += loss.to_f64_lossless() * batch.len() as f64;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = dataset_loss(&net, val)?;
        let lr = opt.lr.to_f64_lossless();
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if !val_loss.is_finite() {
            return Err(divergence(NnError::NonFinite("validation loss".into()), &history));
        }
        info!("surrogate epoch {epoch}: train {train_loss:.3e} val {val_loss:.3e} lr {lr:.2e}");
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best.copy_from(&net);
            since_best = 0;
            plateau = 0;
        } else {
            since_best += 1;
            plateau += 1;
            if plateau >= cfg.lr_patience {
                opt.lr = opt.lr * T::of(cfg.lr_factor);
                plateau = 0;
                history.lr_reductions.push((epoch, opt.lr.to_f64_lossless()));
            }
            if since_best >= cfg.early_stop_patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    let mut model = SurrogateModel::new(best, train.input_scaler.clone(), train.output_scaler.clone())?;
    model.history = history;
    Ok(model)
}
