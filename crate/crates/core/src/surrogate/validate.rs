use catheter_nn::Scalar;
use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use super::model::SurrogateModel;
use crate::error::{CoreError, Result};
use crate::protocol::WindowedDataset;
use crate::types::TipPosition;

/// Coverage bands in millimetres.
pub const COVERAGE_BANDS: [f64; 3] = [1.0, 2.0, 3.0];

/// Position-error summary in millimetres. Coverage pools the x and y absolute
/// errors and counts those within each band (inclusive).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub count: usize,
    pub rmse_overall: f64,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub mae_overall: f64,
    pub mae_x: f64,
    pub mae_y: f64,
    pub coverage_1mm: f64,
    pub coverage_2mm: f64,
    pub coverage_3mm: f64,
    pub max_abs_error: f64,
}

/// Overall RMSE from per-axis values.
pub fn combine_rmse(rmse_x: f64, rmse_y: f64) -> f64 {
    ((rmse_x * rmse_x + rmse_y * rmse_y) / 2.0).sqrt()
}

/// Per-axis absolute errors `|real - predicted|`.
pub fn abs_errors(real: &[TipPosition], predicted: &[TipPosition]) -> Vec<(f64, f64)> {
    real.iter()
        .zip(predicted)
        .map(|(r, p)| ((r.x - p.x).abs(), (r.y - p.y).abs()))
        .collect()
}

/// Fraction of `values` no larger than `band`.
pub fn coverage(values: &[f64], band: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| **v <= band).count() as f64 / values.len() as f64
}

impl ErrorMetrics {
    /// Metrics from signed or absolute per-axis errors.
    pub fn from_errors(errors: &[(f64, f64)]) -> Result<Self> {
        if errors.is_empty() {
            return Err(CoreError::Domain("error metrics need at least one sample".into()));
        }
        let n = errors.len() as f64;
        let (mut sx, mut sy, mut ax, mut ay) = (0.0, 0.0, 0.0, 0.0);
        let mut pooled = Vec::with_capacity(errors.len() * 2);
        for &(ex, ey) in errors {
            let (ex, ey) = (ex.abs(), ey.abs());
            sx += ex * ex;
            sy += ey * ey;
            ax += ex;
            ay += ey;
            pooled.push(ex);
            pooled.push(ey);
        }
        let (rmse_x, rmse_y) = ((sx / n).sqrt(), (sy / n).sqrt());
        let (mae_x, mae_y) = (ax / n, ay / n);
        Ok(ErrorMetrics {
            count: errors.len(),
            rmse_overall: combine_rmse(rmse_x, rmse_y),
            rmse_x,
            rmse_y,
            mae_overall: (mae_x + mae_y) / 2.0,
            mae_x,
            mae_y,
            coverage_1mm: coverage(&pooled, COVERAGE_BANDS[0]),
            coverage_2mm: coverage(&pooled, COVERAGE_BANDS[1]),
            coverage_3mm: coverage(&pooled, COVERAGE_BANDS[2]),
            max_abs_error: pooled.iter().copied().fold(0.0, f64::max),
        })
    }

    /// Internal consistency: monotone coverage, RMSE dominating MAE, combiner identity.
    pub fn is_consistent(&self) -> bool {
        let tol = 1e-12 * (1.0 + self.rmse_overall);
        self.coverage_1mm <= self.coverage_2mm
            && self.coverage_2mm <= self.coverage_3mm
            && self.coverage_3mm <= 1.0
            && self.rmse_x + tol >= self.mae_x
            && self.rmse_y + tol >= self.mae_y
            && (self.rmse_overall - combine_rmse(self.rmse_x, self.rmse_y)).abs() <= tol
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub windows: usize,
    /// Headline metrics: last step of every window.
    pub final_step: ErrorMetrics,
    /// Every step of every window.
    pub full_sequence: ErrorMetrics,
}

fn to_mm(model_scaler: &crate::scaler::MinMaxScaler, normalized: &Array3<f64>, n: usize, k: usize) -> (f64, f64) {
    (
        model_scaler.denormalize(0, normalized[[n, k, 0]]),
        model_scaler.denormalize(1, normalized[[n, k, 1]]),
    )
}

/// Evaluates `model` on every window of `test`, in millimetres.
pub fn validate<T: Scalar>(model: &SurrogateModel<T>, test: &WindowedDataset) -> Result<ValidationReport> {
    const CHUNK: usize = 1024;
    let n = test.len();
    if n == 0 {
        return Err(CoreError::Domain("validation needs a non-empty test set".into()));
    }
    let steps = test.inputs.dim().1;
    let mut last = Vec::with_capacity(n);
    let mut all = Vec::with_capacity(n * steps);
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let pred = model.predict_normalized(test.inputs.slice(s![start..end, .., ..]))?;
        let target = test.targets.slice(s![start..end, .., ..]).to_owned();
        for w in 0..end - start {
            for k in 0..steps {
                let (px, py) = to_mm(&model.output_scaler, &pred, w, k);
                let (tx, ty) = to_mm(&test.output_scaler, &target, w, k);
                let e = (px - tx, py - ty);
                all.push(e);
                if k + 1 == steps {
                    last.push(e);
                }
            }
        }
        start = end;
    }
    Ok(ValidationReport {
        windows: n,
        final_step: ErrorMetrics::from_errors(&last)?,
        full_sequence: ErrorMetrics::from_errors(&all)?,
    })
}
