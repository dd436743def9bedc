//! Per-channel Min–Max scaling onto `[0, 1]`.
//!
//! Values outside the fitted range map linearly outside `[0, 1]`; nothing is
//! clamped.

use catheter_nn::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler<T = f64> {
    pub min: Vec<T>,
    pub max: Vec<T>,
}

impl<T: Scalar> MinMaxScaler<T> {
    pub fn from_bounds(min: Vec<T>, max: Vec<T>) -> Result<Self> {
        if min.len() != max.len() || min.is_empty() {
            return Err(CoreError::Config("scaler bounds must be non-empty and equally long".into()));
        }
        for (channel, (&lo, &hi)) in min.iter().zip(&max).enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(CoreError::DegenerateScaler {
                    channel,
                    min: lo.to_f64_lossless(),
                    max: hi.to_f64_lossless(),
                });
            }
        }
        Ok(MinMaxScaler { min, max })
    }

    /// Fits channel extrema over `rows`; every row must have the same width.
    pub fn fit<R: AsRef<[T]>>(rows: impl IntoIterator<Item = R>) -> Result<Self> {
        let mut min: Vec<T> = Vec::new();
        let mut max: Vec<T> = Vec::new();
        let mut count = 0usize;
        for row in rows {
            let row = row.as_ref();
            if count == 0 {
                min = row.to_vec();
                max = row.to_vec();
            } else if row.len() != min.len() {
                return Err(CoreError::Config(format!(
                    "scaler rows have inconsistent width ({} vs {})",
                    row.len(),
                    min.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
            count += 1;
        }
        if count < 2 {
            return Err(CoreError::Config("scaler needs at least two samples".into()));
        }
        Self::from_bounds(min, max)
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    #[inline]
    pub fn normalize(&self, channel: usize, x: T) -> T {
        (x - self.min[channel]) / (self.max[channel] - self.min[channel])
    }

    #[inline]
    pub fn denormalize(&self, channel: usize, u: T) -> T {
        self.min[channel] + u * (self.max[channel] - self.min[channel])
    }

    pub fn normalize_row(&self, row: &mut [T]) {
        for (c, v) in row.iter_mut().enumerate() {
            *v = self.normalize(c, *v);
        }
    }

    pub fn denormalize_row(&self, row: &mut [T]) {
        for (c, v) in row.iter_mut().enumerate() {
            *v = self.denormalize(c, *v);
        }
    }
}
