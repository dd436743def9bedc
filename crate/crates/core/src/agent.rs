//! Pieces shared by the two controllers.

use std::fmt::Write as _;

use catheter_nn::Scalar;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::replay::Transition;
use crate::types::ActionDelta;

/// Deterministic controller used for evaluation.
pub trait Policy {
    fn act(&mut self, obs: &[f64; 4]) -> Result<ActionDelta>;
}

impl<F: FnMut(&[f64; 4]) -> ActionDelta> Policy for F {
    fn act(&mut self, obs: &[f64; 4]) -> Result<ActionDelta> {
        Ok(self(obs))
    }
}

/// One row of a training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub episode_return: f64,
    pub steps: usize,
    /// Exploration level during the episode (epsilon or noise sigma).
    pub exploration: f64,
    /// Mean critic/Q loss over the episode's updates, NaN when none ran.
    pub loss: f64,
    pub success: bool,
    pub final_distance: f64,
}

pub fn training_log_csv(exploration_name: &str, rows: &[EpisodeLog]) -> String {
    let mut out = format!("episode,return,steps,{exploration_name},loss,success,final_distance\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:?},{},{:?},{:?},{},{:?}",
            r.episode,
            r.episode_return,
            r.steps,
            r.exploration,
            r.loss,
            u8::from(r.success),
            r.final_distance
        );
    }
    out
}

pub(crate) fn obs_row<T: Scalar>(obs: &[f64; 4]) -> Array2<T> {
    Array2::from_shape_fn((1, 4), |(_, j)| T::of(obs[j]))
}

pub(crate) fn obs_batch<T: Scalar, A>(batch: &[&Transition<A>], next: bool) -> Array2<T> {
    Array2::from_shape_fn((batch.len(), 4), |(i, j)| {
        T::of(if next { batch[i].next_obs[j] } else { batch[i].obs[j] })
    })
}

/// Running mean that reports NaN when empty.
#[derive(Default)]
pub(crate) struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    pub fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    pub fn get(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}
