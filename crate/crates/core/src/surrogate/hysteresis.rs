use catheter_nn::Scalar;
use serde::{Deserialize, Serialize};

use super::model::SurrogateModel;
use crate::error::Result;
use crate::plant::{Plant, PlantState, SAMPLE_PERIOD};
use crate::protocol::{gen_linear_sweep, gen_sinusoid, Strictness, WINDOW};
use crate::types::{ServoAngles, TipPosition};

pub const TARGET_THETA1: f64 = -45.0;
pub const TARGET_THETA3: f64 = 40.0;
pub const SWEEP_RATE: f64 = 20.0;
pub const SINE_AMPLITUDE: f64 = 60.0;
pub const SINE_FREQUENCY: f64 = 0.5;
/// Samples the final command is held for before the settled tip is read.
pub const SETTLE_SAMPLES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Forward,
    Reverse,
    Sinusoid,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Forward, Branch::Reverse, Branch::Sinusoid];

    /// Commands that end exactly at the target configuration.
    pub fn commands(self) -> Result<Vec<ServoAngles>> {
        let theta1 = match self {
            Branch::Forward => gen_linear_sweep(-175.0, TARGET_THETA1, SWEEP_RATE, SAMPLE_PERIOD)?,
            Branch::Reverse => gen_linear_sweep(85.0, TARGET_THETA1, SWEEP_RATE, SAMPLE_PERIOD)?,
            Branch::Sinusoid => {
                // first crossing of the target on the falling half of the wave
                let omega = 2.0 * std::f64::consts::PI * SINE_FREQUENCY;
                let crossing = (std::f64::consts::PI + (-TARGET_THETA1 / SINE_AMPLITUDE).asin()) / omega;
                let mut s = gen_sinusoid(
                    SINE_AMPLITUDE,
                    SINE_FREQUENCY,
                    0.0,
                    (crossing / SAMPLE_PERIOD).floor() * SAMPLE_PERIOD + SAMPLE_PERIOD / 2.0,
                    SAMPLE_PERIOD,
                    Strictness::Error,
                )?;
                s.push(TARGET_THETA1);
                s
            }
        };
        theta1
            .into_iter()
            .map(|t1| ServoAngles::clip_and_couple(t1, TARGET_THETA3))
            .collect()
    }
}

/// Plant response along one approach.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantBranch {
    pub branch: Branch,
    pub commands: usize,
    /// Tip one sample after the final command is issued.
    pub arrival: TipPosition,
    /// Tip after the final command has been held for [`SETTLE_SAMPLES`] more samples.
    pub settled: TipPosition,
    pub settled_z: f64,
}

pub fn plant_branch(plant: &Plant, branch: Branch) -> Result<PlantBranch> {
    let mut commands = branch.commands()?;
    let n = commands.len();
    let last = commands[n - 1];
    commands.extend(std::iter::repeat_n(last, SETTLE_SAMPLES));
    let (tips, state) = plant.simulate(&PlantState::at_rest(commands[0]), &commands, SAMPLE_PERIOD, 0)?;
    Ok(PlantBranch {
        branch,
        commands: n,
        arrival: tips[n - 1],
        settled: tips[tips.len() - 1],
        settled_z: state.z,
    })
}

pub fn plant_branches(plant: &Plant) -> Result<Vec<PlantBranch>> {
    Branch::ALL.iter().map(|b| plant_branch(plant, *b)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub a: Branch,
    pub b: Branch,
    pub arrival_mm: f64,
    pub settled_mm: f64,
}

pub fn separations(branches: &[PlantBranch]) -> Vec<Separation> {
    let mut out = Vec::new();
    for i in 0..branches.len() {
        for j in i + 1..branches.len() {
            out.push(Separation {
                a: branches[i].branch,
                b: branches[j].branch,
                arrival_mm: branches[i].arrival.distance(&branches[j].arrival),
                settled_mm: branches[i].settled.distance(&branches[j].settled),
            });
        }
    }
    out
}

/// Forward-vs-reverse settled separation, the headline hysteresis width.
pub fn forward_reverse_separation(plant: &Plant) -> Result<f64> {
    let f = plant_branch(plant, Branch::Forward)?;
    let r = plant_branch(plant, Branch::Reverse)?;
    Ok(f.settled.distance(&r.settled))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPrediction {
    pub plant: PlantBranch,
    pub predicted: TipPosition,
    pub abs_error_x: f64,
    pub abs_error_y: f64,
    /// Euclidean distance between prediction and plant arrival tip.
    pub error_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HysteresisReport {
    pub target_theta1: f64,
    pub target_theta3: f64,
    pub branches: Vec<BranchPrediction>,
    pub separations: Vec<Separation>,
    pub max_error_mm: f64,
}

/// Runs the three approaches on the plant and compares the model's
/// prediction from the last ten commands with the arrival tip.
pub fn hysteresis_branch_test<T: Scalar>(model: &SurrogateModel<T>, plant: &Plant) -> Result<HysteresisReport> {
    let mut branches = Vec::new();
    let mut plant_only = Vec::new();
    for b in Branch::ALL {
        let commands = b.commands()?;
        let pb = plant_branch(plant, b)?;
        let window = &commands[commands.len().saturating_sub(WINDOW)..];
        let predicted = *model.predict_window(window)?.last().expect("window is non-empty");
        branches.push(BranchPrediction {
            abs_error_x: (predicted.x - pb.arrival.x).abs(),
            abs_error_y: (predicted.y - pb.arrival.y).abs(),
            error_mm: predicted.distance(&pb.arrival),
            predicted,
            plant: pb.clone(),
        });
        plant_only.push(pb);
    }
    Ok(HysteresisReport {
        target_theta1: TARGET_THETA1,
        target_theta3: TARGET_THETA3,
        max_error_mm: branches.iter().map(|b| b.error_mm).fold(0.0, f64::max),
        separations: separations(&plant_only),
        branches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::PlantParams;

    #[test]
    fn every_branch_ends_at_target() {
        for b in Branch::ALL {
            let c = b.commands().unwrap();
            assert!(c.len() >= WINDOW, "{b:?}");
            let last = c.last().unwrap();
            assert_eq!((last.theta1, last.theta3), (TARGET_THETA1, TARGET_THETA3));
        }
    }

    #[test]
    fn sinusoid_approaches_from_above() {
        let c = Branch::Sinusoid.commands().unwrap();
        let n = c.len();
        assert!(c[n - 2].theta1 > TARGET_THETA1 && c[n - 2].theta1 - TARGET_THETA1 < 10.0);
        assert!(c[n - 3].theta1 > c[n - 2].theta1);
    }

    #[test]
    fn default_plant_shows_hysteresis() {
        let plant = Plant::new(PlantParams::default()).unwrap();
        assert!(forward_reverse_separation(&plant).unwrap() >= 1.5);
    }

    #[test]
    fn no_hysteresis_gain_collapses_branches() {
        let plant = Plant::new(PlantParams {
            k_h: 0.0,
            ..PlantParams::default()
        })
        .unwrap();
        for s in separations(&plant_branches(&plant).unwrap()) {
            assert!(s.settled_mm <= 0.05, "{s:?}");
        }
    }
}
