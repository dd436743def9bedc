//! Synthetic catheter plant.
//!
//! Servo angles follow their commands through a first-order lag. The tip
//! bending angle responds to `theta1` through a Bouc–Wen hysteresis state
//! `z` (exponent 1), and insertion `theta3` sets the tip radius:
//!
//! ```text
//! phi = k_phi * (theta1 + k_h * z) + phi0
//! r   = r0 + k_r * theta3
//! tip = (r cos phi, r sin phi)
//! ```

use catheter_nn::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{ServoAngles, TipPosition, THETA2_OFFSET};

/// Sample period of the acquisition and control loops (10 Hz).
pub const SAMPLE_PERIOD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams<T = f64> {
    /// Servo time constant (s).
    pub tau_s: T,
    pub a_bw: T,
    pub beta_bw: T,
    pub gamma_bw: T,
    /// Weight of the hysteresis state in the bending angle.
    pub k_h: T,
    /// Bending angle per degree of effective `theta1`.
    pub k_phi: T,
    /// Bending angle offset (deg).
    pub phi0: T,
    /// Tip radius at zero insertion (mm).
    pub r0: T,
    /// Radius gained per degree of insertion (mm/deg).
    pub k_r: T,
    /// Explicit Euler sub-steps per sample.
    pub substeps: usize,
    /// Standard deviation of additive Gaussian tip noise (mm).
    pub output_noise_sigma: T,
}

impl<T: Scalar> Default for PlantParams<T> {
    fn default() -> Self {
        PlantParams {
            tau_s: T::of(0.15),
            a_bw: T::of(1.0),
            beta_bw: T::of(0.05),
            gamma_bw: T::of(0.05),
            k_h: T::of(0.33),
            k_phi: T::of(0.6),
            phi0: T::zero(),
            r0: T::of(20.0),
            k_r: T::of(0.26),
            substeps: 10,
            output_noise_sigma: T::zero(),
        }
    }
}

impl<T: Scalar> PlantParams<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(CoreError::Config(format!("plant: {what}")));
        if !(self.tau_s > T::zero()) {
            return bad("tau_s must be positive");
        }
        if !(self.beta_bw + self.gamma_bw > T::zero()) {
            return bad("beta_bw + gamma_bw must be positive");
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1");
        }
        if !(self.r0 > T::zero()) {
            return bad("r0 must be positive");
        }
        if !(self.k_r >= T::zero()) {
            return bad("k_r must be non-negative");
        }
        if !(self.output_noise_sigma >= T::zero()) {
            return bad("output_noise_sigma must be non-negative");
        }
        Ok(())
    }

    /// Bound on `|z|`: `A / (beta + gamma)`.
    pub fn z_max(&self) -> T {
        self.a_bw / (self.beta_bw + self.gamma_bw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantState<T = f64> {
    /// Actual (lagged) servo angles.
    pub angles: ServoAngles<T>,
    /// Hysteresis state (deg).
    pub z: T,
}

impl<T: Scalar> PlantState<T> {
    /// Settled at `angles` with no hysteresis offset.
    pub fn at_rest(angles: ServoAngles<T>) -> Self {
        PlantState { angles, z: T::zero() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plant<T = f64> {
    params: PlantParams<T>,
}

impl<T: Scalar> Plant<T> {
    pub fn new(params: PlantParams<T>) -> Result<Self> {
        params.validate()?;
        Ok(Plant { params })
    }

    pub fn params(&self) -> &PlantParams<T> {
        &self.params
    }

    /// Noise-free tip for given actual angles and hysteresis state.
    pub fn equilibrium_tip(&self, theta1: T, theta3: T, z: T) -> TipPosition<T> {
        let p = &self.params;
        let phi = (p.k_phi * (theta1 + p.k_h * z) + p.phi0).to_radians();
        let r = p.r0 + p.k_r * theta3;
        TipPosition::new(r * phi.cos(), r * phi.sin())
    }

    pub fn tip_of(&self, state: &PlantState<T>) -> TipPosition<T> {
        self.equilibrium_tip(state.angles.theta1, state.angles.theta3, state.z)
    }

    /// Advances the plant by `dt` under a held `command`.
    ///
    /// `noise` supplies the Gaussian output noise stream; it is only drawn
    /// from when `output_noise_sigma > 0`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &PlantState<T>,
        command: &ServoAngles<T>,
        dt: T,
        noise: Option<&mut R>,
    ) -> (PlantState<T>, TipPosition<T>) {
        let p = &self.params;
        let h = dt / T::from_usize(p.substeps).unwrap();
        let z_max = p.z_max();
        let mut theta1 = state.angles.theta1;
        let mut theta3 = state.angles.theta3;
        let mut z = state.z;
        for _ in 0..p.substeps {
            let v = (command.theta1 - theta1) / p.tau_s;
            let v3 = (command.theta3 - theta3) / p.tau_s;
            let dz = p.a_bw * v - p.beta_bw * v.abs() * z - p.gamma_bw * v * z.abs();
            theta1 += h * v;
            theta3 += h * v3;
            // the continuous solution never leaves [-z_max, z_max]; large
            // command jumps can make a single Euler step overshoot it
            z = (z + h * dz).max(-z_max).min(z_max);
            debug_assert!(z.abs() <= z_max);
        }
        let next = PlantState {
            angles: ServoAngles {
                theta1,
                theta2: theta1 + T::of(THETA2_OFFSET),
                theta3,
            },
            z,
        };
        let mut tip = self.tip_of(&next);
        if p.output_noise_sigma > T::zero() {
            if let Some(rng) = noise {
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                tip.x += p.output_noise_sigma * T::of(nx);
                tip.y += p.output_noise_sigma * T::of(ny);
            }
        }
        (next, tip)
    }

    /// Folds [`Plant::step`] over `commands`, returning the tip after each one
    /// and the final state. Output noise (if any) is drawn from a stream seeded by `seed`.
    pub fn simulate(
        &self,
        initial: &PlantState<T>,
        commands: &[ServoAngles<T>],
        dt: T,
        seed: u64,
    ) -> Result<(Vec<TipPosition<T>>, PlantState<T>)> {
        if commands.is_empty() {
            return Err(CoreError::Domain("simulate needs at least one command".into()));
        }
        if !(dt > T::zero()) {
            return Err(CoreError::Domain(format!("dt must be positive, got {dt}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = *initial;
        let mut tips = Vec::with_capacity(commands.len());
        for cmd in commands {
            let (next, tip) = self.step(&state, cmd, dt, Some(&mut rng));
            state = next;
            tips.push(tip);
        }
        Ok((tips, state))
    }
}
