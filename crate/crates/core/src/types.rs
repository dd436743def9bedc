//! Servo-angle, tip-position and action value types.
//!
//! Angles are in degrees throughout; positions in millimetres.

use catheter_nn::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const THETA1_MIN: f64 = -175.0;
pub const THETA1_MAX: f64 = 85.0;
pub const THETA2_OFFSET: f64 = 180.0;
pub const THETA3_MIN: f64 = 0.0;
pub const THETA3_MAX: f64 = 88.0;
/// Per-step bound on each commanded angle increment.
pub const ACTION_LIMIT: f64 = 5.0;

/// Servo configuration. `theta2` is always `theta1 + 180`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServoAngles<T = f64> {
    pub theta1: T,
    pub theta2: T,
    pub theta3: T,
}

impl<T: Scalar> ServoAngles<T> {
    /// Neutral pose `(0, 180, 0)`.
    pub fn default_rest() -> Self {
        ServoAngles {
            theta1: T::zero(),
            theta2: T::of(THETA2_OFFSET),
            theta3: T::zero(),
        }
    }

    /// Clips `theta1`/`theta3` into range and derives the coupled `theta2`.
    pub fn clip_and_couple(raw_theta1: T, raw_theta3: T) -> Result<Self> {
        if !raw_theta1.is_finite() || !raw_theta3.is_finite() {
            return Err(CoreError::Domain(format!(
                "servo angles must be finite, got ({raw_theta1}, {raw_theta3})"
            )));
        }
        let theta1 = raw_theta1.max(T::of(THETA1_MIN)).min(T::of(THETA1_MAX));
        let theta3 = raw_theta3.max(T::of(THETA3_MIN)).min(T::of(THETA3_MAX));
        Ok(ServoAngles {
            theta1,
            theta2: theta1 + T::of(THETA2_OFFSET),
            theta3,
        })
    }

    pub fn as_array(&self) -> [T; 3] {
        [self.theta1, self.theta2, self.theta3]
    }

    /// Range and coupling invariants.
    pub fn is_valid(&self) -> bool {
        let t1 = self.theta1.to_f64_lossless();
        let t3 = self.theta3.to_f64_lossless();
        (THETA1_MIN..=THETA1_MAX).contains(&t1)
            && (THETA3_MIN..=THETA3_MAX).contains(&t3)
            && self.theta2 == self.theta1 + T::of(THETA2_OFFSET)
    }

    pub fn cast<U: Scalar>(&self) -> ServoAngles<U> {
        ServoAngles {
            theta1: U::of(self.theta1.to_f64_lossless()),
            theta2: U::of(self.theta2.to_f64_lossless()),
            theta3: U::of(self.theta3.to_f64_lossless()),
        }
    }
}

/// Free-function form of [`ServoAngles::clip_and_couple`].
pub fn clip_and_couple<T: Scalar>(raw_theta1: T, raw_theta3: T) -> Result<ServoAngles<T>> {
    ServoAngles::clip_and_couple(raw_theta1, raw_theta3)
}

/// Catheter tip in the planar workspace (mm).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TipPosition<T = f64> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> TipPosition<T> {
    pub fn new(x: T, y: T) -> Self {
        TipPosition { x, y }
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn radius(&self) -> T {
        self.x.hypot(self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Commanded increment of `(theta1, theta3)`; `theta2` follows `theta1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionDelta<T = f64> {
    pub dtheta1: T,
    pub dtheta3: T,
}

impl<T: Scalar> ActionDelta<T> {
    pub fn new(dtheta1: T, dtheta3: T) -> Self {
        ActionDelta { dtheta1, dtheta3 }
    }

    pub fn dtheta2(&self) -> T {
        self.dtheta1
    }

    /// Each component clipped to `±ACTION_LIMIT`.
    pub fn clipped(&self) -> Self {
        let lim = T::of(ACTION_LIMIT);
        ActionDelta {
            dtheta1: self.dtheta1.max(-lim).min(lim),
            dtheta3: self.dtheta3.max(-lim).min(lim),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dtheta1.is_finite() && self.dtheta3.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn in_range_angles_are_only_coupled() {
        let a = clip_and_couple(0.0, 40.0).unwrap();
        assert_eq!(a, ServoAngles { theta1: 0.0, theta2: 180.0, theta3: 40.0 });
    }

    #[test]
    fn low_theta1_clips_to_minimum() {
        let a = clip_and_couple(-200.0, 40.0).unwrap();
        assert_eq!(a.as_array(), [-175.0, 5.0, 40.0]);
    }

    #[test]
    fn both_upper_bounds_clip() {
        let a = clip_and_couple(90.0, 100.0).unwrap();
        assert_eq!(a.as_array(), [85.0, 265.0, 88.0]);
    }

    #[test]
    fn non_finite_input_is_a_domain_error() {
        assert!(matches!(clip_and_couple(f64::NAN, 1.0), Err(CoreError::Domain(_))));
        assert!(clip_and_couple(0.0f32, f32::INFINITY).is_err());
    }

    #[test]
    fn action_clip_bounds() {
        let a = ActionDelta::new(6.0, -7.0).clipped();
        assert_eq!(a, ActionDelta::new(5.0, -5.0));
        assert_eq!(a.dtheta2(), 5.0);
    }

    proptest! {
        #[test]
        fn clip_and_couple_is_idempotent(t1 in -1e4f64..1e4, t3 in -1e4f64..1e4) {
            let once = clip_and_couple(t1, t3).unwrap();
            let twice = clip_and_couple(once.theta1, once.theta3).unwrap();
            prop_assert_eq!(once, twice);
            prop_assert!(once.is_valid());
        }
    }
}
