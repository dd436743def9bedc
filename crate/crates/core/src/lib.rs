pub mod agent;
pub mod dqn;
pub mod env;
pub mod error;
pub mod eval;
pub mod plant;
pub mod protocol;
pub mod replay;
pub mod rng;
pub mod scaler;
pub mod surrogate;
pub mod td3;
pub mod types;

pub use catheter_nn::Scalar;
pub use error::{CoreError, Result};
pub use plant::{Plant, PlantParams, PlantState, SAMPLE_PERIOD};
pub use scaler::MinMaxScaler;
pub use types::{clip_and_couple, ActionDelta, ServoAngles, TipPosition};
