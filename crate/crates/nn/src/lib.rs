//! Small neural-network toolkit with explicit forward/backward passes.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below are what training code uses by default.

pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod dropout;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod params;
pub mod scalar;

pub use adam::Adam;
pub use checkpoint::{CheckpointReader, CheckpointWriter};
pub use dense::{Activation, Dense, Mlp, MlpTrace};
pub use dropout::Dropout;
pub use error::{NnError, Result};
pub use gradcheck::{GradCheck, GradCheckReport};
pub use loss::mse_loss;
pub use lstm::{Lstm, LstmSeqCache, LstmStepCache};
pub use params::{polyak_update, Params};
pub use scalar::{sigmoid, Scalar};

pub type Dense64 = Dense<f64>;
pub type Mlp64 = Mlp<f64>;
pub type Lstm64 = Lstm<f64>;
pub type Adam64 = Adam<f64>;
pub type Dense32 = Dense<f32>;
pub type Mlp32 = Mlp<f32>;
pub type Lstm32 = Lstm<f32>;
