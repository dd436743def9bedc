//! Stacked-LSTM surrogate of the plant: model, training, validation metrics
//! and the hysteresis branch test.

pub mod hysteresis;
pub mod model;
pub mod train;
pub mod validate;

pub use hysteresis::{hysteresis_branch_test, Branch, HysteresisReport};
pub use model::{SurrogateModel, SurrogateNet};
pub use train::{train_surrogate, SurrogateTrainConfig, TrainingHistory};
pub use validate::{validate, ErrorMetrics, ValidationReport};
