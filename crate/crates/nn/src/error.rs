use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid hyperparameter: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn check_shape(
    context: &'static str,
    expected: &[usize],
    got: &[usize],
) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::Shape {
            context,
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        })
    }
}
