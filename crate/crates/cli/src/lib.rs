//! Library side of the `catheter` binary: run configuration, output layout
//! and one runner per pipeline stage.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{RunConfig, Stage};
pub use error::{CliError, CliResult};
pub use pipeline::{dispatch, run_pipeline, AgentKind, Command, Layout, PipelineOutcome};

/// Environment variable that overrides the configured output root.
pub const OUTPUT_ROOT_ENV: &str = "CATHETER_OUTPUT_ROOT";
