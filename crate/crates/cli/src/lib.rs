//! Scenario runner, reports and the invariant suite behind the `sasaki-lab`
//! command line tool.

pub mod config;
pub mod criteria;
pub mod report;
pub mod scenario;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error(transparent)]
    Numerical(#[from] sasaki_flow::error::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Failed(String),
}

impl LabError {
    /// Process exit code: 2 for configuration errors, 3 for numerical or
    /// check failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config { .. } => 2,
            LabError::Numerical(_) | LabError::Failed(_) => 3,
            LabError::Io(_) => 1,
        }
    }
}
