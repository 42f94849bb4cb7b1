//! Library side of the `ras` command: configuration, artifact storage,
//! subcommands and figures.

pub mod commands;
pub mod config;
pub mod render;
pub mod store;

pub use commands::{run, Command, Summary};
pub use config::RunConfig;

use ras_core::ddpg::DdpgError;
use ras_core::grid::GridError;
use ras_core::sim::SimError;
use ras_core::solver::SolverError;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid slice: {0}")]
    Slice(String),
    #[error("missing prerequisite artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("malformed artifact {}: {message}", .path.display())]
    Artifact { path: PathBuf, message: String },
    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Ddpg(#[from] DdpgError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn artifact(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Artifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Slice(_) => "slice",
            CliError::MissingArtifact(_) => "dependency",
            CliError::Artifact { .. } => "artifact",
            CliError::Io { .. } => "io",
            CliError::Solver(_) => "solver",
            CliError::Ddpg(_) => "training",
            CliError::Sim(_) => "simulation",
            CliError::Check(_) => "check",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Slice(_) => 2,
            CliError::MissingArtifact(_) => 3,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::MissingArtifact(p) = self {
            v["file"] = p.display().to_string().into();
        }
        v
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::Config(e.to_string())
    }
}
