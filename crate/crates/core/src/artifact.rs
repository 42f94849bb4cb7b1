//! Provenance stamp embedded in every persisted artifact.

use serde::{Deserialize, Serialize};

/// Identifies the run configuration an artifact was produced from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub master_seed: u64,
}
