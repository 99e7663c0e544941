use serde::{Deserialize, Serialize};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Identifies the run that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Provenance {
            config_hash: config_hash.into(),
            seed,
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    /// `# config_hash=… seed=… tool_version=…` header line for text artifacts.
    pub fn comment_line(&self) -> String {
        format!(
            "# config_hash={} seed={} tool_version={}",
            self.config_hash, self.seed, self.tool_version
        )
    }
}
