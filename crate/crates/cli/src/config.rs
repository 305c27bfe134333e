//! Layered configuration: compiled defaults, overridden by an optional
//! TOML file, overridden by command-line flags (flags > file >
//! defaults). Flags are merged by each command; this module only loads
//! and validates the file layer.

use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Reward unit label substituted into prompts ("tokens of your
    /// world's currency" in the published instrument).
    pub unit: Option<String>,
    /// Language codes to include (defaults to all 22).
    pub languages: Option<Vec<String>>,
    pub samples_per_cell: Option<usize>,
    pub seed: Option<u64>,
    pub model_id: Option<String>,
    pub endpoint: Option<String>,
    /// Hard token budget for live runs.
    pub budget_tokens: Option<u64>,
    /// Retry cap for refusal replies.
    pub refusal_retry_cap: Option<u32>,
    /// Directory holding per-language question templates.
    pub template_dir: Option<PathBuf>,
    /// Population preset or JSON file for simulated runs.
    pub population: Option<String>,
    #[serde(default)]
    pub lda: LdaConfig,
    /// Extra context-specific stopwords (empty by default).
    #[serde(default)]
    pub context_stopwords: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdaConfig {
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub iters: Option<usize>,
    pub seed: Option<u64>,
    /// Merge map as labels per raw topic, e.g. ["risk", "opportunity",
    /// "urgency", "opportunity"].
    pub merge_map: Option<Vec<String>>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, String> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
}

pub const DEFAULT_UNIT: &str = "tokens of your world's currency";
