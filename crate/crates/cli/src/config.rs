//! TOML configuration file support. Every key is optional; values act as
//! defaults and explicit command-line flags take precedence.

use std::path::{Path, PathBuf};

use anchorlab::learners::LearnerSpec;
use anchorlab::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub model: Option<String>,
    pub perturbation: Option<String>,
    pub n: Option<usize>,
    pub n_out: Option<usize>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub nu: Option<f64>,
    pub max_iter: Option<usize>,
    pub stop: Option<String>,
    pub repetitions: Option<usize>,
    /// Nested base-learner block, e.g. `[learner] kind = "forest"`.
    pub learner: Option<LearnerSpec>,
    /// Nested learner block for the stop3 reference fit.
    pub gopt_learner: Option<LearnerSpec>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }
}

/// Flag value if given, else config value, else the built-in default.
pub fn pick<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Flag value if given, else config value.
pub fn pick_opt<T: Clone>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}
