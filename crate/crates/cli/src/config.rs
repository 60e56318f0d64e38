//! Optional TOML config file. Every key mirrors a command-line flag, and
//! flags win when both are given.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub candidates: Option<usize>,
    /// `"K,M,N"`.
    pub tiers: Option<String>,
    /// Integer, fraction or decimal, as a string.
    pub budget: Option<String>,
    pub tau: Option<f64>,
    pub seed: Option<u64>,
    pub deterministic: Option<bool>,
    /// `"WxH"`.
    pub base_resolution: Option<String>,

    pub endpoint: Option<String>,
    pub model_hint: Option<String>,
    pub timeout_ms: Option<u64>,
    pub max_batch: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub max_retries: Option<u32>,
    pub cache_dir: Option<PathBuf>,

    pub trials: Option<u64>,
    pub policy: Option<Vec<String>>,
    pub gap: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub planted: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    pub fn load_optional(path: Option<&Path>) -> Result<Self, String> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys() {
        let c: FileConfig = toml::from_str("tiers = \"8,0,0\"\ntau = 0.5\npolicy = [\"uniform\"]\n").unwrap();
        assert_eq!(c.tiers.as_deref(), Some("8,0,0"));
        assert_eq!(c.tau, Some(0.5));
        assert_eq!(c.policy, Some(vec!["uniform".to_string()]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("temprature = 0.5\n").is_err());
    }
}
