//! JSON experiment configuration: loading, validation diagnostics, schema and hash.

use std::fmt;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::rollout::ExperimentConfig;

/// A configuration problem, located by key path and (when known) line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source_name: String,
    pub key_path: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.source_name)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
            if let Some(col) = self.column {
                write!(f, ":{col}")?;
            }
        }
        if !self.key_path.is_empty() && self.key_path != "." {
            write!(f, ": {}", self.key_path)?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Line (1-based) of the first occurrence of `"key"` in the document.
fn locate_key(text: &str, key_path: &str) -> Option<usize> {
    let leaf = key_path.rsplit('.').next()?;
    let needle = format!("\"{leaf}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

/// Parses and validates a configuration document. Missing keys take their
/// defaults; unknown keys are rejected.
pub fn parse_config(text: &str, source_name: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let key_path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError {
            source_name: source_name.to_string(),
            key_path,
            line: Some(inner.line()),
            column: Some(inner.column()),
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|e| ConfigError {
        source_name: source_name.to_string(),
        key_path: String::new(),
        line: Some(e.line()),
        column: Some(e.column()),
        message: e.to_string(),
    })?;
    config.validate().map_err(|e| {
        let msg = match e {
            Error::Config(m) => m,
            other => other.to_string(),
        };
        let (key_path, message) = match msg.split_once(": ") {
            Some((k, m)) if !k.contains(' ') => (k.to_string(), m.to_string()),
            _ => (String::new(), msg),
        };
        ConfigError {
            source_name: source_name.to_string(),
            line: locate_key(text, &key_path),
            column: None,
            key_path,
            message,
        }
    })?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        source_name: path.display().to_string(),
        key_path: String::new(),
        line: None,
        column: None,
        message: e.to_string(),
    })?;
    parse_config(&text, &path.display().to_string())
}

/// JSON Schema of the configuration file.
pub fn config_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
}

/// SHA-256 of the resolved configuration's canonical JSON.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance attached to every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_path: Option<String>,
    pub config: ExperimentConfig,
    pub base_seed: u64,
    pub tool_version: String,
    pub timestamp_utc: String,
    pub out_dir: String,
    pub config_hash: String,
}

impl RunManifest {
    pub fn new(config_path: Option<&Path>, config: ExperimentConfig, out_dir: &Path) -> Self {
        Self {
            config_path: config_path.map(|p| p.display().to_string()),
            base_seed: config.base_seed,
            config_hash: config_hash(&config),
            config,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_utc: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            out_dir: out_dir.display().to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = parse_config("{}", "t").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.system.n_agents, 2);
        assert_eq!(c.system.noise_bound, 0.03);
        assert_eq!(c.safety.psi, 2.0);
        assert_eq!(c.rollouts_per_group, 50);
    }

    #[test]
    fn theta_out_of_range_points_at_key() {
        let err = parse_config("{\n  \"groups\": 3,\n  \"theta\": 1.5\n}", "cfg.json").unwrap_err();
        assert_eq!(err.key_path, "theta");
        assert_eq!(err.line, Some(3));
        assert!(err.to_string().starts_with("cfg.json:3: theta:"), "{err}");
    }

    #[test]
    fn nested_validation_error_has_path() {
        let err = parse_config("{\"system\": {\"noise_bound\": -0.1}}", "c").unwrap_err();
        assert_eq!(err.key_path, "system.noise_bound");
        assert_eq!(err.line, Some(1));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config("{\"system\": {\"agents\": 3}}", "c").unwrap_err();
        assert!(err.message.contains("unknown field"), "{err}");
        assert_eq!(err.key_path, "system.agents");
    }

    #[test]
    fn type_errors_have_line_and_column() {
        let err = parse_config("{\n\"groups\": \"many\"}", "c").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(err.column.is_some());
    }

    #[test]
    fn trailing_garbage_rejected() {
        assert!(parse_config("{} {}", "c").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c =
            parse_config("{\"groups\": 7, \"safety\": {\"psi\": 4.5}, \"system\": {\"n_agents\": 3}}", "c").unwrap();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let again = parse_config(&text, "c").unwrap();
        assert_eq!(c, again);
        assert_eq!(config_hash(&c), config_hash(&again));
        assert_ne!(config_hash(&c), config_hash(&ExperimentConfig::default()));
    }

    #[test]
    fn schema_lists_top_level_keys() {
        let schema = config_schema();
        let props = schema["properties"].as_object().unwrap();
        for key in ["groups", "rollouts_per_group", "theta", "delta", "system", "safety", "controller", "sweeps"] {
            assert!(props.contains_key(key), "missing {key}");
        }
    }
}
