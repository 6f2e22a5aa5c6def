use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetFormat, IngestOptions, PositivityPolicy, Split};
use crate::entity_link::MatcherConfig;
use crate::llm_gateway::BackendConfig;
use crate::pipeline::PipelineConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Line-delimited dialogue file with linked mentions (all splits).
    pub dialogues: PathBuf,
    #[serde(default = "default_format")]
    pub format: DatasetFormat,
    #[serde(default)]
    pub default_split: Option<Split>,
    #[serde(default)]
    pub redial_valid_fraction: f64,
    /// Optional `{"title", "year"}` sidecar.
    #[serde(default)]
    pub metadata: Option<PathBuf>,
    /// Fitted similarity model file.
    pub model: PathBuf,
}

fn default_format() -> DatasetFormat {
    DatasetFormat::RedditV2
}

impl DataConfig {
    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            format: self.format,
            default_split: self.default_split,
            redial_valid_fraction: self.redial_valid_fraction,
        }
    }

    /// Where popularity weights are kept next to the model.
    pub fn popularity_path(&self) -> PathBuf {
        let mut p = self.model.clone().into_os_string();
        p.push(".pop.json");
        PathBuf::from(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfConfig {
    pub lambda: f64,
    /// Popularity exponent; 0 disables the adjustment.
    pub beta: f64,
    /// Popularity counts cover this many trailing days of training data.
    pub pop_window_days: u32,
}

impl Default for CfConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            beta: 0.0,
            pop_window_days: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
    pub session_idle_secs: u64,
    /// Recommendations listed in the appended system turn.
    pub reply_items: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            session_idle_secs: 1800,
            reply_items: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub policy: PositivityPolicy,
    #[serde(default)]
    pub matcher: MatcherConfig,
    #[serde(default)]
    pub cf: CfConfig,
    #[serde(default)]
    pub service: ServiceConfig,
}

impl AppConfig {
    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: AppConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut cfg.data.dialogues);
        resolve(&mut cfg.data.model);
        if let Some(m) = cfg.data.metadata.as_mut() {
            resolve(m);
        }
        if let Some(t) = cfg.backend.transcript.as_mut() {
            resolve(t);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !self.cf.lambda.is_finite() || self.cf.lambda <= 0.0 {
            return bad(format!("cf.lambda must be positive, got {}", self.cf.lambda));
        }
        if !self.cf.beta.is_finite() || self.cf.beta < 0.0 {
            return bad(format!("cf.beta must be non-negative, got {}", self.cf.beta));
        }
        if !(0.0..=1.0).contains(&self.matcher.tau_char) {
            return bad(format!("matcher.tau_char must be in [0, 1], got {}", self.matcher.tau_char));
        }
        if !(0.0..1.0).contains(&self.data.redial_valid_fraction) {
            return bad("data.redial_valid_fraction must be in [0, 1)".into());
        }
        if self.backend.max_in_flight == 0 {
            return bad("backend.max_in_flight must be at least 1".into());
        }
        if !(-2..=2).contains(&self.policy.user_min) || !(-2..=2).contains(&self.policy.system_min) {
            return bad("policy thresholds must lie in -2..=2".into());
        }
        self.pipeline.validate().map_err(Error::Config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data]
dialogues = "d.jsonl"
model = "w.bin"
"#;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = AppConfig::from_toml(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(cfg.data.dialogues, Path::new("/base/d.jsonl"));
        assert_eq!(cfg.cf.lambda, 100.0);
        assert_eq!(cfg.policy, PositivityPolicy::default());
        assert_eq!(cfg.pipeline.m_rec, 20);
        assert_eq!(cfg.data.popularity_path(), Path::new("/base/w.bin.pop.json"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[cf]\nlamda = 3.0\n");
        assert!(matches!(AppConfig::from_toml(&text, Path::new(".")), Err(Error::Config(_))));
        let text = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert!(AppConfig::from_toml(&text, Path::new(".")).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let text = format!("{MINIMAL}\n[cf]\nlambda = 0.0\n");
        assert!(AppConfig::from_toml(&text, Path::new(".")).is_err());
        let text = format!("{MINIMAL}\n[pipeline]\nm_rec = 0\n");
        assert!(AppConfig::from_toml(&text, Path::new(".")).is_err());
    }
}
