//! Service configuration file (JSON or TOML).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use sage_core::llm::LlmSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// `field` is the dotted path of the offending entry.
    #[error("invalid config {path} at '{field}': {message}")]
    Parse {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("invalid config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_poll_interval_ms() -> u64 {
    2000
}

fn default_max_sessions() -> usize {
    4
}

fn default_human_timeout_secs() -> u64 {
    120
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    /// Home fixture directory (devices, capabilities, states, tools).
    pub fixtures: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dir: Option<PathBuf>,
    pub llm: LlmSpec,
    /// 0 disables the background poller.
    #[serde(default = "default_poll_interval_ms")]
    pub poll_interval_ms: u64,
    #[serde(default = "default_max_sessions")]
    pub max_sessions: usize,
    #[serde(default = "default_human_timeout_secs")]
    pub human_timeout_secs: u64,
    #[serde(default = "default_true")]
    pub seed_memories: bool,
    /// Built web console, served at `/`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_dir: Option<PathBuf>,
}

impl ServerConfig {
    pub fn new(fixtures: impl Into<PathBuf>, llm: LlmSpec) -> Self {
        Self {
            bind: default_bind(),
            fixtures: fixtures.into(),
            state_dir: None,
            llm,
            poll_interval_ms: default_poll_interval_ms(),
            max_sessions: default_max_sessions(),
            human_timeout_secs: default_human_timeout_secs(),
            seed_memories: true,
            static_dir: None,
        }
    }

    /// Reads the file; relative paths inside resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |field: String, message: String| ConfigError::Parse {
            path: path.to_path_buf(),
            field: if field.is_empty() || field == "." { "<root>".into() } else { field },
            message,
        };
        let mut cfg: ServerConfig = if path.extension().is_some_and(|e| e == "toml") {
            let de = toml::Deserializer::parse(&text).map_err(|e| parse_err(String::new(), e.to_string()))?;
            serde_path_to_error::deserialize(de).map_err(|e| parse_err(e.path().to_string(), e.inner().to_string()))?
        } else {
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de).map_err(|e| parse_err(e.path().to_string(), e.inner().to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate().map_err(|message| ConfigError::Invalid {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.fixtures);
        if let Some(p) = self.state_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.static_dir.as_mut() {
            fix(p);
        }
        match &mut self.llm {
            LlmSpec::Scripted { replay } | LlmSpec::Record { replay } => fix(replay),
            LlmSpec::Live { .. } => {}
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_sessions == 0 {
            return Err("max_sessions must be at least 1".into());
        }
        if !self.fixtures.is_dir() {
            return Err(format!("fixtures directory {} does not exist", self.fixtures.display()));
        }
        if let LlmSpec::Scripted { replay } = &self.llm {
            if !replay.is_file() {
                return Err(format!("replay file {} does not exist", replay.display()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn bad_field_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.json", r#"{"fixtures": ".", "llm": {"kind": "live"}, "max_sessions": "four"}"#);
        let err = ServerConfig::load(&p).unwrap_err();
        assert!(matches!(&err, ConfigError::Parse { field, .. } if field == "max_sessions"), "{err}");
    }

    #[test]
    fn toml_errors_name_the_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.toml", "fixtures = \".\"\n[llm]\nkind = \"live\"\ntimeout_secs = \"x\"\n");
        let err = ServerConfig::load(&p).unwrap_err();
        assert!(matches!(&err, ConfigError::Parse { field, .. } if field == "llm"), "{err}");
        assert!(err.to_string().contains("expected u64"), "{err}");
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.toml", "fixtures = \".\"\nport = 1\n[llm]\nkind = \"live\"\n");
        let err = ServerConfig::load(&p).unwrap_err().to_string();
        assert!(err.contains("port"), "{err}");
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write(&dir, "r.json", r#"{"rules": []}"#);
        let p = write(&dir, "c.json", r#"{"fixtures": ".", "llm": {"kind": "scripted", "replay": "r.json"}}"#);
        let cfg = ServerConfig::load(&p).unwrap();
        assert_eq!(cfg.fixtures, dir.path().join("."));
        assert_eq!(cfg.poll_interval_ms, 2000);
        assert_eq!(cfg.max_sessions, 4);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(ServerConfig::load("/nonexistent/c.json"), Err(ConfigError::Io { .. })));
    }
}
