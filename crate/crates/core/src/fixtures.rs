//! Fixture-directory loading shared by every subsystem.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl FixtureError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads and deserializes a JSON file. Parse errors carry the field path.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, FixtureError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FixtureError::io(path, e))?;
    parse_json(path, &text)
}

pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, FixtureError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| FixtureError::Parse {
        path: path.to_path_buf(),
        message: if e.path().iter().next().is_some() {
            format!("at `{}`: {}", e.path(), e.inner())
        } else {
            e.inner().to_string()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, serde::Deserialize)]
    #[allow(dead_code)]
    struct Outer {
        items: Vec<Inner>,
    }

    #[derive(Debug, serde::Deserialize)]
    #[allow(dead_code)]
    struct Inner {
        n: u32,
    }

    #[test]
    fn parse_errors_name_the_field_path() {
        let err = parse_json::<Outer>(Path::new("x.json"), r#"{"items": [{"n": 1}, {"n": "two"}]}"#)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("x.json: at `items[1].n`"), "{msg}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            read_json::<Outer>("/nonexistent/file.json"),
            Err(FixtureError::Io { .. })
        ));
    }
}
