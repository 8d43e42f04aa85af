//! Run directories: named by a hash of the command and resolved config, and
//! holding the config echo, a key=value summary and every artifact.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use netinv::Result;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub struct RunDir {
    pub path: PathBuf,
    summary: Vec<(String, String)>,
}

impl RunDir {
    /// Creates `<out>/<command>-<hash>` and writes the resolved config echo.
    pub fn create(command: &str, config: &RunConfig) -> Result<Self> {
        let echo = config.to_toml();
        let digest = Sha256::digest(format!("{command}\n{echo}").as_bytes());
        let hash: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        let path = config.out.join(format!("{command}-{hash}"));
        fs::create_dir_all(&path)?;
        fs::write(path.join("config.toml"), echo)?;
        log::info!("run directory {}", path.display());
        let mut run = Self { path, summary: Vec::new() };
        run.record("command", command);
        run.record("seed", config.seed);
        run.record("version", env!("CARGO_PKG_VERSION"));
        Ok(run)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Adds a summary line; written by [`RunDir::finish`].
    pub fn record(&mut self, key: &str, value: impl Display) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    pub fn record_opt(&mut self, key: &str, value: Option<f64>) {
        match value {
            Some(v) => self.record(key, v),
            None => self.record(key, "absent"),
        }
    }

    /// Writes `summary.txt` and returns its path.
    pub fn finish(&self) -> Result<PathBuf> {
        let text: String = self.summary.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let path = self.file("summary.txt");
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Parses a `summary.txt` into ordered key/value pairs.
pub fn read_summary(path: &Path) -> Result<Vec<(String, String)>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect())
}
