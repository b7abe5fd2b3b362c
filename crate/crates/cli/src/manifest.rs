//! Run manifests: the resolved flags of a command plus its artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::failure::Failure;

pub const RUN_MANIFEST: &str = "run_manifest.txt";

/// Everything needed to rerun a command. The settings are flag names with
/// their resolved values, so the file can be passed back through `--config`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub settings: Vec<(String, String)>,
    pub artifacts: Vec<(String, PathBuf)>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            settings: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.settings.push((key.to_string(), value.to_string()));
        self
    }

    pub fn artifact(&mut self, name: &str, path: impl Into<PathBuf>) -> &mut Self {
        self.artifacts.push((name.to_string(), path.into()));
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# outadapt {} run manifest\n# tool-version = {}\n",
            self.command,
            env!("CARGO_PKG_VERSION")
        );
        for (name, path) in &self.artifacts {
            writeln!(out, "# artifact {name} = {}", path.display()).expect("write to string");
        }
        writeln!(out, "seed = {}", self.seed).expect("write to string");
        for (k, v) in &self.settings {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, Failure> {
        let path = dir.join(RUN_MANIFEST);
        fs::write(&path, self.to_text()).map_err(|e| Failure::io(&path, &e))?;
        Ok(path)
    }
}

/// Value of `key` in a manifest or config file, if present.
pub fn lookup(text: &str, key: &str) -> Option<String> {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim().to_string())
}

/// Comma-joined list for list-valued flags.
pub fn list<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}
