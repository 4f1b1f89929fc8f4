//! TOML config files and run manifests.
//!
//! A manifest stores every resolved setting as a top-level key, so passing it
//! back through `--config` repeats the run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Manifest keys that are not settings.
const RESERVED: [&str; 6] = ["command", "version", "inputs", "artifacts", "results", "run"];

#[derive(Default)]
pub struct Config {
    table: toml::Table,
}

impl Config {
    /// Reads `path`; every key must be a known setting or a manifest key.
    pub fn load(path: Option<&Path>, known: &BTreeSet<String>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("failed to read config {}", path.display()))?;
        let table: toml::Table = text.parse().with_context(|| format!("failed to parse config {}", path.display()))?;
        for key in table.keys() {
            if !known.contains(key) && !RESERVED.contains(&key.as_str()) {
                bail!("unknown key `{key}` in config {}", path.display());
            }
        }
        Ok(Self { table })
    }

    /// Overlays the flags in `cli` on the file values of the same keys.
    pub fn resolve<G>(&self, cli: &G) -> Result<G>
    where
        G: clap::Args + Serialize + DeserializeOwned,
    {
        let mut merged = toml::Table::new();
        for id in arg_ids::<G>() {
            if let Some(value) = self.table.get(&id) {
                merged.insert(id, value.clone());
            }
        }
        merged.extend(toml::Table::try_from(cli).context("failed to encode command-line options")?);
        merged.try_into().context("invalid value in config")
    }
}

/// Field names of an option group, which double as config keys.
pub fn arg_ids<G: clap::Args>() -> Vec<String> {
    G::augment_args(clap::Command::new("probe")).get_arguments().map(|a| a.get_id().to_string()).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("failed to read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct Manifest {
    command: &'static str,
    settings: toml::Table,
    inputs: toml::Table,
    artifacts: toml::Table,
    results: toml::Table,
}

impl Manifest {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            settings: toml::Table::new(),
            inputs: toml::Table::new(),
            artifacts: toml::Table::new(),
            results: toml::Table::new(),
        }
    }

    pub fn settings<G: Serialize>(&mut self, group: &G) -> Result<()> {
        self.settings.extend(toml::Table::try_from(group).context("failed to encode settings")?);
        Ok(())
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.into(), file_entry(path)?.into());
        Ok(())
    }

    pub fn artifact(&mut self, name: &str, path: &Path) -> Result<()> {
        self.artifacts.insert(name.into(), file_entry(path)?.into());
        Ok(())
    }

    pub fn result(&mut self, name: &str, value: impl Into<toml::Value>) {
        self.results.insert(name.into(), value.into());
    }

    pub fn write(mut self, path: &Path, wall_time: Duration, threads: usize) -> Result<()> {
        let mut table = std::mem::take(&mut self.settings);
        table.insert("command".into(), self.command.into());
        table.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        for (key, section) in [("inputs", self.inputs), ("artifacts", self.artifacts), ("results", self.results)] {
            if !section.is_empty() {
                table.insert(key.into(), section.into());
            }
        }
        let mut run = toml::Table::new();
        run.insert("wall_time_seconds".into(), wall_time.as_secs_f64().into());
        run.insert("threads".into(), (threads as i64).into());
        table.insert("run".into(), run.into());
        let text = toml::to_string(&table).context("failed to encode manifest")?;
        std::fs::write(path, text).with_context(|| format!("failed to write {}", path.display()))
    }
}

fn file_entry(path: &Path) -> Result<toml::Table> {
    let mut entry = toml::Table::new();
    entry.insert("path".into(), path.display().to_string().into());
    entry.insert("sha256".into(), sha256_file(path)?.into());
    Ok(entry)
}

/// `<out>.manifest.toml` next to a single-file output.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.toml");
    out.with_file_name(name)
}
