//! Run manifests: enough provenance to reproduce a run and audit its cost.
//! One manifest is written beside every command output.

use std::path::{Path, PathBuf};

use geofuse_core::dataset::bytes_digest;
use geofuse_core::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub argv: String,
    pub seed: u64,
    pub wall_seconds: f64,
    pub mac_count: u64,
    /// Fully resolved configuration.
    pub config: Vec<(String, String)>,
    /// `(name, sha256)` of every input.
    pub inputs: Vec<(String, String)>,
    /// `(name, sha256)` of every produced file.
    pub outputs: Vec<(String, String)>,
    /// Free-form extras (best fitness, split sizes, ...).
    pub notes: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &str, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            argv: argv.to_string(),
            seed,
            ..RunManifest::default()
        }
    }

    pub fn add_input_file<P: AsRef<Path>>(&mut self, path: P) -> Result<()> {
        let bytes = std::fs::read(&path)?;
        self.inputs
            .push((path.as_ref().display().to_string(), bytes_digest(&bytes)));
        Ok(())
    }

    pub fn add_input_digest(&mut self, name: &str, digest: &str) {
        self.inputs.push((name.to_string(), digest.to_string()));
    }

    pub fn add_output_file<P: AsRef<Path>>(&mut self, path: P) -> Result<()> {
        let bytes = std::fs::read(&path)?;
        self.outputs
            .push((path.as_ref().display().to_string(), bytes_digest(&bytes)));
        Ok(())
    }

    pub fn add_output_digest(&mut self, name: &str, digest: &str) {
        self.outputs.push((name.to_string(), digest.to_string()));
    }

    pub fn note(&mut self, key: &str, value: String) {
        self.notes.push((key.to_string(), value));
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("command={}\n", self.command));
        out.push_str(&format!("argv={}\n", self.argv));
        out.push_str(&format!("seed={}\n", self.seed));
        out.push_str(&format!("wall_seconds={}\n", self.wall_seconds));
        out.push_str(&format!("mac_count={}\n", self.mac_count));
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k}={v}\n"));
        }
        for (k, v) in &self.inputs {
            out.push_str(&format!("input.{k}={v}\n"));
        }
        for (k, v) in &self.outputs {
            out.push_str(&format!("output.{k}={v}\n"));
        }
        for (k, v) in &self.notes {
            out.push_str(&format!("note.{k}={v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<RunManifest> {
        let mut m = RunManifest::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("manifest line {}: missing '='", lineno + 1))
            })?;
            let value = value.to_string();
            match key {
                "command" => m.command = value,
                "argv" => m.argv = value,
                "seed" => {
                    m.seed = value.parse().map_err(|_| {
                        Error::InvalidConfig(format!("manifest line {}: bad seed", lineno + 1))
                    })?
                }
                "wall_seconds" => {
                    m.wall_seconds = value.parse().map_err(|_| {
                        Error::InvalidConfig(format!("manifest line {}: bad wall_seconds", lineno + 1))
                    })?
                }
                "mac_count" => {
                    m.mac_count = value.parse().map_err(|_| {
                        Error::InvalidConfig(format!("manifest line {}: bad mac_count", lineno + 1))
                    })?
                }
                other => {
                    if let Some(k) = other.strip_prefix("config.") {
                        m.config.push((k.to_string(), value));
                    } else if let Some(k) = other.strip_prefix("input.") {
                        m.inputs.push((k.to_string(), value));
                    } else if let Some(k) = other.strip_prefix("output.") {
                        m.outputs.push((k.to_string(), value));
                    } else if let Some(k) = other.strip_prefix("note.") {
                        m.notes.push((k.to_string(), value));
                    } else {
                        return Err(Error::InvalidConfig(format!(
                            "manifest line {}: unknown key '{other}'",
                            lineno + 1
                        )));
                    }
                }
            }
        }
        Ok(m)
    }

    /// Write beside the output it describes: `<output>.manifest`.
    pub fn write_beside<P: AsRef<Path>>(&self, output: P) -> Result<PathBuf> {
        let path = manifest_path(output.as_ref());
        std::fs::write(&path, self.to_text())?;
        Ok(path)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        RunManifest::parse(&text)
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    output.with_file_name(name)
}
