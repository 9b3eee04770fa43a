//! JSON, CSV and manifest writers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Significant digits kept for floats in JSON outputs.
pub const SIGNIFICANT_DIGITS: usize = 10;

pub fn round_float(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v).parse().expect("formatted float parses")
}

/// Rounds every float in `value`; non-finite numbers become null.
pub fn round_value(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let v = round_float(n.as_f64().expect("f64 number"));
            *value = serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_value(value).expect("serializable");
    round_value(&mut v);
    let mut out = serde_json::to_vec_pretty(&v).expect("serializable");
    out.push(b'\n');
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, command: &'static str) -> CliResult<T> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingArtifact { path: path.to_path_buf(), command })
        }
        Err(e) => return Err(CliError::io(path, e)),
    };
    serde_json::from_slice(&bytes).map_err(|e| CliError::format(path, e.to_string()))
}

/// Collects the files a command writes and the inputs it read, so the
/// manifest can list their hashes.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), outputs: BTreeMap::new(), inputs: BTreeMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.bytes(name, &to_json_bytes(value))
    }

    pub fn mask(&mut self, name: &str, mask: &robust_doa_core::grid::CellMask) -> CliResult<()> {
        self.bytes(name, &crate::maskfile::encode(mask))
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let path = self.path(name);
        let fail = |e: csv::Error| CliError::format(&path, e.to_string());
        w.write_record(header).map_err(fail)?;
        for row in rows {
            w.write_record(&row).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::format(&path, e.to_string()))?;
        self.bytes(name, &bytes)
    }

    /// Records the hash of an input artifact in this directory.
    pub fn input(&mut self, name: &str) -> CliResult<()> {
        let path = self.path(name);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        self.inputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(mut self, command: &str, config_text: &str, seeds: Seeds) -> CliResult<Manifest> {
        let manifest = Manifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            mask_format_version: 1,
            json_significant_digits: SIGNIFICANT_DIGITS,
            config_sha256: sha256_hex(config_text.as_bytes()),
            config: config_text.to_string(),
            seeds,
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.outputs),
        };
        let name = manifest_name(command);
        let path = self.path(&name);
        fs::write(&path, to_json_bytes(&manifest)).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

pub fn manifest_name(command: &str) -> String {
    format!("manifest_{command}.json")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub sampling: u64,
    pub pso: Option<u64>,
    pub probe: u64,
    pub simulation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub mask_format_version: u32,
    pub json_significant_digits: usize,
    pub config_sha256: String,
    /// Canonical TOML of the run configuration.
    pub config: String,
    pub seeds: Seeds,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Shortest text that round-trips `v` after rounding.
pub fn fmt_float(v: f64) -> String {
    let r = round_float(v);
    if r.is_finite() {
        format!("{r}")
    } else {
        format!("{v}")
    }
}
