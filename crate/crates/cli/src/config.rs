//! Config files, flag overlay, hashing and manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const COMMANDS: [&str; 7] = ["simulate", "fit", "lrt", "predict", "classify", "diagnose", "ghq-em-grid"];

/// Flags set on the command line win over the `[command]` table of the file.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>, command: &str) -> Result<T, CliError> {
    let mut merged = Map::new();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let doc: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for key in doc.keys() {
            if !COMMANDS.contains(&key.as_str()) {
                return Err(CliError::Config(format!("unknown config section [{key}]")));
            }
        }
        if let Some(section) = doc.get(command) {
            let v = serde_json::to_value(section).map_err(|e| CliError::Config(e.to_string()))?;
            match v {
                Value::Object(m) => merged = m,
                _ => return Err(CliError::Config(format!("[{command}] must be a table"))),
            }
        }
    }
    let flag_values = serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))?;
    if let Value::Object(m) = flag_values {
        for (k, v) in m {
            let unset = v.is_null() || v.as_array().is_some_and(|a| a.is_empty());
            if !unset {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("[{command}]: {e}")))
}

pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
pub struct Manifest<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub config: &'a T,
    pub outputs: Vec<String>,
}

pub fn manifest<'a, T: Serialize>(command: &'a str, cfg: &'a T, seed: Option<u64>, outputs: &[&Path]) -> Manifest<'a, T> {
    Manifest {
        tool: "msfrail",
        version: VERSION,
        command,
        config_hash: config_hash(cfg),
        seed,
        config: cfg,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

pub fn require<T: Clone>(v: &Option<T>, name: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("--{name} is required")))
}

pub fn comma_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|_| CliError::Config(format!("bad {what} '{x}'"))))
        .collect()
}
