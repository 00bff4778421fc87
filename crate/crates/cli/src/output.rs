use std::fs;
use std::path::{Path, PathBuf};

use leaklab::{Error, ExperimentConfig};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

/// A failed run: exit code plus a machine-readable description.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            kind: "config",
            message: message.into(),
        }
    }

    pub fn acceptance(message: impl Into<String>) -> Self {
        Failure {
            code: 4,
            kind: "acceptance",
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self.kind, "exit_code": self.code, "message": self.message }).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure {
                code: 3,
                kind: "numerical",
                message: e.to_string(),
            }
        } else {
            Failure::config(e.to_string())
        }
    }
}

pub fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 2,
        kind: "io",
        message: format!("{}: {e}", path.display()),
    }
}

pub fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

pub fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
    text.push('\n');
    write(path, &text)
}

/// `out` if given, else `<output_dir>/<default_name>`.
pub fn out_path(config: &ExperimentConfig, out: Option<PathBuf>, default_name: &str) -> PathBuf {
    out.unwrap_or_else(|| Path::new(&config.output_dir).join(default_name))
}

/// `samples.csv` -> `samples.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(config.to_json().as_bytes()))
}

/// Writes `<out>.manifest.json` next to the primary output.
pub fn write_manifest(
    out: &Path,
    experiment: &str,
    config: &ExperimentConfig,
    extra: serde_json::Value,
    outputs: &[&Path],
) -> Result<(), Failure> {
    let manifest = json!({
        "experiment": experiment,
        "config_hash": config_hash(config),
        "seed": config.seed,
        "version": concat!("v", env!("CARGO_PKG_VERSION")),
        "config": config,
        "parameters": extra,
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    write_json(&sibling(out, "manifest.json"), &manifest)
}
