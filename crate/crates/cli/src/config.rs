//! Merging of command-line flags over a JSON config file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use spectra::spectral::Tolerances;
use spectra::{Error, Result};

use crate::args::Global;

pub const THREADS_ENV: &str = "SPECTRA_THREADS";

pub fn load_file(path: Option<&Path>) -> Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match serde_json::from_slice::<Value>(&bytes)? {
        Value::Object(m) => Ok(m),
        _ => Err(Error::validation(format!("{} must hold a JSON object", path.display()))),
    }
}

/// Overlay the set fields of `flags` on the file values. Keys the target type
/// does not know are ignored, so one file can serve several commands.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: &Map<String, Value>) -> Result<T> {
    let mut merged = file.clone();
    if let Value::Object(set) = serde_json::to_value(flags)? {
        for (k, v) in set {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| Error::validation(format!("invalid configuration: {e}")))
}

/// Fully resolved global options.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub seed: u64,
    pub tolerances: Tolerances,
    pub threads: usize,
    pub output: PathBuf,
}

impl Resolved {
    pub fn new(g: &Global, default_tolerances: Tolerances, default_output: &Path) -> Result<Self> {
        let threads = match g.threads {
            Some(t) => t,
            None => match std::env::var(THREADS_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| Error::validation(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
                Err(_) => 1,
            },
        };
        if threads == 0 {
            return Err(Error::validation("threads must be at least 1"));
        }
        let tolerances = Tolerances {
            group: g.tol_group.unwrap_or(default_tolerances.group),
            zero: g.tol_zero.unwrap_or(default_tolerances.zero),
        };
        tolerances.validate()?;
        Ok(Resolved {
            seed: g.seed.unwrap_or(0),
            tolerances,
            threads,
            output: g.output.clone().unwrap_or_else(|| default_output.to_path_buf()),
        })
    }
}
