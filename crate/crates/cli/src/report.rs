//! The selection document written by `viewsieve select`.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use viewsieve::selector::SelectionParams;
use viewsieve::{Error, SelectionConfig, SelectionResult, Strategy};

/// Bumped whenever a field is renamed, removed or changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command_line: Vec<String>,
    /// Every knob the run used, defaults included.
    pub config: SelectionConfig,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    /// Wall-clock time. The only field that varies between identical runs.
    pub duration_seconds: f64,
}

/// Field order here is the key order on disk.
#[derive(Debug, Serialize)]
pub struct SelectionDocument {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub seed: u64,
    pub k: usize,
    pub params: SelectionParams,
    pub indices: Vec<usize>,
    pub order: Vec<usize>,
    pub gains: Vec<f64>,
    pub total_utility: Option<f64>,
    pub manifest: Manifest,
}

impl SelectionDocument {
    pub fn new(result: SelectionResult, manifest: Manifest) -> Self {
        let total_utility = result.total_utility();
        SelectionDocument {
            schema_version: SCHEMA_VERSION,
            strategy: result.strategy,
            seed: result.seed,
            k: result.k,
            params: result.params,
            indices: result.indices,
            order: result.order,
            gains: result.gains,
            total_utility,
            manifest,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s =
            serde_json::to_string_pretty(self).expect("selection documents always serialize");
        s.push('\n');
        s
    }
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
