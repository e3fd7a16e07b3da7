//! Index files written next to the outputs: `manifest.toml` lists the
//! simulated stacks, `maps.toml` the reconstructed maps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.toml";
pub const MAP_INDEX: &str = "maps.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub n_frames: usize,
    pub allocation: String,
    pub width: usize,
    pub height: usize,
    pub psf_sigma: f64,
    pub stacks: Vec<StackEntry>,
}

/// One illumination pattern and where its frames live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackEntry {
    pub file: String,
    pub stream: u64,
    pub uniform: bool,
    pub theta: f64,
    pub phi: f64,
    pub p_mag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapIndex {
    pub j_max: usize,
    pub psf_sigma: f64,
    pub entries: Vec<MapEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapEntry {
    pub stem: String,
    pub uniform: bool,
    pub theta: f64,
    pub phi: f64,
    pub p_mag: f64,
    pub cumulants: String,
    /// Method name to QMAP file holding orders `1..=j_max` as planes.
    pub maps: BTreeMap<String, String>,
}

pub fn read<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::data(format!("{}: {}", path.display(), e.message())))
}

pub fn write<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = toml::to_string(value).expect("index types always serialize");
    std::fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
