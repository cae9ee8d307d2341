//! Run configuration: built-in defaults, then a TOML file, then `--set`
//! overrides, in that order.

use crate::error::{Failure, Result};
use evcal::event_flow::{CameraIntrinsics, FlowConfig};
use evcal::motion::SensorKind;
use evcal::refine::{RefineConfig, Stage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventInput {
    pub id: String,
    /// raw event file (text or binary)
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<PathBuf>,
    /// precomputed angular-velocity track, instead of `events`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rates: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
}

impl Default for EventInput {
    fn default() -> Self {
        Self { id: "event".into(), events: None, rates: None, intrinsics: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorInput {
    /// defaults to the id in the file header
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub kind: SensorKind,
    pub path: PathBuf,
    /// stored rotations are `R_ci_cj`
    #[serde(default)]
    pub invert_relative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub stage: Stage,
    /// plain unweighted squares, no robust loss
    pub paper_faithful: bool,
    pub event: EventInput,
    pub sensors: Vec<SensorInput>,
    pub flow: FlowConfig,
    pub refine: RefineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("calib"),
            stage: Stage::Full,
            paper_faithful: false,
            event: EventInput::default(),
            sensors: Vec::new(),
            flow: FlowConfig::default(),
            refine: RefineConfig::default(),
        }
    }
}

impl RunConfig {
    /// Make every input path absolute relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.event.events.as_mut().map(fix);
        self.event.rates.as_mut().map(fix);
        for s in &mut self.sensors {
            fix(&mut s.path);
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Apply `a.b.c=value`; intermediate tables are created as needed.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::parse(format!("override '{assignment}' is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::parse(format!("override key '{key}' is malformed")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Failure::parse(format!("override '{key}': '{part}' is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Defaults from `T::default()`, overlaid with `file` and then `sets`.
pub fn layered<T: Serialize + DeserializeOwned + Default>(file: Option<&Path>, sets: &[String]) -> Result<T> {
    let mut root = toml::Table::try_from(T::default()).map_err(|e| Failure::io(format!("default config: {e}")))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::precondition(format!("config {}: {e}", path.display())))?;
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Failure::parse(format!("config {}: {}", path.display(), e.message())))?;
        merge(&mut root, table);
    }
    for s in sets {
        apply_override(&mut root, s)?;
    }
    T::deserialize(toml::Value::Table(root)).map_err(|e| Failure::parse(format!("config: {}", e.message())))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Failure::io(format!("config serialization: {e}")))
}
