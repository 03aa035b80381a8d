//! Sidecar formats shared by the subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use inkwell_core::fd::DetectionStatistic;
use inkwell_core::model::FaultVariant;

/// Per-row detection outcome stored next to a residual CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub label: FaultVariant,
    pub value: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMeta {
    pub statistic: DetectionStatistic,
    pub mu: f64,
    pub threshold: f64,
    pub rows: Vec<ResidualRow>,
}

/// Template sidecar: the grid the template columns live on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateMeta {
    pub class_order: Vec<FaultVariant>,
    pub t_a: f64,
    pub dt: f64,
    pub n: usize,
}

/// `<path>.meta.json` next to a data file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// `<stem>.config.json` next to a dataset CSV.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_os_string();
    let mut name = stem;
    name.push(".config.json");
    path.with_file_name(name)
}

pub fn write_json_pretty<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
