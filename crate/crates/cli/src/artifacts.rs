//! Files the commands write: forecast tables, manifests and the failure marker.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Serialize;
use sha2::{Digest, Sha256};
use topdown_core::hierarchy::HierarchyTree;
use topdown_core::inference::QuantileForecast;

use crate::CliError;

pub const FAILED_MARKER: &str = "_FAILED";
pub const CHECKPOINT: &str = "model.json";
pub const FORECAST: &str = "forecast.csv";
pub const BASELINE: &str = "baseline.csv";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// One method's quantiles plus the dates of its forecast steps.
#[derive(Debug, Clone)]
pub struct MethodForecast {
    pub method: String,
    pub dates: Vec<NaiveDate>,
    pub quantiles: QuantileForecast,
}

/// `method,series,step,timestamp,quantile,value` rows.
pub fn write_forecasts(path: &Path, tree: &HierarchyTree, forecasts: &[MethodForecast]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let mut write = || -> csv::Result<()> {
        w.write_record(["method", "series", "step", "timestamp", "quantile", "value"])?;
        for f in forecasts {
            let grid = f.quantiles.q_grid();
            for node in 0..tree.len() {
                for (s, date) in f.dates.iter().enumerate() {
                    for (q, v) in grid.iter().zip(f.quantiles.curve(node, s)) {
                        w.write_record([
                            f.method.as_str(),
                            tree.name(node),
                            &(s + 1).to_string(),
                            &date.format("%Y-%m-%d").to_string(),
                            &q.to_string(),
                            &v.to_string(),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| CliError::csv(path, e))
}

#[derive(Default)]
struct Building {
    grid: Vec<f64>,
    dates: BTreeMap<usize, NaiveDate>,
    cells: BTreeMap<(usize, usize, usize), f64>,
}

/// Reads a table written by [`write_forecasts`] back into one forecast per
/// method, in order of first appearance.
pub fn read_forecasts(path: &Path, tree: &HierarchyTree) -> Result<Vec<MethodForecast>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut by_method: BTreeMap<String, Building> = BTreeMap::new();
    let bad = |line: usize, what: &str| CliError::new("data", format!("{}: row {line}: {what}", path.display()));
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        if rec.len() != 6 {
            return Err(bad(line, "expected 6 fields"));
        }
        let method = rec[0].to_string();
        let node = tree.id_of(&rec[1]).ok_or_else(|| bad(line, "unknown series"))?;
        let step: usize = rec[2].parse().map_err(|_| bad(line, "bad step"))?;
        if step == 0 {
            return Err(bad(line, "steps are numbered from 1"));
        }
        let date = topdown_core::data_io::parse_timestamp(&rec[3]).map_err(|_| bad(line, "bad timestamp"))?;
        let q: f64 = rec[4].parse().map_err(|_| bad(line, "bad quantile level"))?;
        let v: f64 = rec[5].parse().map_err(|_| bad(line, "bad value"))?;
        if !by_method.contains_key(&method) {
            order.push(method.clone());
        }
        let b = by_method.entry(method).or_default();
        let qi = match b.grid.iter().position(|&g| g == q) {
            Some(k) => k,
            None => {
                b.grid.push(q);
                b.grid.len() - 1
            }
        };
        if *b.dates.entry(step - 1).or_insert(date) != date {
            return Err(bad(line, "step has two different timestamps"));
        }
        if b.cells.insert((node, step - 1, qi), v).is_some() {
            return Err(bad(line, "duplicate cell"));
        }
    }
    if order.is_empty() {
        return Err(CliError::new("data", format!("{} holds no forecasts", path.display())));
    }
    order
        .into_iter()
        .map(|method| {
            let b = by_method.remove(&method).expect("recorded");
            let horizon = b.dates.len();
            if b.dates.keys().copied().ne(0..horizon) {
                return Err(CliError::new(
                    "data",
                    format!("{method}: forecast steps are not contiguous"),
                ));
            }
            let mut sorted: Vec<(usize, f64)> = b.grid.iter().copied().enumerate().collect();
            sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
            let mut values = Vec::with_capacity(tree.len() * horizon * sorted.len());
            for node in 0..tree.len() {
                for s in 0..horizon {
                    for &(qi, _) in &sorted {
                        let v = b.cells.get(&(node, s, qi)).ok_or_else(|| {
                            CliError::new(
                                "data",
                                format!("{method}: missing cell for {} step {}", tree.name(node), s + 1),
                            )
                        })?;
                        values.push(*v);
                    }
                }
            }
            let grid = sorted.into_iter().map(|(_, q)| q).collect();
            Ok(MethodForecast {
                quantiles: QuantileForecast::new(grid, tree.len(), horizon, values)?,
                dates: b.dates.into_values().collect(),
                method,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct ArtifactEntry {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: String,
    config_sha256: String,
    seed: u64,
    created_at: String,
    artifacts: Vec<ArtifactEntry>,
}

/// Writes `<command>.manifest.json` listing `artifacts` (relative to `out`)
/// with their digests.
pub fn write_manifest(
    out: &Path,
    command: &str,
    config_path: &Path,
    config_bytes: &[u8],
    seed: u64,
    artifacts: &[PathBuf],
) -> Result<(), CliError> {
    let entries = artifacts
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
            Ok(ArtifactEntry {
                path: p.strip_prefix(out).unwrap_or(p).display().to_string(),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: config_path.display().to_string(),
        config_sha256: sha256_hex(config_bytes),
        seed,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        artifacts: entries,
    };
    write_json(&out.join(format!("{command}.manifest.json")), &manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("json", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
