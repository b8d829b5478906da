use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::memorization::MemorizationReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// Model or sweep-point id, e.g. `model_A`, `fused`, `point-3`.
    pub id: String,
    pub metric: String,
    pub dataset: String,
    pub value: f64,
    pub seed: u64,
    /// Barycentric fusion coordinates, for fused models and sweep points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<Vec<f64>>,
}

/// A seed that failed, with the stage that failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical JSON encoding of `config`.
    pub config_hash: String,
    pub code_version: String,
    pub config: ExperimentConfig,
}

impl Provenance {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            config_hash: config_hash(config),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
        }
    }
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("configs serialize");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub errors: Vec<ErrorRow>,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
    Plotseries,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "plotseries" => Ok(Format::Plotseries),
            _ => Err(Error::InvalidConfig(format!("unknown format `{s}`"))),
        }
    }
}

/// One line of a plot: `y = metric(dataset)` against the sweep coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub metric: String,
    pub dataset: String,
    pub seed: u64,
    /// `(x, y)` with `x` the weight of the second endpoint, ascending.
    pub points: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    id: String,
    metric: String,
    dataset: String,
    value: f64,
    seed: u64,
    coordinates: String,
}

impl ResultTable {
    pub fn is_complete(&self) -> bool {
        self.errors.is_empty()
    }

    /// Rows matching `(id, metric, dataset, seed)`.
    pub fn value(&self, id: &str, metric: &str, dataset: &str, seed: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.id == id && r.metric == metric && r.dataset == dataset && r.seed == seed)
            .map(|r| r.value)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        s.dedup();
        s
    }

    /// Pair-sweep rows grouped per (metric, dataset, seed).
    pub fn plot_series(&self) -> Vec<Series> {
        let mut groups: BTreeMap<(String, String, u64), Vec<(f64, f64)>> = BTreeMap::new();
        for r in &self.rows {
            if let Some(c) = &r.coordinates {
                if c.len() == 2 && r.id.starts_with("point-") {
                    groups
                        .entry((r.metric.clone(), r.dataset.clone(), r.seed))
                        .or_default()
                        .push((c[1], r.value));
                }
            }
        }
        groups
            .into_iter()
            .map(|((metric, dataset, seed), mut points)| {
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series {
                    metric,
                    dataset,
                    seed,
                    points,
                }
            })
            .collect()
    }

    /// Memorization tables per seed: one report per model with its ALR on
    /// every dataset and its validation perplexity.
    pub fn memorization_reports(&self) -> BTreeMap<u64, Vec<MemorizationReport>> {
        let mut out: BTreeMap<u64, Vec<MemorizationReport>> = BTreeMap::new();
        for r in &self.rows {
            if r.metric != "alr" && r.metric != "ppl" {
                continue;
            }
            let reports = out.entry(r.seed).or_default();
            let idx = match reports.iter().position(|m| m.model_id == r.id) {
                Some(i) => i,
                None => {
                    reports.push(MemorizationReport {
                        model_id: r.id.clone(),
                        alr: BTreeMap::new(),
                        ppl_val: f64::NAN,
                    });
                    reports.len() - 1
                }
            };
            if r.metric == "alr" {
                reports[idx].alr.insert(r.dataset.clone(), r.value);
            } else {
                reports[idx].ppl_val = r.value;
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            let coordinates = r
                .coordinates
                .as_ref()
                .map(|c| c.iter().map(f64::to_string).collect::<Vec<_>>().join(";"))
                .unwrap_or_default();
            w.serialize(CsvRow {
                id: r.id.clone(),
                metric: r.metric.clone(),
                dataset: r.dataset.clone(),
                value: r.value,
                seed: r.seed,
                coordinates,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rows of a CSV written by [`ResultTable::write_csv`].
    pub fn read_csv_rows(path: &Path) -> Result<Vec<ResultRow>> {
        let mut rows = Vec::new();
        for rec in csv::Reader::from_path(path)?.deserialize() {
            let r: CsvRow = rec?;
            let coordinates = if r.coordinates.is_empty() {
                None
            } else {
                Some(
                    r.coordinates
                        .split(';')
                        .map(|c| c.parse::<f64>().map_err(|e| Error::Container(e.to_string())))
                        .collect::<Result<Vec<_>>>()?,
                )
            };
            rows.push(ResultRow {
                id: r.id,
                metric: r.metric,
                dataset: r.dataset,
                value: r.value,
                seed: r.seed,
                coordinates,
            });
        }
        Ok(rows)
    }
}

/// Writes `table` into `dir` in the requested format and returns the files
/// written: `results.csv`, `results.json`, or `series.json`. Memorization
/// tables additionally get `memorization.json`.
pub fn emit(table: &ResultTable, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    if table.rows.is_empty() {
        return Err(Error::Empty("result table".into()));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        Format::Csv => {
            let p = dir.join("results.csv");
            table.write_csv(&p)?;
            written.push(p);
        }
        Format::Json => {
            let p = dir.join("results.json");
            fs::write(&p, table.to_json()?)?;
            written.push(p);
        }
        Format::Plotseries => {
            let p = dir.join("series.json");
            fs::write(&p, serde_json::to_string_pretty(&table.plot_series())?)?;
            written.push(p);
        }
    }
    let mem = table.memorization_reports();
    if !mem.is_empty() {
        let p = dir.join("memorization.json");
        fs::write(&p, serde_json::to_string_pretty(&mem)?)?;
        written.push(p);
    }
    Ok(written)
}
