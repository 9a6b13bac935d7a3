//! Run records, aggregate reports and method comparison tables.
//!
//! `runs.csv` columns, in order: `config_hash, dataset_hash, method, seed,
//! status, diagnostic, checkpoint` followed by the seven
//! [`METRIC_COLUMNS`]. Failed runs leave the metric cells empty.

use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::csv_err;

pub const SCHEMA_VERSION: u32 = 1;

pub const METRIC_COLUMNS: [&str; 7] = [
    "id_accuracy",
    "ood_accuracy",
    "id_ece",
    "ood_ece",
    "ood_auroc",
    "id_gep_mae",
    "ood_gep_mae",
];

/// Whether a larger value is better, per [`METRIC_COLUMNS`] entry.
const HIGHER_IS_BETTER: [bool; 7] = [true, true, false, false, true, false, false];

const RUN_COLUMNS: [&str; 7] = [
    "config_hash",
    "dataset_hash",
    "method",
    "seed",
    "status",
    "diagnostic",
    "checkpoint",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub id_accuracy: f64,
    pub ood_accuracy: f64,
    pub id_ece: f64,
    pub ood_ece: f64,
    pub ood_auroc: f64,
    pub id_gep_mae: f64,
    pub ood_gep_mae: f64,
}

impl MetricsReport {
    pub fn values(&self) -> [f64; 7] {
        [
            self.id_accuracy,
            self.ood_accuracy,
            self.id_ece,
            self.ood_ece,
            self.ood_auroc,
            self.id_gep_mae,
            self.ood_gep_mae,
        ]
    }

    pub fn from_values(v: [f64; 7]) -> Self {
        Self {
            id_accuracy: v[0],
            ood_accuracy: v[1],
            id_ece: v[2],
            ood_ece: v[3],
            ood_auroc: v[4],
            id_gep_mae: v[5],
            ood_gep_mae: v[6],
        }
    }

    /// All metrics are finite and inside `[0, 1]`.
    pub fn check(&self) -> Result<()> {
        for (name, v) in METRIC_COLUMNS.iter().zip(self.values()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub dataset_hash: String,
    pub method: String,
    pub seed: u64,
    pub status: RunStatus,
    pub diagnostic: String,
    /// Relative to the report directory.
    pub checkpoint: String,
    pub metrics: Option<MetricsReport>,
}

pub fn format_runs_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(RUN_COLUMNS.iter().chain(&METRIC_COLUMNS)).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.config_hash.clone(),
            r.dataset_hash.clone(),
            r.method.clone(),
            r.seed.to_string(),
            match r.status {
                RunStatus::Ok => "ok".into(),
                RunStatus::Failed => "failed".into(),
            },
            r.diagnostic.clone(),
            r.checkpoint.clone(),
        ];
        match &r.metrics {
            Some(m) => row.extend(m.values().iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), METRIC_COLUMNS.len())),
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn parse_runs_csv<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let expected: Vec<&str> = RUN_COLUMNS.iter().chain(&METRIC_COLUMNS).copied().collect();
    if header != expected {
        return Err(Error::Schema(format!("unexpected runs CSV header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::Parse { line, msg };
        let status = match &row[4] {
            "ok" => RunStatus::Ok,
            "failed" => RunStatus::Failed,
            other => return Err(bad(format!("unknown status `{other}`"))),
        };
        let metrics = if row.iter().skip(RUN_COLUMNS.len()).all(str::is_empty) {
            None
        } else {
            let mut v = [0.0; 7];
            for (j, slot) in v.iter_mut().enumerate() {
                let cell = &row[RUN_COLUMNS.len() + j];
                *slot = cell
                    .parse()
                    .map_err(|_| bad(format!("{}: cannot parse `{cell}`", METRIC_COLUMNS[j])))?;
            }
            Some(MetricsReport::from_values(v))
        };
        out.push(RunRecord {
            config_hash: row[0].to_string(),
            dataset_hash: row[1].to_string(),
            method: row[2].to_string(),
            seed: row[3].parse().map_err(|_| bad(format!("bad seed `{}`", &row[3])))?,
            status,
            diagnostic: row[5].to_string(),
            checkpoint: row[6].to_string(),
            metrics,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

pub fn mean_std(xs: &[f64]) -> MeanStd {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub id_accuracy: MeanStd,
    pub ood_accuracy: MeanStd,
    pub id_ece: MeanStd,
    pub ood_ece: MeanStd,
    pub ood_auroc: MeanStd,
    pub id_gep_mae: MeanStd,
    pub ood_gep_mae: MeanStd,
}

impl AggregateMetrics {
    pub fn values(&self) -> [MeanStd; 7] {
        [
            self.id_accuracy,
            self.ood_accuracy,
            self.id_ece,
            self.ood_ece,
            self.ood_auroc,
            self.id_gep_mae,
            self.ood_gep_mae,
        ]
    }
}

/// Aggregate over the successful runs of one method on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateGroup {
    pub method: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub runs: usize,
    pub failed: usize,
    /// `None` when every run failed.
    pub metrics: Option<AggregateMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: u32,
    pub groups: Vec<AggregateGroup>,
}

/// Groups records by `(method, config_hash)` in first-seen order.
pub fn aggregate(records: &[RunRecord]) -> AggregateReport {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in records {
        let key = (r.method.clone(), r.config_hash.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let groups = keys
        .into_iter()
        .map(|(method, config_hash)| {
            let members: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.method == method && r.config_hash == config_hash)
                .collect();
            let ok: Vec<[f64; 7]> = members.iter().filter_map(|r| r.metrics.map(|m| m.values())).collect();
            let metrics = (!ok.is_empty()).then(|| {
                let col = |j: usize| mean_std(&ok.iter().map(|v| v[j]).collect::<Vec<_>>());
                AggregateMetrics {
                    id_accuracy: col(0),
                    ood_accuracy: col(1),
                    id_ece: col(2),
                    ood_ece: col(3),
                    ood_auroc: col(4),
                    id_gep_mae: col(5),
                    ood_gep_mae: col(6),
                }
            });
            AggregateGroup {
                method,
                config_hash,
                dataset_hash: members[0].dataset_hash.clone(),
                runs: members.len(),
                failed: members.iter().filter(|r| r.status == RunStatus::Failed).count(),
                metrics,
            }
        })
        .collect();
    AggregateReport {
        schema_version: SCHEMA_VERSION,
        groups,
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `runs.csv` and `aggregate.json` into `dir`. Both files are staged
/// before either is moved into place, so an unwritable directory fails
/// before anything is replaced.
pub fn emit_report(records: &[RunRecord], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv = format_runs_csv(records)?;
    let json = serde_json::to_string_pretty(&aggregate(records))? + "\n";
    let staged = [(dir.join("runs.csv"), csv), (dir.join("aggregate.json"), json.into_bytes())];
    for (path, bytes) in &staged {
        std::fs::write(tmp_path(path), bytes)?;
    }
    for (path, _) in &staged {
        std::fs::rename(tmp_path(path), path)?;
    }
    Ok(())
}

pub fn load_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    parse_runs_csv(std::fs::File::open(dir.join("runs.csv"))?)
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub runs: usize,
    pub values: [MeanStd; 7],
    pub best: [bool; 7],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub dataset_hash: String,
    pub rows: Vec<ComparisonRow>,
}

/// Rows are methods, columns the [`METRIC_COLUMNS`] means. The best value
/// per column is flagged (ties all flagged) when there are two or more rows.
pub fn compare_methods(groups: &[AggregateGroup]) -> Result<ComparisonTable> {
    let usable: Vec<&AggregateGroup> = groups.iter().filter(|g| g.metrics.is_some()).collect();
    let first = usable
        .first()
        .ok_or_else(|| Error::Contract("no successful runs to compare".into()))?;
    if let Some(g) = usable.iter().find(|g| g.dataset_hash != first.dataset_hash) {
        return Err(Error::Contract(format!(
            "refusing to compare `{}` and `{}`: dataset hashes differ ({} vs {})",
            first.method, g.method, first.dataset_hash, g.dataset_hash
        )));
    }
    let mut rows: Vec<ComparisonRow> = usable
        .iter()
        .map(|g| ComparisonRow {
            method: g.method.clone(),
            runs: g.runs - g.failed,
            values: g.metrics.as_ref().expect("filtered").values(),
            best: [false; 7],
        })
        .collect();
    if rows.len() >= 2 {
        for j in 0..METRIC_COLUMNS.len() {
            let key = |r: &ComparisonRow| {
                let v = r.values[j].mean;
                if HIGHER_IS_BETTER[j] {
                    v
                } else {
                    -v
                }
            };
            let best = rows.iter().map(key).fold(f64::NEG_INFINITY, f64::max);
            for r in &mut rows {
                r.best[j] = key(r) == best;
            }
        }
    }
    Ok(ComparisonTable {
        dataset_hash: first.dataset_hash.clone(),
        rows,
    })
}

impl ComparisonTable {
    /// Columns: `method, runs`, then `<metric>_mean, <metric>_std,
    /// <metric>_best` per metric.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let mut header = vec!["method".to_string(), "runs".to_string()];
        for m in METRIC_COLUMNS {
            header.extend([format!("{m}_mean"), format!("{m}_std"), format!("{m}_best")]);
        }
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut row = vec![r.method.clone(), r.runs.to_string()];
            for (v, b) in r.values.iter().zip(r.best) {
                row.extend([v.mean.to_string(), v.std.to_string(), b.to_string()]);
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Aligned plain text; best cells carry a trailing `*`.
    pub fn to_text(&self) -> String {
        let mut cells: Vec<Vec<String>> = vec![std::iter::once("method".to_string())
            .chain(METRIC_COLUMNS.iter().map(|s| s.to_string()))
            .collect()];
        for r in &self.rows {
            let mut row = vec![r.method.clone()];
            for (v, b) in r.values.iter().zip(r.best) {
                row.push(format!("{:.4} ± {:.4}{}", v.mean, v.std, if b { "*" } else { "" }));
            }
            cells.push(row);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|j| cells.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, &w))| {
                    let pad = w - c.chars().count();
                    if j == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}
