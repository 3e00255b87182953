//! Result persistence: `results.csv`, `results.jsonl` and `log.jsonl`.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{io_err, HarnessError, Result};
use crate::protocol::ProtocolReport;

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSONL: &str = "results.jsonl";
pub const LOG_JSONL: &str = "log.jsonl";

/// One line of `results.csv`; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub protocol: String,
    pub variant: String,
    pub seed: u64,
    /// `held-out`, `source`, `average` or `eval`.
    pub role: String,
    /// Domain id, or `all` for averages.
    pub domain: String,
    pub auc: f64,
    pub acc: f64,
    pub f1: f64,
    pub n_test: usize,
    pub timestamp: u64,
    pub config: String,
}

impl ResultRow {
    /// Every field except the timestamp.
    pub fn values(&self) -> (String, String, String, u64, String, String, [u64; 3], usize, String) {
        (
            self.run_id.clone(),
            self.protocol.clone(),
            self.variant.clone(),
            self.seed,
            self.role.clone(),
            self.domain.clone(),
            [self.auc.to_bits(), self.acc.to_bits(), self.f1.to_bits()],
            self.n_test,
            self.config.clone(),
        )
    }
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// `key=value` pairs joined by `;`.
pub fn config_echo(cfg: &ExperimentConfig) -> String {
    cfg.entries()
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Per-fold rows, then one average row per seed.
pub fn rows(report: &ProtocolReport) -> Vec<ResultRow> {
    let ts = now();
    let mut out = Vec::new();
    for seed in report.seeds() {
        let cfg = ExperimentConfig {
            seed,
            ..report.config.clone()
        };
        let make = |role: &str, domain: String, m: crate::metrics::Metrics| ResultRow {
            run_id: cfg.run_id(),
            protocol: cfg.protocol.as_str().into(),
            variant: cfg.variant_name(),
            seed,
            role: role.into(),
            domain,
            auc: m.auc,
            acc: m.acc,
            f1: m.f1,
            n_test: m.n,
            timestamp: ts,
            config: config_echo(&cfg),
        };
        for f in report.folds.iter().filter(|f| f.seed == seed) {
            out.push(make(report.role(), f.domain.to_string(), f.metrics));
        }
        out.push(make("average", "all".into(), report.seed_average(seed)));
    }
    out
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()
        .map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
    }
}

pub fn append_lines(path: &Path, lines: &[serde_json::Value]) -> Result<()> {
    let mut file: File = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    for l in lines {
        writeln!(file, "{l}").map_err(io_err(path))?;
    }
    Ok(())
}

/// One object per (domain, seed).
pub fn jsonl_records(report: &ProtocolReport) -> Vec<serde_json::Value> {
    report
        .folds
        .iter()
        .map(|f| {
            let cfg = ExperimentConfig {
                seed: f.seed,
                ..report.config.clone()
            };
            json!({
                "run_id": cfg.run_id(),
                "protocol": cfg.protocol.as_str(),
                "variant": cfg.variant_name(),
                "seed": f.seed,
                "role": report.role(),
                "domain": f.domain,
                "auc": f.metrics.auc,
                "acc": f.metrics.acc,
                "f1": f.metrics.f1,
                "n_test": f.metrics.n,
                "config": cfg.to_json(),
            })
        })
        .collect()
}

/// One object per training epoch, tagged with its fold and checkpoint.
pub fn log_records(report: &ProtocolReport) -> Vec<serde_json::Value> {
    let mut out = Vec::new();
    for f in &report.folds {
        let cfg = ExperimentConfig {
            seed: f.seed,
            ..report.config.clone()
        };
        for e in &f.log {
            let mut v = serde_json::to_value(e).expect("plain struct");
            let obj = v.as_object_mut().expect("struct serializes to an object");
            obj.insert("run_id".into(), json!(cfg.run_id()));
            obj.insert("domain".into(), json!(f.domain));
            obj.insert("seed".into(), json!(f.seed));
            obj.insert(
                "checkpoint".into(),
                json!(f.checkpoint.as_ref().map(|p| p.display().to_string())),
            );
            out.push(v);
        }
    }
    out
}

/// Appends all three files under `dir`.
pub fn write_all(dir: &Path, report: &ProtocolReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    append_csv(&dir.join(RESULTS_CSV), &rows(report))?;
    append_lines(&dir.join(RESULTS_JSONL), &jsonl_records(report))?;
    append_lines(&dir.join(LOG_JSONL), &log_records(report))
}

/// Human-readable summary of `results.csv`: protocol averages and single
/// evaluations, grouped by protocol, variant and role and averaged across seeds.
pub fn summarize(rows: &[ResultRow]) -> String {
    let mut groups: Vec<((String, String, String), Vec<&ResultRow>)> = Vec::new();
    for r in rows.iter().filter(|r| r.role == "average" || r.role == "eval") {
        let key = (r.protocol.clone(), r.variant.clone(), r.role.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut out = format!(
        "{:<6} {:<14} {:<8} {:>5} {:>7} {:>7} {:>7}\n",
        "proto", "variant", "role", "rows", "auc", "acc", "f1"
    );
    for ((p, v, role), rs) in groups {
        let n = rs.len() as f64;
        let mean = |f: fn(&ResultRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
        out.push_str(&format!(
            "{:<6} {:<14} {:<8} {:>5} {:>7.2} {:>7.2} {:>7.2}\n",
            p,
            v,
            role,
            rs.len(),
            mean(|r| r.auc),
            mean(|r| r.acc),
            mean(|r| r.f1)
        ));
    }
    out
}
