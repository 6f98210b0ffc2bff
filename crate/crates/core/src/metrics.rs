//! Per-round records and their CSV / JSON output.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Evaluation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRoundMetrics {
    pub id: usize,
    pub participated: bool,
    pub alpha: f64,
    pub beta: f64,
    pub f: f64,
    pub gain: f64,
    pub interior: bool,
    pub rate_bps: f64,
    pub latency_s: f64,
    pub energy_j: f64,
    pub latency_budget_s: f64,
    pub energy_budget_j: f64,
    pub uplink_bytes: u64,
}

impl DeviceRoundMetrics {
    /// Cost exceeds either budget by more than `tol` (absolute).
    pub fn violates_budget(&self, tol: f64) -> bool {
        self.participated
            && (self.latency_s > self.latency_budget_s + tol || self.energy_j > self.energy_budget_j + tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// shard-size weighted training loss of the updated model
    pub loss: f64,
    /// test accuracy of the updated model
    pub accuracy: f64,
    pub latency_max_s: f64,
    pub energy_total_j: f64,
    pub uplink_bytes: u64,
    pub gain_g: f64,
    pub skipped: usize,
    pub warning: Option<String>,
    pub devices: Vec<DeviceRoundMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub initial: Evaluation,
    pub rounds: Vec<RoundMetrics>,
}

impl ExperimentReport {
    /// Smallest per-round global gain.
    pub fn g_min(&self) -> f64 {
        self.rounds.iter().map(|r| r.gain_g).fold(f64::INFINITY, f64::min)
    }

    pub fn final_round(&self) -> Option<&RoundMetrics> {
        self.rounds.last()
    }
}

/// Flat row with a fixed column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub latency_max_s: f64,
    pub energy_total_j: f64,
    pub uplink_bytes: u64,
    pub gain_g: f64,
    pub skipped: usize,
}

impl From<&RoundMetrics> for MetricsRow {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            round: m.round,
            loss: m.loss,
            accuracy: m.accuracy,
            latency_max_s: m.latency_max_s,
            energy_total_j: m.energy_total_j,
            uplink_bytes: m.uplink_bytes,
            gain_g: m.gain_g,
            skipped: m.skipped,
        }
    }
}

pub const CSV_HEADER: &str = "round,loss,accuracy,latency_max_s,energy_total_j,uplink_bytes,gain_g,skipped";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

pub fn write_metrics<W: Write>(rows: &[MetricsRow], format: Format, out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no metrics rows".into()));
    }
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
            }
            w.flush()?;
        }
        Format::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, rows)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn emit_metrics(rows: &[MetricsRow], format: Format, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_metrics(rows, format, file)
}

pub fn metrics_to_string(rows: &[MetricsRow], format: Format) -> Result<String> {
    let mut buf = Vec::new();
    write_metrics(rows, format, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv and json output are utf-8"))
}
