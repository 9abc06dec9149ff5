//! Report structures and writers (JSON, CSV, TSV, plain table).

use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use qosa::bench::{DimensionReport, MetricsReport};
use qosa::cond_dist::Alpha;
use qosa::qosa::{EstimateOptions, InputTuning, QosaEstimate};
use qosa::tuning::TuningReport;
use qosa::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
    Tsv,
}

/// The `estimate` report file; JSON output re-parses into this.
#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateFileReport {
    pub source: String,
    pub options: EstimateOptions,
    pub estimates: Vec<QosaEstimate>,
    pub tuning: Vec<InputTuning>,
}

#[derive(Debug, Serialize)]
pub struct OracleRecord {
    pub model: String,
    pub input: usize,
    pub alpha: Alpha,
    pub s_true: f64,
    pub o_true: f64,
    pub p_true: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_estimate: Option<f64>,
}

/// Per-level ranking with normalized shares.
#[derive(Debug, Serialize)]
pub struct RankedReport {
    pub levels: Vec<RankedLevel>,
}

#[derive(Debug, Serialize)]
pub struct RankedLevel {
    pub alpha: Alpha,
    pub rows: Vec<RankedRow>,
    /// False when every index was nonpositive and shares were skipped.
    pub normalized: bool,
}

#[derive(Debug, Serialize)]
pub struct RankedRow {
    pub rank: usize,
    pub input_index: usize,
    pub input_name: String,
    pub s_hat: f64,
    /// `max(s, 0) / sum_j max(s_j, 0)`; absent when the sum is zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub share: Option<f64>,
    /// Whether a negative estimate was floored at zero for normalization.
    pub floored: bool,
}

impl RankedReport {
    pub fn from_estimates(estimates: &[QosaEstimate]) -> Result<Self, Error> {
        if estimates.is_empty() {
            return Err(Error::Config("the estimate report holds no records".into()));
        }
        let mut alphas: Vec<Alpha> = Vec::new();
        for e in estimates {
            if !alphas.contains(&e.alpha) {
                alphas.push(e.alpha);
            }
        }
        let mut levels = Vec::new();
        for alpha in alphas {
            let mut rows: Vec<&QosaEstimate> =
                estimates.iter().filter(|e| e.alpha == alpha).collect();
            rows.sort_by(|a, b| {
                b.s_hat
                    .partial_cmp(&a.s_hat)
                    .unwrap()
                    .then(a.input_index.cmp(&b.input_index))
            });
            let total: f64 = rows.iter().map(|e| e.s_hat.max(0.0)).sum();
            let normalized = total > 0.0;
            if !normalized {
                log::warn!("alpha {}: all indices nonpositive, shares skipped", alpha.value());
            }
            let rows = rows
                .iter()
                .enumerate()
                .map(|(r, e)| RankedRow {
                    rank: r + 1,
                    input_index: e.input_index,
                    input_name: e.input_name.clone(),
                    s_hat: e.s_hat,
                    share: normalized.then(|| e.s_hat.max(0.0) / total),
                    floored: normalized && e.s_hat < 0.0,
                })
                .collect();
            levels.push(RankedLevel { alpha, rows, normalized });
        }
        Ok(RankedReport { levels })
    }
}

fn open_sink(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    match path {
        Some(p) => {
            let f = std::fs::File::create(p)
                .map_err(|e| Error::Ingestion(format!("cannot create {}: {e}", p.display())))?;
            Ok(Box::new(std::io::BufWriter::new(f)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), Error> {
    let mut sink = open_sink(path)?;
    serde_json::to_writer_pretty(&mut sink, value)
        .map_err(|e| Error::Ingestion(format!("serialization failed: {e}")))?;
    writeln!(sink).map_err(|e| Error::Ingestion(format!("write failed: {e}")))
}

fn delim(format: OutputFormat) -> u8 {
    match format {
        OutputFormat::Tsv => b'\t',
        _ => b',',
    }
}

fn table_writer(format: OutputFormat, path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>, Error> {
    Ok(csv::WriterBuilder::new().delimiter(delim(format)).from_writer(open_sink(path)?))
}

fn flush(mut w: csv::Writer<Box<dyn Write>>) -> Result<(), Error> {
    w.flush().map_err(|e| Error::Ingestion(format!("write failed: {e}")))
}

pub fn write_estimates(
    report: &EstimateFileReport,
    format: OutputFormat,
    path: Option<&Path>,
) -> Result<(), Error> {
    match format {
        OutputFormat::Json => write_json(report, path),
        _ => {
            let mut w = table_writer(format, path)?;
            w.write_record([
                "input_index",
                "input_name",
                "alpha",
                "p_hat",
                "o_hat",
                "s_hat",
                "estimator",
                "leaf_size_used",
                "seed",
            ])
            .map_err(csv_err)?;
            for e in &report.estimates {
                w.write_record([
                    e.input_index.to_string(),
                    e.input_name.clone(),
                    e.alpha.value().to_string(),
                    e.p_hat.to_string(),
                    e.o_hat.to_string(),
                    e.s_hat.to_string(),
                    e.estimator.to_string(),
                    e.leaf_size_used.to_string(),
                    e.seed.to_string(),
                ])
                .map_err(csv_err)?;
            }
            flush(w)
        }
    }
}

#[derive(Serialize)]
struct TuningFile<'a> {
    input_index: usize,
    alpha: Alpha,
    report: &'a TuningReport,
}

pub fn write_tuning(
    report: &TuningReport,
    input: usize,
    alpha: Alpha,
    format: OutputFormat,
    path: Option<&Path>,
) -> Result<(), Error> {
    match format {
        OutputFormat::Json => write_json(&TuningFile { input_index: input, alpha, report }, path),
        _ => {
            let mut w = table_writer(format, path)?;
            w.write_record(["leaf_size", "error", "skipped_observations", "selected"])
                .map_err(csv_err)?;
            for c in &report.candidates {
                w.write_record([
                    c.leaf_size.to_string(),
                    c.error.map(|e| e.to_string()).unwrap_or_default(),
                    c.skipped_observations.map(|s| s.to_string()).unwrap_or_default(),
                    (c.leaf_size == report.selected).to_string(),
                ])
                .map_err(csv_err)?;
            }
            flush(w)
        }
    }
}

fn metrics_rows(
    w: &mut csv::Writer<Box<dyn Write>>,
    cells: &[qosa::bench::MetricsCell],
) -> Result<(), Error> {
    w.write_record([
        "estimator",
        "input_index",
        "alpha",
        "sweep_axis",
        "sweep_value",
        "true_value",
        "mean_estimate",
        "rmse",
        "bias",
        "variance",
        "replications",
        "wall_time_s",
    ])
    .map_err(csv_err)?;
    for c in cells {
        w.write_record([
            c.estimator.to_string(),
            c.input_index.to_string(),
            c.alpha.value().to_string(),
            c.sweep_axis.clone().unwrap_or_default(),
            c.sweep_value.map(|v| v.to_string()).unwrap_or_default(),
            c.true_value.to_string(),
            c.mean_estimate.to_string(),
            c.rmse.to_string(),
            c.bias.to_string(),
            c.variance.to_string(),
            c.replications.to_string(),
            c.wall_time_s.to_string(),
        ])
        .map_err(csv_err)?;
    }
    Ok(())
}

pub fn write_metrics(
    report: &MetricsReport,
    format: OutputFormat,
    path: Option<&Path>,
) -> Result<(), Error> {
    match format {
        OutputFormat::Json => write_json(report, path),
        _ => {
            let mut w = table_writer(format, path)?;
            metrics_rows(&mut w, &report.cells)?;
            flush(w)
        }
    }
}

pub fn write_dimension(
    report: &DimensionReport,
    format: OutputFormat,
    path: Option<&Path>,
) -> Result<(), Error> {
    match format {
        OutputFormat::Json => write_json(report, path),
        _ => {
            let mut w = table_writer(format, path)?;
            w.write_record(["estimator", "alpha", "dimension", "weighted_rmse"]).map_err(csv_err)?;
            for c in &report.summary {
                w.write_record([
                    c.estimator.to_string(),
                    c.alpha.value().to_string(),
                    c.dimension.to_string(),
                    c.weighted_rmse.to_string(),
                ])
                .map_err(csv_err)?;
            }
            flush(w)
        }
    }
}

pub fn write_oracle(
    records: &[OracleRecord],
    format: OutputFormat,
    path: Option<&Path>,
) -> Result<(), Error> {
    match format {
        OutputFormat::Json => write_json(&records, path),
        _ => {
            let mut w = table_writer(format, path)?;
            w.write_record(["model", "input", "alpha", "s_true", "o_true", "p_true", "mc_estimate"])
                .map_err(csv_err)?;
            for r in records {
                w.write_record([
                    r.model.clone(),
                    r.input.to_string(),
                    r.alpha.value().to_string(),
                    r.s_true.to_string(),
                    r.o_true.to_string(),
                    r.p_true.to_string(),
                    r.mc_estimate.map(|v| v.to_string()).unwrap_or_default(),
                ])
                .map_err(csv_err)?;
            }
            flush(w)
        }
    }
}

pub fn write_ranked(
    report: &RankedReport,
    format: OutputFormat,
    path: Option<&Path>,
) -> Result<(), Error> {
    match format {
        OutputFormat::Json => write_json(report, path),
        _ => {
            let mut w = table_writer(format, path)?;
            w.write_record(["alpha", "rank", "input_index", "input_name", "s_hat", "share", "floored"])
                .map_err(csv_err)?;
            for level in &report.levels {
                for row in &level.rows {
                    w.write_record([
                        level.alpha.value().to_string(),
                        row.rank.to_string(),
                        row.input_index.to_string(),
                        row.input_name.clone(),
                        row.s_hat.to_string(),
                        row.share.map(|s| s.to_string()).unwrap_or_default(),
                        row.floored.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            flush(w)
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Ingestion(format!("write failed: {e}"))
}
