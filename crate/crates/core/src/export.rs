//! Output files written by the command-line tool, and the `model.json` schema.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a
//! file back yields bit-identical values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{invalid, Result};
use crate::fit::{FitResult, TracePoint};
use crate::metrics::Partition;
use crate::model::Model;
use crate::objective::Responsibilities;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One cluster in original data units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterExport {
    pub proportion: f64,
    /// Weight of the Gaussian part within the cluster.
    pub omega: f64,
    pub mean: Vec<f64>,
    /// Row-major covariance of the Gaussian part.
    pub covariance: Vec<Vec<f64>>,
    /// Row-major lower Cholesky factor of the precision.
    pub precision_cholesky: Vec<Vec<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExport {
    pub version: u32,
    pub dim: usize,
    /// Clusters holding at least one MAP label.
    pub k: usize,
    pub asw: Option<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub initial_k: usize,
    pub standardizer: Option<Standardizer>,
    pub clusters: Vec<ClusterExport>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ModelExport {
    /// Builds the export, mapping parameters back through `standardizer` if given.
    pub fn from_fit(res: &FitResult, standardizer: Option<&Standardizer>) -> Self {
        let model: Model = standardizer.map_or_else(|| res.model.clone(), |s| s.destandardize(&res.model));
        let clusters = model
            .clusters
            .iter()
            .zip(model.proportions())
            .map(|(c, proportion)| ClusterExport {
                proportion,
                omega: c.omega,
                mean: c.gaussian.mu.iter().copied().collect(),
                covariance: rows(&c.gaussian.covariance()),
                precision_cholesky: rows(&c.gaussian.chol),
                lower: c.uniform.lower.iter().copied().collect(),
                upper: c.uniform.upper.iter().copied().collect(),
            })
            .collect();
        Self {
            version: MODEL_FORMAT_VERSION,
            dim: model.dim,
            k: res.k(),
            asw: res.asw,
            lambda1: res.hyper.lambda1,
            lambda2: res.hyper.lambda2,
            initial_k: res.initial_k,
            standardizer: standardizer.cloned(),
            clusters,
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

/// `row,label` with zero-based row indices.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["row", "label"])?;
    for (i, l) in labels.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// N×K posterior matrix with header `p0,p1,...`.
pub fn write_posteriors(path: &Path, resp: &Responsibilities) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record((0..resp.p.ncols()).map(|k| format!("p{k}")))?;
    for row in resp.p.row_iter() {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// `step,phase,objective`.
pub fn write_trace(path: &Path, trace: &[TracePoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["step", "phase", "objective"])?;
    for (i, t) in trace.iter().enumerate() {
        w.write_record([i.to_string(), t.phase.as_str().to_string(), t.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_model(path: &Path, export: &ModelExport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, export)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes features `x1..xD` followed by integer label columns.
pub fn write_dataset(path: &Path, x: &DMatrix<f64>, labels: &[(&str, &[usize])]) -> Result<()> {
    if let Some((name, l)) = labels.iter().find(|(_, l)| l.len() != x.nrows()) {
        return Err(invalid(format!("label column '{name}' has {} entries for {} rows", l.len(), x.nrows())));
    }
    let mut w = csv_writer(path)?;
    let header = (1..=x.ncols()).map(|j| format!("x{j}")).chain(labels.iter().map(|(n, _)| n.to_string()));
    w.write_record(header)?;
    for (i, row) in x.row_iter().enumerate() {
        let rec = row.iter().map(f64::to_string).chain(labels.iter().map(|(_, l)| l[i].to_string()));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one named column of a headed CSV as a compact labelling.
pub fn read_label_column(path: &Path, column: &str) -> Result<Vec<usize>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let idx = r
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| invalid(format!("{} has no column '{column}'", path.display())))?;
    let mut raw = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cell = rec
            .get(idx)
            .ok_or_else(|| crate::error::ClusterError::Parse { line, message: format!("missing column {idx}") })?;
        raw.push(cell.to_string());
    }
    Ok(Partition::compact(&raw).labels)
}
