//! CSV ingestion, per-column standardization and model export in original units.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::{GaussianComponent, UniformComponent};
use crate::error::{invalid, ClusterError, Result};
use crate::metrics::Partition;
use crate::model::{ClusterParams, Model};

/// Per-column z-scaling `z = (x - mean) / sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Column means and sample standard deviations; constant columns keep sd 1.
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut sd = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0);
            mean.push(m);
            sd.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, sd }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.sd[j])
    }

    pub fn invert(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] * self.sd[j] + self.mean[j])
    }

    /// Maps a model fitted on scaled data back to original units. Posterior
    /// probabilities are unchanged by the map.
    pub fn destandardize(&self, m: &Model) -> Model {
        let d = m.dim;
        let sd = DVector::from_column_slice(&self.sd);
        let mean = DVector::from_column_slice(&self.mean);
        let to_orig = |v: &DVector<f64>| v.component_mul(&sd) + &mean;
        let clusters = m
            .clusters
            .iter()
            .map(|c| {
                // precision' = S⁻¹ L Lᵀ S⁻¹, so L' = S⁻¹ L stays lower triangular.
                let chol = DMatrix::from_fn(d, d, |r, k| c.gaussian.chol[(r, k)] / self.sd[r]);
                ClusterParams {
                    logit: c.logit,
                    omega: c.omega,
                    gaussian: GaussianComponent { mu: to_orig(&c.gaussian.mu), chol },
                    uniform: UniformComponent { lower: to_orig(&c.uniform.lower), upper: to_orig(&c.uniform.upper) },
                }
            })
            .collect();
        Model { clusters, dim: d }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub x: DMatrix<f64>,
    pub true_labels: Option<Vec<usize>>,
    pub standardizer: Option<Standardizer>,
}

impl LabeledDataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Data in original units.
    pub fn original(&self) -> DMatrix<f64> {
        match &self.standardizer {
            Some(s) => s.invert(&self.x),
            None => self.x.clone(),
        }
    }

    pub fn standardized(mut self) -> Self {
        if self.standardizer.is_none() {
            let s = Standardizer::fit(&self.x);
            self.x = s.apply(&self.x);
            self.standardizer = Some(s);
        }
        self
    }
}

/// Which column holds the class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(s.parse().map(LabelColumn::Index).unwrap_or_else(|_| LabelColumn::Name(s.to_string())))
    }
}

/// True when the first non-empty line has a cell that is not a number.
pub fn sniff_header(path: &Path) -> Result<bool> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path)?;
    for rec in reader.records() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        return Ok(rec.iter().any(|c| c.parse::<f64>().is_err()));
    }
    Ok(false)
}

/// Reads numeric features (and optionally one label column of any text)
/// from a comma-separated file. Errors carry 1-based file line numbers.
pub fn load_csv(path: &Path, has_header: bool, label: Option<&LabelColumn>, standardize: bool) -> Result<LabeledDataset> {
    load_csv_excluding(path, has_header, label, &[], standardize)
}

/// As [`load_csv`], additionally leaving the `exclude` columns out of the features.
pub fn load_csv_excluding(
    path: &Path,
    has_header: bool,
    label: Option<&LabelColumn>,
    exclude: &[LabelColumn],
    standardize: bool,
) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = if has_header { Some(reader.headers()?.clone()) } else { None };
    let resolve = |col: &LabelColumn| -> Result<usize> {
        match col {
            LabelColumn::Index(i) => Ok(*i),
            LabelColumn::Name(name) => headers
                .as_ref()
                .ok_or_else(|| invalid(format!("column '{name}' named but the file has no header")))?
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| invalid(format!("no column named '{name}'"))),
        }
    };
    let label_idx = label.map(&resolve).transpose()?;
    let mut skipped: Vec<usize> = exclude.iter().map(&resolve).collect::<Result<_>>()?;
    skipped.extend(label_idx);
    skipped.sort_unstable();
    skipped.dedup();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(ClusterError::Parse { line, message: format!("expected {w} fields, found {}", rec.len()) })
            }
            _ => {}
        }
        if let Some(&last) = skipped.last() {
            if last >= rec.len() {
                return Err(ClusterError::Parse { line, message: format!("column {last} out of range") });
            }
        }
        for (j, cell) in rec.iter().enumerate() {
            if Some(j) == label_idx {
                labels.push(cell.to_string());
            }
            if skipped.binary_search(&j).is_ok() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| ClusterError::Parse { line, message: format!("column {j}: '{cell}' is not a finite number") })?;
            values.push(v);
        }
    }
    let Some(w) = width else {
        return Err(invalid(format!("{} contains no data rows", path.display())));
    };
    let d = w - skipped.len();
    if d == 0 {
        return Err(invalid("no feature columns"));
    }
    let n = values.len() / d;
    let x = DMatrix::from_row_slice(n, d, &values);
    let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let true_labels = label_idx.map(|_| Partition::compact(&labels).labels);
    let ds = LabeledDataset { name, x, true_labels, standardizer: None };
    Ok(if standardize { ds.standardized() } else { ds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn plain_matrix() {
        let f = write("1,2\n3,4\n5,6\n");
        let ds = load_csv(f.path(), false, None, false).unwrap();
        assert_eq!(ds.x, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert!(ds.true_labels.is_none());
    }

    #[test]
    fn standardized_columns() {
        let f = write("1,2\n3,4\n5,6\n");
        let ds = load_csv(f.path(), false, None, true).unwrap();
        for col in ds.x.column_iter() {
            let m = col.mean();
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 2.0).sqrt();
            assert!(m.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        }
        assert!((ds.original() - DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).abs().max() < 1e-12);
    }

    #[test]
    fn bad_cell_names_its_row() {
        let f = write("a,2\n3,4\n");
        match load_csv(f.path(), false, None, false) {
            Err(ClusterError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let g = write("1,2\n3\n");
        assert!(matches!(load_csv(g.path(), false, None, false), Err(ClusterError::Parse { line: 2, .. })));
    }

    #[test]
    fn labels_by_name_and_index() {
        let f = write("x,y,label\n1,2,b\n3,4,a\n5,6,b\n");
        let by_name = load_csv(f.path(), true, Some(&LabelColumn::Name("label".into())), false).unwrap();
        assert_eq!(by_name.true_labels, Some(vec![0, 1, 0]));
        assert_eq!(by_name.dim(), 2);
        let by_index = load_csv(f.path(), true, Some(&"2".parse().unwrap()), false).unwrap();
        assert_eq!(by_index, by_name);
    }

    #[test]
    fn excluded_columns_are_not_features() {
        let f = write("x,extra,y,label\n1,9,2,a\n3,9,4,b\n");
        let ds = load_csv_excluding(f.path(), true, Some(&"label".parse().unwrap()), &["extra".parse().unwrap()], false).unwrap();
        assert_eq!(ds.x, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(ds.true_labels, Some(vec![0, 1]));
        assert!(load_csv_excluding(f.path(), true, None, &["nope".parse().unwrap()], false).is_err());
    }

    #[test]
    fn header_detection() {
        assert!(sniff_header(write("x,y\n1,2\n").path()).unwrap());
        assert!(!sniff_header(write("\n1e-3,2\n").path()).unwrap());
    }

    #[test]
    fn destandardized_model_gives_same_posteriors() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let x = DMatrix::from_fn(40, 2, |_, j| rand::Rng::random_range(&mut rng, 0.0..10.0) * (j as f64 + 1.0) + 5.0);
        let s = Standardizer::fit(&x);
        let z = s.apply(&x);
        let m = crate::init::kmeans_init(&z, &crate::init::InitConfig { k: 3, n_starts: 1, ..Default::default() }).unwrap();
        let back = s.destandardize(&m);
        let pz = crate::objective::posterior(&z, &m).unwrap();
        let px = crate::objective::posterior(&x, &back).unwrap();
        assert!((pz.p - px.p).abs().max() < 1e-10);
        let cov = back.clusters[0].gaussian.covariance();
        let scaled = m.clusters[0].gaussian.covariance()[(1, 1)] * s.sd[1] * s.sd[1];
        assert!((cov[(1, 1)] - scaled).abs() < 1e-9 * scaled);
    }
}
