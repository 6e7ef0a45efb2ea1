//! File formats: numeric CSV tables with a header row, and versioned JSON
//! model files.
//!
//! Floats are written in the shortest form that parses back to the same
//! value, so data and models survive a write/read cycle bit for bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LcaError, Result};
use crate::gauss_parzen::GaussParzenModel;
use crate::lca::{FitConfig, MetricModel};
use crate::matrix::{precision_factor, SymMatrix};
use crate::stochastic::StochasticConfig;

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn parse_err(line: u64, msg: impl Into<String>) -> LcaError {
    LcaError::Parse { line, msg: msg.into() }
}

fn csv_err(e: csv::Error) -> LcaError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LcaError::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            parse_err(line, format!("expected {expected_len} fields, found {len}"))
        }
        other => parse_err(line, format!("{other:?}")),
    }
}

/// Reads a numeric table with a header row. Errors name the offending line
/// (1-based, header included).
pub fn read_csv_from<R: Read>(reader: R) -> Result<(Vec<String>, Dataset)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(parse_err(1, "missing header row"));
    }
    let d = header.len();
    let mut x = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("'{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value '{field}'")));
            }
            x.push(v);
        }
        n += 1;
    }
    Ok((header, Dataset::new(n, d, x)?))
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Dataset)> {
    read_csv_from(File::open(path)?)
}

/// Reads a table and discards the header.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Ok(read_csv(path)?.1)
}

/// `x0, x1, …` for `d` columns.
pub fn default_header(d: usize) -> Vec<String> {
    (0..d).map(|k| format!("x{k}")).collect()
}

pub fn write_csv_to<W: Write>(writer: W, header: &[String], data: &Dataset) -> Result<()> {
    if header.len() != data.d() {
        return Err(LcaError::DimensionMismatch {
            expected: data.d(),
            found: header.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header).map_err(csv_err)?;
    for row in data.rows() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: &Path, header: &[String], data: &Dataset) -> Result<()> {
    write_csv_to(File::create(path)?, header, data)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["label"]).map_err(csv_err)?;
    for l in labels {
        w.write_record([l.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 1 {
            return Err(parse_err(line, "expected a single label column"));
        }
        out.push(
            rec[0]
                .parse()
                .map_err(|_| parse_err(line, format!("'{}' is not a label", &rec[0])))?,
        );
    }
    Ok(out)
}

/// Writes serializable rows (structs with named fields) as CSV.
pub fn write_records<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(LcaError::ModelFormat(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(LcaError::ModelFormat(format!("{what}: non-finite entry")));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

/// The fitted parameters, tagged by model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    Lca {
        dim: usize,
        sigma: Vec<Vec<f64>>,
        loo_nll: f64,
        trace: Vec<f64>,
        nu: f64,
    },
    GaussParzen {
        dim: usize,
        d1: usize,
        b_g: Vec<Vec<f64>>,
        b_l: Vec<Vec<f64>>,
        mu: Vec<f64>,
        eigvals: Vec<f64>,
        bound_trace: Vec<f64>,
        nu_global: f64,
        nu_local: f64,
    },
}

/// Everything written to a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    /// Fitting method that produced the model (`lca`, `lca-gauss`, …).
    pub method: String,
    pub fit_config: FitConfig,
    pub stochastic: Option<StochasticConfig>,
    pub model: ModelBody,
}

/// A model read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Lca(MetricModel),
    GaussParzen(GaussParzenModel),
}

impl LoadedModel {
    pub fn dim(&self) -> usize {
        match self {
            LoadedModel::Lca(m) => m.dim(),
            LoadedModel::GaussParzen(m) => m.dim(),
        }
    }
}

impl ModelFile {
    pub fn from_lca(method: &str, m: &MetricModel, stochastic: Option<StochasticConfig>) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            method: method.into(),
            fit_config: m.config.clone(),
            stochastic,
            model: ModelBody::Lca {
                dim: m.dim(),
                sigma: rows_of(m.sigma.as_matrix()),
                loo_nll: m.loo_nll,
                trace: m.trace.clone(),
                nu: m.nu,
            },
        }
    }

    pub fn from_gauss(method: &str, m: &GaussParzenModel, stochastic: Option<StochasticConfig>) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            method: method.into(),
            fit_config: m.config.clone(),
            stochastic,
            model: ModelBody::GaussParzen {
                dim: m.dim(),
                d1: m.d1(),
                b_g: rows_of(&m.b_g),
                b_l: rows_of(&m.b_l),
                mu: m.mu.iter().copied().collect(),
                eigvals: m.eigvals.clone(),
                bound_trace: m.bound_trace.clone(),
                nu_global: m.nu_global,
                nu_local: m.nu_local,
            },
        }
    }

    /// Rebuilds the in-memory model, checking shapes.
    pub fn to_model(&self) -> Result<LoadedModel> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(LcaError::ModelFormat(format!(
                "unsupported format version {} (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        match &self.model {
            ModelBody::Lca {
                dim,
                sigma,
                loo_nll,
                trace,
                nu,
            } => {
                if sigma.len() != *dim {
                    return Err(LcaError::ModelFormat("sigma has the wrong number of rows".into()));
                }
                let sigma = SymMatrix::new(matrix_from_rows(sigma, *dim, "sigma")?)?;
                let (f, _) = precision_factor(&sigma)?;
                Ok(LoadedModel::Lca(MetricModel {
                    sigma,
                    precision_factor: f,
                    loo_nll: *loo_nll,
                    trace: trace.clone(),
                    nu: *nu,
                    config: self.fit_config.clone(),
                }))
            }
            ModelBody::GaussParzen {
                dim,
                d1,
                b_g,
                b_l,
                mu,
                eigvals,
                bound_trace,
                nu_global,
                nu_local,
            } => {
                if *d1 > *dim || b_g.len() != *dim || b_l.len() != *dim || mu.len() != *dim {
                    return Err(LcaError::ModelFormat(
                        "Gauss-Parzen blocks have inconsistent shapes".into(),
                    ));
                }
                let m = GaussParzenModel {
                    b_g: matrix_from_rows(b_g, *d1, "b_g")?,
                    b_l: matrix_from_rows(b_l, dim - d1, "b_l")?,
                    mu: DVector::from_vec(mu.clone()),
                    eigvals: eigvals.clone(),
                    bound_trace: bound_trace.clone(),
                    nu_global: *nu_global,
                    nu_local: *nu_local,
                    config: self.fit_config.clone(),
                };
                m.validate()?;
                Ok(LoadedModel::GaussParzen(m))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| LcaError::ModelFormat(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| LcaError::ModelFormat(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        f.write_all(self.to_json()?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss_parzen::fit_gauss;
    use crate::lca::fit;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dataset::new(n, d, (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = read_csv_from("a,b\n1,2\n3,x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LcaError::Parse { line: 3, .. }), "{err}");
        let err = read_csv_from("a,b\n1,2\n3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LcaError::Parse { line: 3, .. }), "{err}");
        let err = read_csv_from("a,b\n1,NaN\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LcaError::Parse { line: 2, .. }), "{err}");
        let err = read_csv_from("".as_bytes()).unwrap_err();
        assert!(matches!(err, LcaError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn header_and_values() {
        let (h, ds) = read_csv_from("x, y\n1.5, -2\n0,3e2\n".as_bytes()).unwrap();
        assert_eq!(h, ["x", "y"]);
        assert_eq!(ds.as_slice(), &[1.5, -2.0, 0.0, 300.0]);
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_exact(vals in prop::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..40)) {
            let d = 2;
            let n = vals.len() / d;
            prop_assume!(n > 0);
            let ds = Dataset::new(n, d, vals[..n * d].to_vec()).unwrap();
            let mut buf = Vec::new();
            write_csv_to(&mut buf, &default_header(d), &ds).unwrap();
            let (_, back) = read_csv_from(buf.as_slice()).unwrap();
            prop_assert_eq!(
                back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                ds.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn lca_model_roundtrip() {
        let data = random_data(30, 3, 1);
        let m = fit(&data, &FitConfig::default().with_max_iter(5)).unwrap();
        let file = ModelFile::from_lca("lca", &m, None);
        let back = ModelFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back, file);
        let LoadedModel::Lca(m2) = back.to_model().unwrap() else {
            panic!()
        };
        assert_eq!(m2.sigma, m.sigma);
        assert_eq!(m2.precision_factor, m.precision_factor);
        assert_eq!(m2.trace, m.trace);
    }

    #[test]
    fn gauss_model_roundtrip() {
        let data = random_data(40, 3, 2);
        let m = fit_gauss(&data, &FitConfig::default().with_max_iter(5)).unwrap();
        let file = ModelFile::from_gauss("lca-gauss", &m, Some(StochasticConfig::default()));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        file.write(&p).unwrap();
        let back = ModelFile::read(&p).unwrap();
        assert_eq!(back, file);
        let LoadedModel::GaussParzen(m2) = back.to_model().unwrap() else {
            panic!()
        };
        assert_eq!(m2, m);
    }

    #[test]
    fn rejects_bad_model_files() {
        let data = random_data(20, 2, 3);
        let m = fit(&data, &FitConfig::default().with_max_iter(2)).unwrap();
        let mut file = ModelFile::from_lca("lca", &m, None);
        file.format_version = 99;
        assert!(matches!(file.to_model(), Err(LcaError::ModelFormat(_))));
        assert!(ModelFile::from_json("{\"format_version\": 1}").is_err());
    }

    #[test]
    fn labels_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        write_labels(&p, &[0, 1, 1, 4]).unwrap();
        assert_eq!(read_labels(&p).unwrap(), vec![0, 1, 1, 4]);
    }
}
