use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::density::mean_stderr;
use crate::error::{LcaError, Result};
use crate::gauss_parzen::{fit_gauss, fit_gauss_red, GaussParzenModel};
use crate::harness::accuracy::clustering_accuracy;
use crate::harness::spectral::{spectral_cluster, SpectralConfig};
use crate::harness::synthetic::{generate, BaseDataset, SyntheticSpec};
use crate::lca::{self, FitConfig};
use crate::seeds::derive_seed;

/// How the whitened data is transformed before spectral clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterMethod {
    /// No transform.
    Whitened,
    /// LCA metric, with an optional cap on EM iterations (`Some(1)` is
    /// Manifold Parzen Windows).
    Lca { max_iter: Option<usize> },
    /// Parzen block of the Gaussian × Parzen model.
    LcaGauss,
    /// Same, with the dimension search.
    LcaGaussRed,
}

impl ClusterMethod {
    pub fn label(&self) -> String {
        match self {
            ClusterMethod::Whitened => "whitened".into(),
            ClusterMethod::Lca { max_iter: None } => "lca".into(),
            ClusterMethod::Lca { max_iter: Some(1) } => "mpw".into(),
            ClusterMethod::Lca { max_iter: Some(m) } => format!("lca_iter{m}"),
            ClusterMethod::LcaGauss => "lca_gauss".into(),
            ClusterMethod::LcaGaussRed => "lca_gauss_red".into(),
        }
    }

    fn transform(&self, data: &Dataset, fit: &FitConfig) -> Result<Dataset> {
        match *self {
            ClusterMethod::Whitened => Ok(data.clone()),
            ClusterMethod::Lca { max_iter } => {
                let cfg = FitConfig {
                    max_iter: max_iter.unwrap_or(fit.max_iter),
                    ..fit.clone()
                };
                let m = lca::fit(data, &cfg)?;
                lca::transform(data, &m)
            }
            ClusterMethod::LcaGauss => parzen_or_full(data, &fit_gauss(data, fit)?),
            ClusterMethod::LcaGaussRed => parzen_or_full(data, &fit_gauss_red(data, fit)?),
        }
    }
}

/// The Parzen coordinates carry the cluster structure; when every direction
/// went Gaussian the full transform is used instead.
fn parzen_or_full(data: &Dataset, m: &GaussParzenModel) -> Result<Dataset> {
    if m.d2() == 0 {
        m.full_coords(data)
    } else {
        m.parzen_coords(data)
    }
}

impl fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for ClusterMethod {
    type Err = LcaError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        Ok(match s.as_str() {
            "whitened" => ClusterMethod::Whitened,
            "lca" => ClusterMethod::Lca { max_iter: None },
            "mpw" => ClusterMethod::Lca { max_iter: Some(1) },
            "lca_gauss" => ClusterMethod::LcaGauss,
            "lca_gauss_red" => ClusterMethod::LcaGaussRed,
            other => match other.strip_prefix("lca_iter").map(str::parse::<usize>) {
                Some(Ok(m)) if m > 0 => ClusterMethod::Lca { max_iter: Some(m) },
                _ => return Err(LcaError::InvalidInput(format!("unknown clustering method '{s}'"))),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: BaseDataset,
    /// Points per run; `None` uses the dataset default.
    pub n_points: Option<usize>,
    pub runs: usize,
    pub seed: u64,
    pub fit: FitConfig,
    pub spectral: SpectralConfig,
}

impl SweepConfig {
    pub fn new(base: BaseDataset, runs: usize, seed: u64) -> Self {
        Self {
            base,
            n_points: None,
            runs,
            seed,
            fit: FitConfig::default(),
            spectral: SpectralConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: String,
    pub noise_dims: usize,
    pub run: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub method: String,
    pub noise_dims: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

impl SweepTable {
    pub fn cell(&self, method: &str, noise_dims: usize) -> Option<&SweepSummary> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.noise_dims == noise_dims)
    }
}

/// Mean and standard error per `(noise_dims, method)`, in first-seen order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut keys: Vec<(usize, String)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(n, m)| *n == r.noise_dims && *m == r.method) {
            keys.push((r.noise_dims, r.method.clone()));
        }
    }
    keys.into_iter()
        .map(|(noise_dims, method)| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.noise_dims == noise_dims && r.method == method)
                .map(|r| r.accuracy)
                .collect();
            let (mean, stderr) = mean_stderr(&v);
            SweepSummary {
                method,
                noise_dims,
                mean,
                stderr,
            }
        })
        .collect()
}

/// For every noise level and run, generates one dataset (shared by all
/// methods so that comparisons are paired), transforms it with each method
/// and scores spectral clustering against the true labels. Seeds derive
/// from `cfg.seed`, the noise level and the run index only.
pub fn run_noise_sweep(cfg: &SweepConfig, noise_dims: &[usize], methods: &[ClusterMethod]) -> Result<SweepTable> {
    if cfg.runs == 0 || noise_dims.is_empty() || methods.is_empty() {
        return Err(LcaError::InvalidInput(
            "sweep needs runs, noise levels and methods".into(),
        ));
    }
    cfg.fit.validate()?;
    let n_points = cfg.n_points.unwrap_or_else(|| cfg.base.default_points());
    let jobs: Vec<(usize, usize)> = noise_dims
        .iter()
        .flat_map(|&nd| (0..cfg.runs).map(move |run| (nd, run)))
        .collect();

    let results: Vec<Vec<SweepRow>> = jobs
        .par_iter()
        .map(|&(nd, run)| -> Result<Vec<SweepRow>> {
            let spec = SyntheticSpec {
                base: cfg.base,
                n_points,
                noise_dims: nd,
                seed: derive_seed(cfg.seed, &[nd as u64, run as u64, 0]),
            };
            let ld = generate(&spec)?;
            let sc_seed = derive_seed(cfg.seed, &[nd as u64, run as u64, 1]);
            methods
                .iter()
                .map(|m| {
                    let y = m.transform(&ld.data, &cfg.fit)?;
                    let assign = spectral_cluster(&y, ld.k, sc_seed, &cfg.spectral)?;
                    let accuracy = clustering_accuracy(&assign, &ld.labels, ld.k)?;
                    log::debug!("{} noise={nd} run={run} {m}: {accuracy:.1}%", cfg.base);
                    Ok(SweepRow {
                        method: m.label(),
                        noise_dims: nd,
                        run,
                        accuracy,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    // noise level, then method, then run
    let mut rows = Vec::with_capacity(jobs.len() * methods.len());
    for &nd in noise_dims {
        for m in methods {
            let label = m.label();
            for per_job in results.iter().filter(|r| r[0].noise_dims == nd) {
                rows.extend(per_job.iter().filter(|r| r.method == label).cloned());
            }
        }
    }
    let summary = summarize(&rows);
    Ok(SweepTable { rows, summary })
}

/// [`run_noise_sweep`] over LCA with capped EM iterations; `None` runs to
/// convergence and `Some(1)` is labeled MPW.
pub fn run_iteration_sweep(
    cfg: &SweepConfig,
    noise_dims: &[usize],
    iteration_counts: &[Option<usize>],
) -> Result<SweepTable> {
    if iteration_counts.is_empty() || iteration_counts.contains(&Some(0)) {
        return Err(LcaError::InvalidInput("iteration counts must be positive".into()));
    }
    let methods: Vec<ClusterMethod> = iteration_counts
        .iter()
        .map(|&max_iter| ClusterMethod::Lca { max_iter })
        .collect();
    run_noise_sweep(cfg, noise_dims, &methods)
}
