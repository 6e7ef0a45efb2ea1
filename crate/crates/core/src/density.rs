//! Density-model comparison: Parzen estimators with isotropic, diagonal and
//! full metrics derived from LCA, a single Gaussian, and the Gaussian ×
//! Parzen product.
//!
//! Every kind has one regularization knob, the ridge `ν` added to its
//! covariance, chosen on a validation split. At test time the Parzen kinds
//! use the whole training set as support with uniform weights `1/n`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LcaError, Result};
use crate::gauss_parzen::{fit_gauss, gp_log_densities, GaussParzenModel};
use crate::kernel::cross_log_sums;
use crate::lca::{self, gaussian_log_norm, FitConfig};
use crate::matrix::{precision_factor, SymMatrix};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    ParzenIsotropic,
    ParzenDiagonal,
    ParzenFull,
    Gaussian,
    GaussParzen,
}

impl DensityKind {
    pub const ALL: [DensityKind; 5] = [
        DensityKind::ParzenIsotropic,
        DensityKind::ParzenDiagonal,
        DensityKind::ParzenFull,
        DensityKind::Gaussian,
        DensityKind::GaussParzen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DensityKind::ParzenIsotropic => "parzen_isotropic",
            DensityKind::ParzenDiagonal => "parzen_diagonal",
            DensityKind::ParzenFull => "parzen_full",
            DensityKind::Gaussian => "gaussian",
            DensityKind::GaussParzen => "gauss_parzen",
        }
    }

    fn is_parzen(self) -> bool {
        matches!(
            self,
            DensityKind::ParzenIsotropic | DensityKind::ParzenDiagonal | DensityKind::ParzenFull
        )
    }
}

impl fmt::Display for DensityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DensityKind {
    type Err = LcaError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        DensityKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| LcaError::InvalidInput(format!("unknown density kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensityParams {
    /// Parzen estimator with kernel covariance `sigma`.
    Parzen {
        sigma: SymMatrix,
    },
    Gaussian {
        mean: DVector<f64>,
        cov: SymMatrix,
    },
    GaussParzen(GaussParzenModel),
}

/// A fitted density together with its Parzen support.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    pub kind: DensityKind,
    pub params: DensityParams,
    pub support: Dataset,
    /// Ridge on the (local) covariance.
    pub nu: f64,
    /// Ridge on the global covariance, for the Gauss–Parzen kind.
    pub nu_global: Option<f64>,
}

impl DensityModel {
    /// Derives a Parzen kind from a full LCA covariance: the full matrix,
    /// its diagonal, or `λI` with the same trace.
    pub fn parzen_from_full(kind: DensityKind, full: &SymMatrix, support: Dataset, nu: f64) -> Result<Self> {
        let d = full.dim();
        let sigma = match kind {
            DensityKind::ParzenFull => full.clone(),
            DensityKind::ParzenDiagonal => SymMatrix::from_diagonal(&full.diagonal())?,
            DensityKind::ParzenIsotropic => SymMatrix::identity(d).scale(full.trace() / d as f64),
            _ => return Err(LcaError::InvalidInput(format!("{kind} is not a Parzen kind"))),
        };
        Ok(Self {
            kind,
            params: DensityParams::Parzen { sigma },
            support,
            nu,
            nu_global: None,
        })
    }

    /// Per-point log density of `query`.
    pub fn log_densities(&self, query: &Dataset) -> Result<Vec<f64>> {
        let d = self.support.d();
        if query.d() != d {
            return Err(LcaError::DimensionMismatch {
                expected: d,
                found: query.d(),
            });
        }
        match &self.params {
            DensityParams::Parzen { sigma } => {
                self.support.require_points(1)?;
                let (f, logdet) = precision_factor(sigma)?;
                let yq = query.map_linear(&f)?;
                let ys = self.support.map_linear(&f)?;
                let c = gaussian_log_norm(d, logdet) - (self.support.n() as f64).ln();
                Ok(cross_log_sums(&yq, &ys).into_iter().map(|l| l + c).collect())
            }
            DensityParams::Gaussian { mean, cov } => {
                let (f, logdet) = precision_factor(cov)?;
                let shift: Vec<f64> = mean.iter().map(|m| -m).collect();
                let y = query.translate(&shift)?.map_linear(&f)?;
                let c = gaussian_log_norm(d, logdet);
                Ok(y.rows()
                    .map(|r| c - 0.5 * r.iter().map(|v| v * v).sum::<f64>())
                    .collect())
            }
            DensityParams::GaussParzen(m) => gp_log_densities(query, &self.support, m),
        }
    }
}

/// Mean per-point negative log density of `test` under `model`.
pub fn test_nll(model: &DensityModel, test: &Dataset) -> Result<f64> {
    test.require_points(1)?;
    let ld = model.log_densities(test)?;
    Ok(-ld.iter().sum::<f64>() / ld.len() as f64)
}

fn with_ridges(cfg: &FitConfig, nu: f64, nu_global: Option<f64>) -> FitConfig {
    FitConfig {
        reg_nu: Some(nu),
        reg_nu_global: nu_global,
        ..cfg.clone()
    }
}

/// Fits one kind on `train` with ridge `nu` (and `nu_global` for the
/// Gauss–Parzen kind; defaults to `nu`).
pub fn fit_density(
    kind: DensityKind,
    train: &Dataset,
    nu: f64,
    nu_global: Option<f64>,
    cfg: &FitConfig,
) -> Result<DensityModel> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(LcaError::InvalidInput(format!(
            "ridge must be finite and nonnegative, got {nu}"
        )));
    }
    match kind {
        k if k.is_parzen() => {
            let full = lca::fit(train, &with_ridges(cfg, nu, None))?;
            DensityModel::parzen_from_full(k, &full.sigma, train.clone(), nu)
        }
        DensityKind::Gaussian => {
            train.require_points(1)?;
            Ok(DensityModel {
                kind,
                params: DensityParams::Gaussian {
                    mean: train.mean(),
                    cov: train.covariance().add_identity(nu),
                },
                support: train.clone(),
                nu,
                nu_global: None,
            })
        }
        _ => {
            let ng = nu_global.unwrap_or(nu);
            let m = fit_gauss(train, &with_ridges(cfg, nu, Some(ng)))?;
            Ok(DensityModel {
                kind,
                params: DensityParams::GaussParzen(m),
                support: train.clone(),
                nu,
                nu_global: Some(ng),
            })
        }
    }
}

/// `τ = trace(Cov)/d`, the scale the default grid is expressed in.
pub fn reg_scale(data: &Dataset) -> f64 {
    data.covariance().trace() / data.d().max(1) as f64
}

/// Ten log-spaced multipliers from `1e-8` to `1e-1`.
pub fn default_reg_grid() -> Vec<f64> {
    (0..10).map(|k| 10f64.powf(-8.0 + 7.0 * k as f64 / 9.0)).collect()
}

/// Outcome of a validation search.
#[derive(Debug, Clone)]
pub struct Selection {
    pub model: DensityModel,
    pub valid_nll: f64,
    /// `(ν, validation NLL)` per grid value; `None` where the fit failed.
    pub scores: Vec<(f64, Option<f64>)>,
}

fn select_with(grid: &[f64], valid: &Dataset, mut fit: impl FnMut(f64) -> Result<DensityModel>) -> Result<Selection> {
    if grid.is_empty() {
        return Err(LcaError::InvalidInput("regularization grid is empty".into()));
    }
    let mut best: Option<(DensityModel, f64)> = None;
    let mut scores = Vec::with_capacity(grid.len());
    for &nu in grid {
        let scored = fit(nu).and_then(|m| {
            let v = test_nll(&m, valid)?;
            if v.is_finite() {
                Ok((m, v))
            } else {
                Err(LcaError::NonFinite("validation NLL"))
            }
        });
        match scored {
            Ok((m, v)) => {
                scores.push((nu, Some(v)));
                if best.as_ref().is_none_or(|(_, b)| v < *b) {
                    best = Some((m, v));
                }
            }
            Err(e) if e.is_numerical() => {
                log::debug!("ridge {nu} rejected: {e}");
                scores.push((nu, None));
            }
            Err(e) => return Err(e),
        }
    }
    let (model, valid_nll) = best.ok_or(LcaError::AllRegularizationsFailed)?;
    Ok(Selection {
        model,
        valid_nll,
        scores,
    })
}

/// Fits `kind` for every absolute ridge in `grid` and keeps the one with the
/// lowest validation NLL. The Gauss–Parzen kind first selects the global
/// ridge as the best pure-Gaussian ridge, then searches only the local one.
pub fn select_regularization(
    train: &Dataset,
    valid: &Dataset,
    kind: DensityKind,
    grid: &[f64],
    cfg: &FitConfig,
) -> Result<Selection> {
    let nu_global = if kind == DensityKind::GaussParzen {
        let g = select_regularization(train, valid, DensityKind::Gaussian, grid, cfg)?;
        Some(g.model.nu)
    } else {
        None
    };
    select_with(grid, valid, |nu| fit_density(kind, train, nu, nu_global, cfg))
}

/// Split sizes, ridge grid and repetitions of a density benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub train_n: usize,
    pub valid_n: usize,
    pub test_n: usize,
    /// Ridge candidates as multiples of `τ = trace(Cov)/d` of each training
    /// split.
    pub reg_grid: Vec<f64>,
    pub runs: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            train_n: 2000,
            valid_n: 1000,
            test_n: 3000,
            reg_grid: default_reg_grid(),
            runs: 20,
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train_n < 2 || self.valid_n == 0 || self.test_n == 0 {
            return Err(LcaError::InvalidInput(
                "need at least 2 training points and nonempty validation and test splits".into(),
            ));
        }
        let total = self.train_n + self.valid_n + self.test_n;
        if total > n {
            return Err(LcaError::InvalidInput(format!(
                "splits need {total} points but the data has {n}"
            )));
        }
        if self.runs == 0 {
            return Err(LcaError::InvalidInput("runs must be positive".into()));
        }
        if self.reg_grid.is_empty() || self.reg_grid.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(LcaError::InvalidInput(
                "grid values must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Disjoint `(train, valid, test)` index sets for run `run`.
    pub fn split_indices(&self, n: usize, run: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[run as u64]));
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let a = self.train_n;
        let b = a + self.valid_n;
        let c = b + self.test_n;
        (idx[..a].to_vec(), idx[a..b].to_vec(), idx[b..c].to_vec())
    }
}

/// One kind in one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRun {
    pub kind: DensityKind,
    pub run: usize,
    pub nu: f64,
    pub valid_nll: f64,
    pub test_nll: f64,
}

/// Mean test NLL and its standard error over runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensitySummary {
    pub kind: DensityKind,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub runs: Vec<DensityRun>,
    pub summary: Vec<DensitySummary>,
}

/// Mean and standard error `s/√m` (zero for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Evaluates every kind in `kinds` on one train/valid/test split. The full
/// LCA fits are shared by the three Parzen kinds.
pub fn evaluate_split(
    train: &Dataset,
    valid: &Dataset,
    test: &Dataset,
    kinds: &[DensityKind],
    grid_rel: &[f64],
    cfg: &FitConfig,
) -> Result<Vec<(DensityKind, Selection, f64)>> {
    let tau = reg_scale(train);
    let grid: Vec<f64> = grid_rel.iter().map(|g| g * tau).collect();

    let mut fulls: Vec<Option<SymMatrix>> = Vec::new();
    if kinds.iter().any(|k| k.is_parzen()) {
        for &nu in &grid {
            match lca::fit(train, &with_ridges(cfg, nu, None)) {
                Ok(m) => fulls.push(Some(m.sigma)),
                Err(e) if e.is_numerical() => fulls.push(None),
                Err(e) => return Err(e),
            }
        }
    }

    let mut gaussian: Option<Selection> = None;
    let mut gaussian_sel = || -> Result<Selection> {
        if gaussian.is_none() {
            gaussian = Some(select_regularization(train, valid, DensityKind::Gaussian, &grid, cfg)?);
        }
        Ok(gaussian.clone().expect("just set"))
    };

    let mut out = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let sel = match kind {
            k if k.is_parzen() => {
                let mut slot = 0;
                select_with(&grid, valid, |nu| {
                    let full = fulls[slot].clone().ok_or(LcaError::DegenerateMetric);
                    slot += 1;
                    DensityModel::parzen_from_full(k, &full?, train.clone(), nu)
                })?
            }
            DensityKind::Gaussian => gaussian_sel()?,
            _ => {
                let ng = gaussian_sel()?.model.nu;
                select_with(&grid, valid, |nu| fit_density(kind, train, nu, Some(ng), cfg))?
            }
        };
        let t = test_nll(&sel.model, test)?;
        out.push((kind, sel, t));
    }
    Ok(out)
}

/// Repeats the protocol `runs` times on fresh seeded splits of `data` and
/// reports per-run results and the per-kind mean ± standard error, in the
/// order of `kinds`.
pub fn run_density_benchmark(
    data: &Dataset,
    protocol: &EvalProtocol,
    kinds: &[DensityKind],
    cfg: &FitConfig,
) -> Result<DensityReport> {
    protocol.validate(data.n())?;
    cfg.validate()?;
    let mut runs = Vec::new();
    for run in 0..protocol.runs {
        let (a, b, c) = protocol.split_indices(data.n(), run);
        let (train, valid, test) = (data.select(&a), data.select(&b), data.select(&c));
        for (kind, sel, t) in evaluate_split(&train, &valid, &test, kinds, &protocol.reg_grid, cfg)? {
            log::info!("run {run} {kind}: nu = {:.3e}, test NLL = {t:.4}", sel.model.nu);
            runs.push(DensityRun {
                kind,
                run,
                nu: sel.model.nu,
                valid_nll: sel.valid_nll,
                test_nll: t,
            });
        }
    }
    let summary = kinds
        .iter()
        .map(|&kind| {
            let v: Vec<f64> = runs.iter().filter(|r| r.kind == kind).map(|r| r.test_nll).collect();
            let (mean, stderr) = mean_stderr(&v);
            DensitySummary { kind, mean, stderr }
        })
        .collect();
    Ok(DensityReport { runs, summary })
}

/// Synthetic stand-in for image data: two non-Gaussian signal coordinates
/// (a noisy ring of radius 2) next to `noise_dims` Gaussian coordinates of
/// widely varying scale, rotated by a random orthogonal matrix and then
/// rescaled per output coordinate.
pub fn signal_noise_surrogate(n: usize, noise_dims: usize, seed: u64) -> Result<Dataset> {
    let d = 2 + noise_dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_scale = |k: usize| {
        if noise_dims <= 1 {
            1.0
        } else {
            0.3 * 10f64.powf(k as f64 / (noise_dims - 1) as f64)
        }
    };
    let mut z = DMatrix::<f64>::zeros(n, d);
    for i in 0..n {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let r = 2.0 + 0.1 * rng.sample::<f64, _>(StandardNormal);
        z[(i, 0)] = r * theta.cos();
        z[(i, 1)] = r * theta.sin();
        for k in 0..noise_dims {
            z[(i, 2 + k)] = noise_scale(k) * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    let mut scales: Vec<f64> = (0..d)
        .map(|k| 0.5 * 8f64.powf(k as f64 / (d - 1).max(1) as f64))
        .collect();
    scales.shuffle(&mut rng);
    let mixing = DMatrix::from_diagonal(&DVector::from_vec(scales)) * q;
    Dataset::from_matrix(&(z * mixing.transpose()))
}
