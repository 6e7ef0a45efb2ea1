//! Local component analysis: EM on the leave-one-out Parzen log-likelihood.
//!
//! The density is a Parzen estimator with a single shared Gaussian kernel of
//! covariance `Σ`. Every point is scored against all the others
//!
//! ```text
//! L(Σ) = -Σᵢ log[ 1/(n-1) Σ_{j≠i} N(xᵢ; xⱼ, Σ) ]
//! ```
//!
//! and `Σ` is learned by alternating two closed-form updates:
//!
//! - E-step: `λᵢⱼ ∝ N(xᵢ; xⱼ, Σ)` over `j ≠ i`, `λᵢᵢ = 0`;
//! - M-step: `Σ = (1/n) Σᵢⱼ λᵢⱼ (xᵢ - xⱼ)(xᵢ - xⱼ)ᵀ (+ νI)`, the average of the
//!   local covariances.
//!
//! Without regularization each iteration can only decrease `L`. Stopping
//! after a single iteration from the global covariance gives Manifold Parzen
//! Windows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LcaError, Result};
use crate::kernel::{local_pass, normalize_logits, Neighbors};
use crate::matrix::{precision_factor, SymMatrix};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Fitting controls shared by every EM variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Stop once the relative decrease of the objective falls below this.
    pub rel_tol: f64,
    /// Ridge `ν` added to every local covariance. `None` picks
    /// [`default_nu`].
    pub reg_nu: Option<f64>,
    /// Ridge on the global covariance of the Gauss–Parzen model. `None`
    /// reuses the local value.
    pub reg_nu_global: Option<f64>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_tol: 1e-7,
            reg_nu: None,
            reg_nu_global: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.reg_nu = Some(nu);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(LcaError::InvalidInput("max_iter must be positive".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(LcaError::InvalidInput("rel_tol must be positive".into()));
        }
        for nu in [self.reg_nu, self.reg_nu_global].into_iter().flatten() {
            if !(nu >= 0.0) || !nu.is_finite() {
                return Err(LcaError::InvalidInput(format!(
                    "regularization must be finite and nonnegative, got {nu}"
                )));
            }
        }
        Ok(())
    }

    pub fn nu_for(&self, data: &Dataset) -> f64 {
        self.reg_nu.unwrap_or_else(|| default_nu(data))
    }

    pub fn nu_global_for(&self, data: &Dataset) -> f64 {
        self.reg_nu_global.unwrap_or_else(|| self.nu_for(data))
    }
}

/// `1e-6 · trace(Cov)/d`: negligible unless the data is nearly degenerate.
pub fn default_nu(data: &Dataset) -> f64 {
    if data.d() == 0 {
        return 0.0;
    }
    1e-6 * data.covariance().trace() / data.d() as f64
}

/// Row-stochastic E-step weights with an exactly zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    lam: DMatrix<f64>,
}

impl Responsibilities {
    /// Validates `lam`: square, zero diagonal, entries in `[0, 1]`, rows
    /// summing to one within 1e-12.
    pub fn new(lam: DMatrix<f64>) -> Result<Self> {
        if !lam.is_square() {
            return Err(LcaError::DimensionMismatch {
                expected: lam.nrows(),
                found: lam.ncols(),
            });
        }
        let n = lam.nrows();
        for i in 0..n {
            if lam[(i, i)] != 0.0 {
                return Err(LcaError::InvalidInput(format!(
                    "responsibility diagonal must be zero (row {i})"
                )));
            }
            let mut s = 0.0;
            for j in 0..n {
                let v = lam[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(LcaError::InvalidInput(format!(
                        "responsibility ({i}, {j}) = {v} outside [0, 1]"
                    )));
                }
                s += v;
            }
            if (s - 1.0).abs() > 1e-12 {
                return Err(LcaError::InvalidInput(format!("responsibility row {i} sums to {s}")));
            }
        }
        Ok(Self { lam })
    }

    /// `1/(n-1)` off the diagonal.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(LcaError::TooFewPoints { n, min: 2 });
        }
        let w = 1.0 / (n - 1) as f64;
        Self::new(DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { w }))
    }

    pub fn n(&self) -> usize {
        self.lam.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lam[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.lam
    }
}

/// A fitted metric: the shared kernel covariance and its precision factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    pub sigma: SymMatrix,
    /// Symmetric `F` with `FᵀF = Σ⁻¹`.
    pub precision_factor: DMatrix<f64>,
    /// Leave-one-out NLL at `sigma`.
    pub loo_nll: f64,
    /// Objective before the first update and after each one.
    pub trace: Vec<f64>,
    pub nu: f64,
    pub config: FitConfig,
}

impl MetricModel {
    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    /// Number of M-step updates applied.
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

/// Metric-transformed rows `F·xᵢ` plus `log det Σ`.
fn kernel_coords(data: &Dataset, sigma: &SymMatrix) -> Result<(Dataset, f64)> {
    if sigma.dim() != data.d() {
        return Err(LcaError::DimensionMismatch {
            expected: data.d(),
            found: sigma.dim(),
        });
    }
    let (f, logdet) = precision_factor(sigma)?;
    Ok((data.map_linear(&f)?, logdet))
}

/// Per-point normalizer shared by every leave-one-out Gaussian term:
/// `log(n-1) + (d/2)·log 2π + ½·log det Σ`.
fn loo_constant(n: usize, d: usize, logdet: f64) -> f64 {
    ((n - 1) as f64).ln() + 0.5 * d as f64 * LN_2PI + 0.5 * logdet
}

/// One E-step plus M-step at `sigma`: returns the leave-one-out NLL at
/// `sigma` and the updated covariance (with `nu·I` added).
pub fn em_step(data: &Dataset, sigma: &SymMatrix, nu: f64) -> Result<(f64, SymMatrix)> {
    data.require_points(2)?;
    let (y, logdet) = kernel_coords(data, sigma)?;
    let all: Vec<usize> = (0..data.n()).collect();
    let stats = local_pass(data, &y, &all, Neighbors::AllOthers, true);
    let n = data.n();
    let nll = n as f64 * loo_constant(n, data.d(), logdet) - stats.log_sum;
    let scatter = stats.scatter.expect("scatter requested");
    let next = SymMatrix::symmetrize(scatter / n as f64).add_identity(nu);
    Ok((nll, next))
}

/// Leave-one-out negative log-likelihood of the Parzen estimator with kernel
/// covariance `sigma`.
pub fn loo_nll(data: &Dataset, sigma: &SymMatrix) -> Result<f64> {
    data.require_points(2)?;
    let (y, logdet) = kernel_coords(data, sigma)?;
    let all: Vec<usize> = (0..data.n()).collect();
    let stats = local_pass(data, &y, &all, Neighbors::AllOthers, false);
    let n = data.n();
    Ok(n as f64 * loo_constant(n, data.d(), logdet) - stats.log_sum)
}

/// Optimal responsibilities for a fixed `sigma`.
pub fn e_step(data: &Dataset, sigma: &SymMatrix) -> Result<Responsibilities> {
    data.require_points(2)?;
    let (y, _) = kernel_coords(data, sigma)?;
    let n = data.n();
    let mut lam = DMatrix::zeros(n, n);
    let mut logits = Vec::with_capacity(n - 1);
    for i in 0..n {
        logits.clear();
        let yi = y.row(i);
        for j in (0..n).filter(|&j| j != i) {
            let q: f64 = yi.iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            logits.push(-0.5 * q);
        }
        normalize_logits(&mut logits);
        for (t, j) in (0..n).filter(|&j| j != i).enumerate() {
            lam[(i, j)] = logits[t];
        }
    }
    Ok(Responsibilities { lam })
}

/// Covariance minimizing the variational bound for fixed responsibilities:
/// `(1/n) Σᵢⱼ λᵢⱼ (xᵢ - xⱼ)(xᵢ - xⱼ)ᵀ + ν·I`.
pub fn m_step(data: &Dataset, lam: &Responsibilities, reg_nu: f64) -> Result<SymMatrix> {
    let n = data.n();
    if lam.n() != n {
        return Err(LcaError::DimensionMismatch {
            expected: n,
            found: lam.n(),
        });
    }
    if !(reg_nu >= 0.0) {
        return Err(LcaError::InvalidInput("reg_nu must be nonnegative".into()));
    }
    let x = data.centered().to_matrix();
    let l = lam.as_matrix();
    // Σᵢⱼ λᵢⱼ (xᵢ-xⱼ)(xᵢ-xⱼ)ᵀ = Σₖ aₖ xₖxₖᵀ - (XᵀΛX + XᵀΛᵀX)
    let mut weighted = x.clone();
    for k in 0..n {
        let a = l.row(k).sum() + l.column(k).sum();
        weighted.row_mut(k).scale_mut(a);
    }
    let cross = x.transpose() * (l * &x);
    let scatter = x.transpose() * weighted - &cross - cross.transpose();
    Ok(SymMatrix::symmetrize(scatter / n as f64).add_identity(reg_nu))
}

/// The Jensen upper bound on [`loo_nll`] for arbitrary responsibilities:
///
/// ```text
/// n·log(n-1) - Σᵢ Σ_{j≠i} λᵢⱼ log N(xᵢ; xⱼ, Σ) + Σᵢ Σ_{j≠i} λᵢⱼ log λᵢⱼ
/// ```
///
/// It touches `loo_nll` exactly when `lam` is the E-step output at `sigma`.
pub fn jensen_bound(data: &Dataset, lam: &Responsibilities, sigma: &SymMatrix) -> Result<f64> {
    data.require_points(2)?;
    let n = data.n();
    if lam.n() != n {
        return Err(LcaError::DimensionMismatch {
            expected: n,
            found: lam.n(),
        });
    }
    let (y, logdet) = kernel_coords(data, sigma)?;
    let norm = 0.5 * data.d() as f64 * LN_2PI + 0.5 * logdet;
    let mut acc = n as f64 * ((n - 1) as f64).ln();
    for i in 0..n {
        for j in 0..n {
            let l = lam.get(i, j);
            if i == j || l == 0.0 {
                continue;
            }
            let q: f64 = y.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            let log_n = -norm - 0.5 * q;
            acc += l * (l.ln() - log_n);
        }
    }
    Ok(acc)
}

/// Runs EM from `Cov(data) + νI` until the relative decrease of the
/// leave-one-out NLL drops below `cfg.rel_tol` or `cfg.max_iter` updates
/// have been applied.
pub fn fit(data: &Dataset, cfg: &FitConfig) -> Result<MetricModel> {
    data.require_points(2)?;
    cfg.validate()?;
    let nu = cfg.nu_for(data);
    let sigma0 = data.covariance().add_identity(nu);
    fit_from(data, cfg, sigma0)
}

/// [`fit`] from an explicit initial covariance.
pub fn fit_from(data: &Dataset, cfg: &FitConfig, sigma0: SymMatrix) -> Result<MetricModel> {
    data.require_points(2)?;
    cfg.validate()?;
    let nu = cfg.nu_for(data);

    let mut sigma = sigma0;
    let (mut nll, mut next) = em_step(data, &sigma, nu)?;
    let mut trace = vec![nll];
    for _ in 0..cfg.max_iter {
        let (new_nll, new_next) = em_step(data, &next, nu)?;
        sigma = next;
        next = new_next;
        trace.push(new_nll);
        let decrease = (nll - new_nll) / nll.abs().max(f64::MIN_POSITIVE);
        if decrease < -1e-8 {
            log::warn!(
                "leave-one-out NLL increased from {nll} to {new_nll} (nu = {nu}); \
                 monotonicity is only guaranteed without regularization"
            );
        }
        nll = new_nll;
        if decrease < cfg.rel_tol {
            break;
        }
    }

    let (f, _) = precision_factor(&sigma)?;
    Ok(MetricModel {
        sigma,
        precision_factor: f,
        loo_nll: nll,
        trace,
        nu,
        config: cfg.clone(),
    })
}

/// Wraps a given covariance as a model, scoring it on `data`.
pub fn model_from_sigma(data: &Dataset, sigma: SymMatrix, nu: f64, cfg: &FitConfig) -> Result<MetricModel> {
    let nll = loo_nll(data, &sigma)?;
    let (f, _) = precision_factor(&sigma)?;
    Ok(MetricModel {
        sigma,
        precision_factor: f,
        loo_nll: nll,
        trace: vec![nll],
        nu,
        config: cfg.clone(),
    })
}

/// Maps every row through the precision factor, so that Euclidean distances
/// of the output are Mahalanobis distances under `Σ`.
pub fn transform(data: &Dataset, model: &MetricModel) -> Result<Dataset> {
    if data.d() != model.dim() {
        return Err(LcaError::DimensionMismatch {
            expected: model.dim(),
            found: data.d(),
        });
    }
    data.map_linear(&model.precision_factor)
}

/// Log normalizer of a `d`-variate Gaussian with `log det Σ = logdet`.
pub(crate) fn gaussian_log_norm(d: usize, logdet: f64) -> f64 {
    -0.5 * d as f64 * LN_2PI - 0.5 * logdet
}
