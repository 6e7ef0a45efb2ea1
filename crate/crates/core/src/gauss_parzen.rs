//! Product of a Gaussian and a Parzen estimator.
//!
//! An invertible linear map `B = (B_G, B_L)` splits the space: `B_Gᵀx` is
//! modelled by a unit-covariance Gaussian around `B_Gᵀμ`, `B_Lᵀx` by a Parzen
//! estimator with an identity kernel, and the two factors are independent:
//!
//! ```text
//! p(xᵢ) = |B Bᵀ|^½ · N(B_Gᵀxᵢ; B_Gᵀμ, I) · 1/(n-1) Σ_{j≠i} N(B_Lᵀxᵢ; B_Lᵀxⱼ, I)
//! ```
//!
//! EM on this model alternates the usual responsibilities with a closed-form
//! solve for `B`: given the global covariance `C_G` and the local covariance
//! `C_L`, the minimizer of
//!
//! ```text
//! tr(B_Gᵀ C_G B_G) + tr(B_Lᵀ C_L B_L) - log det(B_G B_Gᵀ + B_L B_Lᵀ)
//! ```
//!
//! comes from the eigendecomposition `U diag(e) Uᵀ` of `C_G^{-½} C_L C_G^{-½}`:
//! directions with `e ≥ 1` go to the Gaussian, the rest to the Parzen
//! estimator rescaled by `e^{-½}`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{LcaError, Result};
use crate::kernel::{cross_log_sums, local_pass, Neighbors};
use crate::lca::FitConfig;
use crate::matrix::{chol_lower, log_det, log_det_from_eig, sym_eig, SymMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Probe length of the reduced-dimension search.
pub const DEFAULT_PROBE_ITERS: usize = 40;

/// How the eigen-directions are divided between the two factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    /// Eigenvalues `≥ 1` go to the Gaussian: the global optimum.
    Threshold,
    /// Exactly this many Gaussian directions, taken from the largest
    /// eigenvalues: the optimum for a fixed split size.
    GaussianDims(usize),
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub b_g: DMatrix<f64>,
    pub b_l: DMatrix<f64>,
    /// Generalized eigenvalues, ascending.
    pub eigvals: DVector<f64>,
    pub objective_value: f64,
}

/// `tr(B_Gᵀ M₁ B_G) + tr(B_Lᵀ M₂ B_L) - log det(B_G B_Gᵀ + B_L B_Lᵀ)`.
pub fn split_objective(m1: &SymMatrix, m2: &SymMatrix, b_g: &DMatrix<f64>, b_l: &DMatrix<f64>) -> Result<f64> {
    let t1 = (b_g.transpose() * m1.as_matrix() * b_g).trace();
    let t2 = (b_l.transpose() * m2.as_matrix() * b_l).trace();
    let gram = SymMatrix::new(b_g * b_g.transpose() + b_l * b_l.transpose())?;
    let ld = log_det(&gram).map_err(|_| LcaError::DegenerateSplit)?;
    Ok(t1 + t2 - ld)
}

/// Closed-form minimizer of [`split_objective`] over all splits.
pub fn split_solve(m1: &SymMatrix, m2: &SymMatrix) -> Result<SplitResult> {
    split_solve_with(m1, m2, SplitRule::Threshold)
}

pub fn split_solve_with(m1: &SymMatrix, m2: &SymMatrix, rule: SplitRule) -> Result<SplitResult> {
    let d = m1.dim();
    if m2.dim() != d {
        return Err(LcaError::DimensionMismatch {
            expected: d,
            found: m2.dim(),
        });
    }
    let eig1 = sym_eig(m1)?;
    let logdet_m1 = log_det_from_eig(&eig1).map_err(|_| LcaError::UnboundedObjective)?;
    let i1 = SymMatrix::symmetrize(eig1.reconstruct_with(|v| v.powf(-0.5)));
    let w = m2.congruence(i1.as_matrix());
    let eig = sym_eig(&w)?;
    if eig.values.iter().any(|&e| !(e > 0.0)) {
        return Err(LcaError::UnboundedObjective);
    }

    let d2 = match rule {
        SplitRule::Threshold => eig.values.iter().filter(|&&e| e < 1.0).count(),
        SplitRule::GaussianDims(d1) => {
            if d1 > d {
                return Err(LcaError::InvalidInput(format!(
                    "{d1} Gaussian dimensions requested in dimension {d}"
                )));
            }
            d - d1
        }
    };

    let u_minus = eig.vectors.columns(0, d2).into_owned();
    let u_plus = eig.vectors.columns(d2, d - d2).into_owned();
    let mut scaled = u_minus;
    for j in 0..d2 {
        scaled.column_mut(j).scale_mut(eig.values[j].powf(-0.5));
    }
    let b_g = i1.as_matrix() * u_plus;
    let b_l = i1.as_matrix() * scaled;
    let objective_value = d as f64 + logdet_m1 + eig.values.iter().take(d2).map(|e| e.ln()).sum::<f64>();

    Ok(SplitResult {
        b_g,
        b_l,
        eigvals: eig.values,
        objective_value,
    })
}

/// A fitted Gaussian × Parzen model.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussParzenModel {
    /// `d × d₁`.
    pub b_g: DMatrix<f64>,
    /// `d × d₂`.
    pub b_l: DMatrix<f64>,
    pub mu: DVector<f64>,
    /// Generalized eigenvalues of the last split, ascending.
    pub eigvals: Vec<f64>,
    /// Upper bound on the leave-one-out NLL after each iteration.
    pub bound_trace: Vec<f64>,
    pub nu_global: f64,
    pub nu_local: f64,
    pub config: FitConfig,
}

impl GaussParzenModel {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn d1(&self) -> usize {
        self.b_g.ncols()
    }

    pub fn d2(&self) -> usize {
        self.b_l.ncols()
    }

    /// `(B_G, B_L)` as one `d × d` matrix.
    pub fn full_transform(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut b = DMatrix::zeros(d, d);
        b.columns_mut(0, self.d1()).copy_from(&self.b_g);
        b.columns_mut(self.d1(), self.d2()).copy_from(&self.b_l);
        b
    }

    /// `½ log det(B Bᵀ) = log |det B|`.
    pub fn log_abs_det(&self) -> Result<f64> {
        let b = self.full_transform();
        let gram = SymMatrix::new(&b * b.transpose())?;
        Ok(0.5 * log_det(&gram).map_err(|_| LcaError::DegenerateSplit)?)
    }

    /// Checks shapes and invertibility.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.b_g.nrows() != d || self.b_l.nrows() != d {
            return Err(LcaError::DimensionMismatch {
                expected: d,
                found: self.b_g.nrows().max(self.b_l.nrows()),
            });
        }
        if self.d1() + self.d2() != d {
            return Err(LcaError::DimensionMismatch {
                expected: d,
                found: self.d1() + self.d2(),
            });
        }
        let ld = self.log_abs_det()?;
        if !ld.is_finite() {
            return Err(LcaError::DegenerateSplit);
        }
        Ok(())
    }

    /// Projection onto the Parzen directions, `B_Lᵀx`.
    pub fn parzen_coords(&self, data: &Dataset) -> Result<Dataset> {
        if self.d2() == 0 {
            return Err(LcaError::NoParzenDimensions);
        }
        data.map_linear(&self.b_l.transpose())
    }

    /// `Bᵀx`, Gaussian coordinates first.
    pub fn full_coords(&self, data: &Dataset) -> Result<Dataset> {
        data.map_linear(&self.full_transform().transpose())
    }
}

fn check_dim(data: &Dataset, model: &GaussParzenModel) -> Result<()> {
    if data.d() != model.dim() {
        return Err(LcaError::DimensionMismatch {
            expected: model.dim(),
            found: data.d(),
        });
    }
    Ok(())
}

/// `½‖B_Gᵀ(xᵢ - μ)‖²` for each point.
fn gaussian_terms(data: &Dataset, model: &GaussParzenModel) -> Result<Vec<f64>> {
    let centered = data.translate((-&model.mu).as_slice())?;
    let g = centered.map_linear(&model.b_g.transpose())?;
    Ok(g.rows().map(|r| 0.5 * r.iter().map(|v| v * v).sum::<f64>()).collect())
}

/// Negative log-likelihood (summed over points) of the product density.
///
/// With `leave_one_out`, point `i` is scored against the other `n-1` Parzen
/// centers; otherwise against all `n`, itself included.
pub fn gp_nll(data: &Dataset, model: &GaussParzenModel, leave_one_out: bool) -> Result<f64> {
    check_dim(data, model)?;
    let n = data.n();
    if leave_one_out && n < 2 {
        return Err(LcaError::TooFewPoints { n, min: 2 });
    }
    let log_abs_det = model.log_abs_det()?;
    let gauss = gaussian_terms(data, model)?;
    let y = data.map_linear(&model.b_l.transpose())?;
    let constant = 0.5 * data.d() as f64 * LN_2PI - log_abs_det;

    let parzen: f64 = if leave_one_out {
        let all: Vec<usize> = (0..n).collect();
        let stats = local_pass(data, &y, &all, Neighbors::AllOthers, false);
        stats.log_sum - n as f64 * ((n - 1) as f64).ln()
    } else {
        cross_log_sums(&y, &y).iter().sum::<f64>() - n as f64 * (n as f64).ln()
    };
    Ok(n as f64 * constant + gauss.iter().sum::<f64>() - parzen)
}

/// Log density of each `query` row, with `support` as the Parzen centers
/// (uniform weights `1/|support|`).
pub fn gp_log_densities(query: &Dataset, support: &Dataset, model: &GaussParzenModel) -> Result<Vec<f64>> {
    check_dim(query, model)?;
    check_dim(support, model)?;
    support.require_points(1)?;
    let log_abs_det = model.log_abs_det()?;
    let gauss = gaussian_terms(query, model)?;
    let bt = model.b_l.transpose();
    let yq = query.map_linear(&bt)?;
    let ys = support.map_linear(&bt)?;
    let lse = cross_log_sums(&yq, &ys);
    let constant = -0.5 * query.d() as f64 * LN_2PI + log_abs_det - (support.n() as f64).ln();
    Ok(gauss.iter().zip(lse).map(|(g, l)| constant - g + l).collect())
}

/// Variational upper bound on the leave-one-out NLL at `model`, using the
/// E-step responsibilities for the model's own Parzen metric. Equal to
/// [`gp_nll`] with `leave_one_out` when both ridges are zero.
pub fn gp_bound(data: &Dataset, model: &GaussParzenModel) -> Result<f64> {
    check_dim(data, model)?;
    let fitter = Fitter::new(data, model.nu_global, model.nu_local, Some(model.mu.clone()))?;
    let (c_l, entropy) = fitter.local_covariance(&model.b_l);
    let objective = split_objective(&fitter.c_g, &c_l, &model.b_g, &model.b_l)?;
    Ok(fitter.bound(objective, entropy))
}

/// Shared state of one Gauss–Parzen fit. `C_G` is computed once and held
/// fixed across iterations.
struct Fitter<'a> {
    data: &'a Dataset,
    c_g: SymMatrix,
    mu: DVector<f64>,
    nu_global: f64,
    nu_local: f64,
    locations: Vec<usize>,
}

impl<'a> Fitter<'a> {
    fn new(data: &'a Dataset, nu_global: f64, nu_local: f64, mu: Option<DVector<f64>>) -> Result<Self> {
        data.require_points(2)?;
        let mu = mu.unwrap_or_else(|| data.mean());
        let centered = data.translate((-&mu).as_slice())?;
        let m = centered.to_matrix();
        let c_g = SymMatrix::symmetrize(m.transpose() * m / data.n() as f64).add_identity(nu_global);
        Ok(Self {
            data,
            c_g,
            mu,
            nu_global,
            nu_local,
            locations: (0..data.n()).collect(),
        })
    }

    fn from_config(data: &'a Dataset, cfg: &FitConfig) -> Result<Self> {
        data.require_points(2)?;
        cfg.validate()?;
        Self::new(data, cfg.nu_global_for(data), cfg.nu_for(data), None)
    }

    /// All dimensions assigned to the Parzen factor: `B_L = chol(C_G⁻¹)`.
    fn initial_b_l(&self) -> Result<DMatrix<f64>> {
        let eig = sym_eig(&self.c_g)?;
        if eig.values.iter().any(|&v| !(v > 0.0)) {
            return Err(LcaError::DegenerateMetric);
        }
        let inv = SymMatrix::symmetrize(eig.reconstruct_with(|v| 1.0 / v));
        chol_lower(&inv)
    }

    /// E-step for Parzen metric `B_L B_Lᵀ`, returning `C_L` (with ridge) and
    /// `Σ λ log λ`.
    fn local_covariance(&self, b_l: &DMatrix<f64>) -> (SymMatrix, f64) {
        let y = self
            .data
            .map_linear(&b_l.transpose())
            .expect("B_L rows match data dimension");
        let stats = local_pass(self.data, &y, &self.locations, Neighbors::AllOthers, true);
        let scatter = stats.scatter.expect("scatter requested");
        let c_l = SymMatrix::symmetrize(scatter / self.data.n() as f64).add_identity(self.nu_local);
        (c_l, stats.entropy)
    }

    fn bound(&self, split_objective: f64, entropy: f64) -> f64 {
        let n = self.data.n() as f64;
        let d = self.data.d() as f64;
        0.5 * n * split_objective + 0.5 * n * d * LN_2PI + n * (n - 1.0).ln() + entropy
    }

    fn model(&self, split: SplitResult, bound_trace: Vec<f64>, cfg: &FitConfig) -> GaussParzenModel {
        GaussParzenModel {
            b_g: split.b_g,
            b_l: split.b_l,
            mu: self.mu.clone(),
            eigvals: split.eigvals.iter().copied().collect(),
            bound_trace,
            nu_global: self.nu_global,
            nu_local: self.nu_local,
            config: cfg.clone(),
        }
    }

    /// Iterates E-step and split until the bound stalls or the trace holds
    /// `max_iter` entries, starting from the Parzen block `b_l`.
    fn run(&self, b_l: DMatrix<f64>, rule: SplitRule, max_iter: usize, cfg: &FitConfig) -> Result<GaussParzenModel> {
        self.iterate(b_l, Vec::new(), None, rule, max_iter, cfg)
    }

    /// Continues a previous run of the same fitter, extending its trace.
    fn resume(
        &self,
        prior: &GaussParzenModel,
        rule: SplitRule,
        max_iter: usize,
        cfg: &FitConfig,
    ) -> Result<GaussParzenModel> {
        if prior.bound_trace.len() >= max_iter || Self::converged(&prior.bound_trace, cfg.rel_tol) {
            return Ok(prior.clone());
        }
        self.iterate(
            prior.b_l.clone(),
            prior.bound_trace.clone(),
            Some(prior),
            rule,
            max_iter,
            cfg,
        )
    }

    fn iterate(
        &self,
        mut b_l: DMatrix<f64>,
        mut trace: Vec<f64>,
        prior: Option<&GaussParzenModel>,
        rule: SplitRule,
        max_iter: usize,
        cfg: &FitConfig,
    ) -> Result<GaussParzenModel> {
        let mut last: Option<SplitResult> = None;
        while trace.len() < max_iter {
            let (c_l, entropy) = self.local_covariance(&b_l);
            let split = split_solve_with(&self.c_g, &c_l, rule)?;
            let bound = self.bound(split.objective_value, entropy);
            let prev = trace.last().copied();
            trace.push(bound);
            b_l = split.b_l.clone();
            last = Some(split);
            if let Some(prev) = prev {
                let decrease = (prev - bound) / prev.abs().max(f64::MIN_POSITIVE);
                if decrease < -1e-8 {
                    log::warn!("Gauss-Parzen bound increased from {prev} to {bound}");
                }
                if decrease < cfg.rel_tol {
                    break;
                }
            }
        }
        match last {
            Some(split) => Ok(self.model(split, trace, cfg)),
            None => Ok(prior.expect("at least one iteration runs on a fresh start").clone()),
        }
    }

    fn converged(trace: &[f64], rel_tol: f64) -> bool {
        match trace {
            [.., a, b] => (a - b) / a.abs().max(f64::MIN_POSITIVE) < rel_tol,
            _ => false,
        }
    }
}

/// Fits the Gaussian × Parzen model by EM, starting with every dimension in
/// the Parzen factor and `C_G = Cov + ν_G I` held fixed. Stops when the
/// relative decrease of the bound falls below `cfg.rel_tol` or after
/// `cfg.max_iter` iterations.
pub fn fit_gauss(data: &Dataset, cfg: &FitConfig) -> Result<GaussParzenModel> {
    fit_gauss_rule(data, cfg, SplitRule::Threshold)
}

/// [`fit_gauss`] with an explicit split rule.
pub fn fit_gauss_rule(data: &Dataset, cfg: &FitConfig, rule: SplitRule) -> Result<GaussParzenModel> {
    let fitter = Fitter::from_config(data, cfg)?;
    let b_l = fitter.initial_b_l()?;
    fitter.run(b_l, rule, cfg.max_iter, cfg)
}

/// [`fit_gauss`] followed by a search over the number of Gaussian
/// dimensions, with the default probe length.
pub fn fit_gauss_red(data: &Dataset, cfg: &FitConfig) -> Result<GaussParzenModel> {
    fit_gauss_red_with(data, cfg, DEFAULT_PROBE_ITERS)
}

/// Reduced-dimension search:
///
/// 1. run the plain fit for `probe_iters` iterations;
/// 2. for a candidate number of Gaussian dimensions `d₁`, move the Parzen
///    columns whose eigenvalues are closest to one into the Gaussian block
///    and rerun `probe_iters` iterations with `d₁` held fixed;
/// 3. bisect over `d₁ ∈ [incumbent, d]`, scoring candidates by leave-one-out
///    NLL, until a local optimum is reached;
/// 4. run the chosen split to convergence. The result is kept only if it
///    beats the incumbent run to convergence, which is exactly
///    [`fit_gauss`].
pub fn fit_gauss_red_with(data: &Dataset, cfg: &FitConfig, probe_iters: usize) -> Result<GaussParzenModel> {
    if probe_iters == 0 {
        return Err(LcaError::InvalidInput("probe_iters must be positive".into()));
    }
    let fitter = Fitter::from_config(data, cfg)?;
    let d = data.d();
    let probe_len = probe_iters.min(cfg.max_iter);
    let probe = fitter.run(fitter.initial_b_l()?, SplitRule::Threshold, probe_len, cfg)?;
    let d0 = probe.d1();

    let mut scored: BTreeMap<usize, (f64, GaussParzenModel)> = BTreeMap::new();
    scored.insert(d0, (gp_nll(data, &probe, true)?, probe.clone()));

    let score = |d1: usize, scored: &mut BTreeMap<usize, (f64, GaussParzenModel)>| -> Result<f64> {
        if let Some((s, _)) = scored.get(&d1) {
            return Ok(*s);
        }
        // Parzen columns are in ascending eigenvalue order; the last ones are
        // the most Gaussian-like.
        let keep = d - d1;
        let b_l = probe.b_l.columns(0, keep).into_owned();
        let m = fitter.run(b_l, SplitRule::GaussianDims(d1), probe_len, cfg)?;
        let s = gp_nll(data, &m, true)?;
        scored.insert(d1, (s, m));
        Ok(s)
    };

    let (mut lo, mut hi) = (d0, d);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if score(mid + 1, &mut scored)? < score(mid, &mut scored)? {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let best = if scored[&lo].0 < scored[&d0].0 { lo } else { d0 };

    let incumbent = fitter.resume(&probe, SplitRule::Threshold, cfg.max_iter, cfg)?;
    if best == d0 {
        return Ok(incumbent);
    }

    let (_, cand) = &scored[&best];
    let cand = fitter.resume(cand, SplitRule::GaussianDims(best), cfg.max_iter, cfg)?;
    if gp_nll(data, &cand, true)? < gp_nll(data, &incumbent, true)? {
        Ok(cand)
    } else {
        Ok(incumbent)
    }
}

/// Resumable entry point for the stochastic variant: one split of `C_G`
/// against a given local covariance.
pub(crate) struct GaussSetup<'a> {
    fitter: Fitter<'a>,
}

impl<'a> GaussSetup<'a> {
    pub(crate) fn new(data: &'a Dataset, cfg: &FitConfig) -> Result<Self> {
        Ok(Self {
            fitter: Fitter::from_config(data, cfg)?,
        })
    }

    pub(crate) fn initial_b_l(&self) -> Result<DMatrix<f64>> {
        self.fitter.initial_b_l()
    }

    pub(crate) fn nu_local(&self) -> f64 {
        self.fitter.nu_local
    }

    pub(crate) fn split(&self, c_l: &SymMatrix) -> Result<SplitResult> {
        split_solve(&self.fitter.c_g, c_l)
    }

    pub(crate) fn model(&self, split: SplitResult, trace: Vec<f64>, cfg: &FitConfig) -> GaussParzenModel {
        self.fitter.model(split, trace, cfg)
    }
}
