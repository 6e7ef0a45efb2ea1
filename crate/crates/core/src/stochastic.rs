//! Large-scale variant: discounted minibatch averaging of the local
//! covariance and neighbor subsampling.
//!
//! Each update draws `B` locations without replacement and, for every
//! location, `N` neighbors without replacement from the other points. The
//! responsibilities are normalized within that neighbor subset and the
//! resulting local covariance estimate `F` is folded into a running average
//!
//! ```text
//! C_L ← w·C_L + (1 - w)·F,   w = γ^(B/n)
//! ```
//!
//! so that `γ` is the weight left on the old covariance after one full pass.
//! The metric (or the Gauss–Parzen split) is refreshed after every update.
//!
//! The random stream is consumed in a fixed order: the location set first,
//! then one neighbor set per location in ascending location order. Both sets
//! are sorted before use, which makes `(γ = 0, B = n, N = n - 1)` reproduce
//! batch EM bit for bit.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LcaError, Result};
use crate::gauss_parzen::{gp_bound, GaussParzenModel, GaussSetup};
use crate::kernel::{local_pass, Neighbors};
use crate::lca::{model_from_sigma, FitConfig, MetricModel};
use crate::matrix::{precision_factor, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticConfig {
    /// Weight left on the old covariance after one pass, in `[0, 1)`.
    pub gamma: f64,
    /// Locations per update.
    pub batch_size: usize,
    /// Neighbors per location.
    pub neigh_size: usize,
    pub seed: u64,
    pub epochs: usize,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        Self {
            gamma: 0.6,
            batch_size: 100,
            neigh_size: 3000,
            seed: 0,
            epochs: 20,
        }
    }
}

impl StochasticConfig {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if self.batch_size == 0 {
            return Err(LcaError::InvalidInput("batch_size must be positive".into()));
        }
        if self.neigh_size == 0 {
            return Err(LcaError::InvalidInput("neigh_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(LcaError::InvalidInput("epochs must be positive".into()));
        }
        Ok(())
    }

    /// `(B, N)` clamped to a dataset of `n` points.
    pub fn clamped(&self, n: usize) -> (usize, usize) {
        (self.batch_size.min(n), self.neigh_size.min(n.saturating_sub(1)))
    }

    /// Updates per epoch, `⌈n / B⌉`.
    pub fn updates_per_epoch(&self, n: usize) -> usize {
        let (b, _) = self.clamped(n);
        n.div_ceil(b.max(1))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(LcaError::InvalidInput(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    Ok(())
}

/// Running local covariance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CovAccumulator {
    c_l: Option<SymMatrix>,
}

impl CovAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_initialized(&self) -> bool {
        self.c_l.is_some()
    }

    pub fn covariance(&self) -> Option<&SymMatrix> {
        self.c_l.as_ref()
    }
}

/// Folds `fresh` into the running average with weight `γ^(B/n)` on the old
/// value. The first call stores `fresh` unchanged.
pub fn discounted_update(
    acc: CovAccumulator,
    fresh: SymMatrix,
    gamma: f64,
    batch_size: usize,
    n: usize,
) -> Result<CovAccumulator> {
    check_gamma(gamma)?;
    if batch_size == 0 || n == 0 {
        return Err(LcaError::InvalidInput("batch_size and n must be positive".into()));
    }
    let c_l = match acc.c_l {
        None => fresh,
        Some(old) => {
            if old.dim() != fresh.dim() {
                return Err(LcaError::DimensionMismatch {
                    expected: old.dim(),
                    found: fresh.dim(),
                });
            }
            let w = gamma.powf(batch_size as f64 / n as f64);
            SymMatrix::symmetrize(old.into_matrix() * w + fresh.into_matrix() * (1.0 - w))
        }
    };
    Ok(CovAccumulator { c_l: Some(c_l) })
}

/// Draws `b` sorted locations out of `n`.
pub fn sample_locations<R: Rng + ?Sized>(rng: &mut R, n: usize, b: usize) -> Vec<usize> {
    let mut v = index::sample(rng, n, b.min(n)).into_vec();
    v.sort_unstable();
    v
}

/// Draws `k` sorted neighbors of `i` out of the other `n - 1` points.
pub fn sample_neighbors<R: Rng + ?Sized>(rng: &mut R, n: usize, i: usize, k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = index::sample(rng, n - 1, k.min(n - 1))
        .into_iter()
        .map(|j| if j >= i { j + 1 } else { j })
        .collect();
    v.sort_unstable();
    v
}

/// Subsampled local covariance in kernel coordinates `y`, without ridge.
fn subsampled_cov<R: Rng + ?Sized>(
    data: &Dataset,
    y: &Dataset,
    locations: &[usize],
    neigh: usize,
    rng: &mut R,
) -> Result<SymMatrix> {
    if locations.is_empty() {
        return Err(LcaError::InvalidInput("no locations sampled".into()));
    }
    if neigh == 0 {
        return Err(LcaError::InvalidInput("neighbors per location must be positive".into()));
    }
    let n = data.n();
    if let Some(&bad) = locations.iter().find(|&&i| i >= n) {
        return Err(LcaError::InvalidInput(format!("location {bad} out of range")));
    }
    let lists: Vec<Vec<usize>> = locations.iter().map(|&i| sample_neighbors(rng, n, i, neigh)).collect();
    let stats = local_pass(data, y, locations, Neighbors::Lists(&lists), true);
    let scatter = stats.scatter.expect("scatter requested");
    Ok(SymMatrix::symmetrize(scatter / locations.len() as f64))
}

/// Local covariance estimated from the given `locations` and `neigh`
/// freshly drawn neighbors per location, with responsibilities under the
/// kernel `sigma_current` normalized inside each neighbor subset:
/// `(1/nᵢ) Σᵢ Σⱼ λᵢⱼ (xᵢ - xⱼ)(xᵢ - xⱼ)ᵀ`.
pub fn minibatch_cov<R: Rng + ?Sized>(
    data: &Dataset,
    locations: &[usize],
    neigh: usize,
    sigma_current: &SymMatrix,
    rng: &mut R,
) -> Result<SymMatrix> {
    data.require_points(2)?;
    if sigma_current.dim() != data.d() {
        return Err(LcaError::DimensionMismatch {
            expected: data.d(),
            found: sigma_current.dim(),
        });
    }
    let (f, _) = precision_factor(sigma_current)?;
    let y = data.map_linear(&f)?;
    subsampled_cov(data, &y, locations, neigh, rng)
}

/// Stochastic LCA from `Cov + νI`. The ridge is carried by every fresh
/// estimate, so the running average always holds at least `νI`.
///
/// `trace` of the returned model holds only the final leave-one-out NLL:
/// evaluating it along the way would cost a full pass per update.
pub fn fit_stochastic(data: &Dataset, cfg: &FitConfig, scfg: &StochasticConfig) -> Result<MetricModel> {
    fit_stochastic_monitored(data, cfg, scfg, |_| {})
}

/// [`fit_stochastic`], handing the running `C_L` to `on_update` after every
/// update.
pub fn fit_stochastic_monitored(
    data: &Dataset,
    cfg: &FitConfig,
    scfg: &StochasticConfig,
    mut on_update: impl FnMut(&SymMatrix),
) -> Result<MetricModel> {
    data.require_points(2)?;
    cfg.validate()?;
    scfg.validate()?;
    let n = data.n();
    let nu = cfg.nu_for(data);
    let (b, neigh) = scfg.clamped(n);
    let mut rng = ChaCha8Rng::seed_from_u64(scfg.seed);

    let mut sigma = data.covariance().add_identity(nu);
    let mut acc = CovAccumulator::new();
    for _ in 0..scfg.epochs {
        for _ in 0..scfg.updates_per_epoch(n) {
            let locations = sample_locations(&mut rng, n, b);
            let fresh = minibatch_cov(data, &locations, neigh, &sigma, &mut rng)?.add_identity(nu);
            acc = discounted_update(acc, fresh, scfg.gamma, b, n)?;
            sigma = acc.covariance().expect("initialized").clone();
            on_update(&sigma);
        }
    }
    model_from_sigma(data, sigma, nu, cfg)
}

/// Stochastic version of the Gaussian × Parzen fit: the running average
/// replaces the batch local covariance and the split is redone after every
/// update. `bound_trace` holds the bound at the final split only.
pub fn fit_gauss_stochastic(data: &Dataset, cfg: &FitConfig, scfg: &StochasticConfig) -> Result<GaussParzenModel> {
    data.require_points(2)?;
    cfg.validate()?;
    scfg.validate()?;
    let setup = GaussSetup::new(data, cfg)?;
    let n = data.n();
    let (b, neigh) = scfg.clamped(n);
    let mut rng = ChaCha8Rng::seed_from_u64(scfg.seed);

    let mut b_l: DMatrix<f64> = setup.initial_b_l()?;
    let mut acc = CovAccumulator::new();
    let mut last = None;
    for _ in 0..scfg.epochs {
        for _ in 0..scfg.updates_per_epoch(n) {
            let y = data.map_linear(&b_l.transpose())?;
            let locations = sample_locations(&mut rng, n, b);
            let fresh = subsampled_cov(data, &y, &locations, neigh, &mut rng)?.add_identity(setup.nu_local());
            acc = discounted_update(acc, fresh, scfg.gamma, b, n)?;
            let split = setup.split(acc.covariance().expect("initialized"))?;
            b_l = split.b_l.clone();
            last = Some(split);
        }
    }
    let mut model = setup.model(last.expect("at least one update"), Vec::new(), cfg);
    model.bound_trace = vec![gp_bound(data, &model)?];
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lca::{e_step, em_step, m_step};
    use crate::matrix::rel_frobenius;
    use rand_distr::StandardNormal;

    fn gaussian_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        Dataset::new(n, d, x).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(StochasticConfig::default().validate().is_ok());
        let bad = StochasticConfig {
            gamma: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = StochasticConfig {
            neigh_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(StochasticConfig::default().clamped(50), (50, 49));
        assert_eq!(StochasticConfig::default().updates_per_epoch(250), 3);
    }

    #[test]
    fn neighbors_exclude_location() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..10 {
            let nb = sample_neighbors(&mut rng, 10, i, 9);
            assert_eq!(nb, (0..10).filter(|&j| j != i).collect::<Vec<_>>());
            let nb = sample_neighbors(&mut rng, 10, i, 4);
            assert_eq!(nb.len(), 4);
            assert!(!nb.contains(&i));
            assert!(nb.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn full_sample_matches_m_step() {
        let data = gaussian_data(40, 3, 2);
        let sigma = data.covariance().scale(0.5);
        let all: Vec<usize> = (0..40).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = minibatch_cov(&data, &all, 39, &sigma, &mut rng).unwrap();
        let lam = e_step(&data, &sigma).unwrap();
        let want = m_step(&data, &lam, 0.0).unwrap();
        assert!(rel_frobenius(got.as_matrix(), want.as_matrix()) < 1e-12);
    }

    #[test]
    fn single_neighbor_is_one_outer_product() {
        let data = Dataset::from_rows(&[[0.0, 0.0], [1.0, 2.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = minibatch_cov(&data, &[0], 1, &SymMatrix::identity(2), &mut rng).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!((c.as_matrix() - want).abs().max() < 1e-14);
        assert!(minibatch_cov(&data, &[0], 0, &SymMatrix::identity(2), &mut rng).is_err());
        assert!(minibatch_cov(&data, &[], 1, &SymMatrix::identity(2), &mut rng).is_err());
    }

    #[test]
    fn location_subsample_is_unbiased() {
        let data = gaussian_data(20, 2, 3);
        let sigma = data.covariance().scale(0.3);
        let lam = e_step(&data, &sigma).unwrap();
        // m_step divides by n; minibatch_cov divides by the batch size
        let want = m_step(&data, &lam, 0.0).unwrap();

        let mut mean = DMatrix::<f64>::zeros(2, 2);
        let draws = 2000;
        for s in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let locs = sample_locations(&mut rng, 20, 5);
            mean += minibatch_cov(&data, &locs, 19, &sigma, &mut rng).unwrap().into_matrix();
        }
        mean /= draws as f64;
        let err = rel_frobenius(&mean, want.as_matrix());
        assert!(err < 0.02, "relative error {err}");
    }

    #[test]
    fn neighbor_subsample_inflates_trace() {
        let data = gaussian_data(30, 2, 4);
        let sigma = data.covariance().scale(0.2);
        let all: Vec<usize> = (0..30).collect();
        let batch = m_step(&data, &e_step(&data, &sigma).unwrap(), 0.0).unwrap().trace();
        let draws = 2000;
        let mut mean = 0.0;
        for s in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            mean += minibatch_cov(&data, &all, 5, &sigma, &mut rng).unwrap().trace();
        }
        mean /= draws as f64;
        assert!(mean > batch, "subsampled trace {mean} vs batch {batch}");
    }

    #[test]
    fn discount_recurrence() {
        let c0 = SymMatrix::from_diagonal(&[2.0, 1.0]).unwrap();
        let f1 = SymMatrix::from_diagonal(&[5.0, 3.0]).unwrap();
        let f2 = SymMatrix::from_diagonal(&[1.0, 7.0]).unwrap();
        let (gamma, b, n) = (0.6, 25, 100);
        let mut acc = discounted_update(CovAccumulator::new(), c0, gamma, b, n).unwrap();
        acc = discounted_update(acc, f1, gamma, b, n).unwrap();
        acc = discounted_update(acc, f2, gamma, b, n).unwrap();

        // scalar recurrence per diagonal entry
        let w = 0.6f64.powf(0.25);
        for (k, (a, f, g)) in [(2.0, 5.0, 1.0), (1.0, 3.0, 7.0)].into_iter().enumerate() {
            let mut c = a;
            c = w * c + (1.0 - w) * f;
            c = w * c + (1.0 - w) * g;
            assert!((acc.covariance().unwrap().as_matrix()[(k, k)] - c).abs() < 1e-14);
            let closed = w * w * a + w * (1.0 - w) * f + (1.0 - w) * g;
            assert!((c - closed).abs() < 1e-14);
        }
    }

    #[test]
    fn discount_limits() {
        let old = SymMatrix::from_diagonal(&[1.0]).unwrap();
        let fresh = SymMatrix::from_diagonal(&[3.0]).unwrap();
        let acc = discounted_update(CovAccumulator::new(), old.clone(), 0.0, 1, 1).unwrap();
        let acc0 = discounted_update(acc.clone(), fresh.clone(), 0.0, 1, 4).unwrap();
        assert_eq!(acc0.covariance().unwrap().as_matrix()[(0, 0)], 3.0);
        // a full pass in one update leaves exactly γ on the old value
        let acc6 = discounted_update(acc.clone(), fresh.clone(), 0.6, 4, 4).unwrap();
        assert!((acc6.covariance().unwrap().as_matrix()[(0, 0)] - (0.6 + 0.4 * 3.0)).abs() < 1e-15);
        assert!(discounted_update(acc, fresh, 1.0, 1, 1).is_err());
    }

    #[test]
    fn full_batch_limit_is_batch_em() {
        let data = gaussian_data(30, 3, 5);
        let cfg = FitConfig::default();
        let nu = cfg.nu_for(&data);
        let scfg = StochasticConfig {
            gamma: 0.0,
            batch_size: 30,
            neigh_size: 29,
            seed: 9,
            epochs: 5,
        };
        let m = fit_stochastic(&data, &cfg, &scfg).unwrap();
        let mut sigma = data.covariance().add_identity(nu);
        for _ in 0..5 {
            sigma = em_step(&data, &sigma, nu).unwrap().1;
        }
        assert!(rel_frobenius(m.sigma.as_matrix(), sigma.as_matrix()) < 1e-10);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = gaussian_data(60, 3, 6);
        let cfg = FitConfig::default();
        let scfg = StochasticConfig {
            batch_size: 10,
            neigh_size: 20,
            epochs: 3,
            seed: 11,
            ..Default::default()
        };
        let a = fit_stochastic(&data, &cfg, &scfg).unwrap();
        let b = fit_stochastic(&data, &cfg, &scfg).unwrap();
        assert_eq!(a.sigma, b.sigma);
        let c = fit_stochastic(&data, &cfg, &StochasticConfig { seed: 12, ..scfg }).unwrap();
        assert_ne!(a.sigma, c.sigma);
    }

    #[test]
    fn stochastic_close_to_batch() {
        let data = gaussian_data(300, 3, 7);
        let cfg = FitConfig::default();
        let batch = crate::lca::fit(&data, &cfg).unwrap();
        let scfg = StochasticConfig {
            batch_size: 50,
            neigh_size: 150,
            epochs: 10,
            ..Default::default()
        };
        let m = fit_stochastic(&data, &cfg, &scfg).unwrap();
        assert!(crate::matrix::sym_eig(&m.sigma).unwrap().values.min() > 0.0);
        let rel = (m.loo_nll - batch.loo_nll) / batch.loo_nll.abs();
        assert!(rel < 0.02, "stochastic {} vs batch {}", m.loo_nll, batch.loo_nll);
    }

    #[test]
    fn gauss_full_batch_limit_matches_batch() {
        let data = gaussian_data(40, 3, 8);
        let cfg = FitConfig::default().with_max_iter(3);
        let batch = crate::gauss_parzen::fit_gauss(
            &data,
            &FitConfig {
                rel_tol: f64::MIN_POSITIVE,
                ..cfg.clone()
            },
        )
        .unwrap();
        let scfg = StochasticConfig {
            gamma: 0.0,
            batch_size: 40,
            neigh_size: 39,
            seed: 1,
            epochs: 3,
        };
        let m = fit_gauss_stochastic(&data, &cfg, &scfg).unwrap();
        assert_eq!(m.d1(), batch.d1());
        let ma = m.full_transform();
        let mb = batch.full_transform();
        let ga = &ma * ma.transpose();
        let gb = &mb * mb.transpose();
        assert!(rel_frobenius(&ga, &gb) < 1e-9);
    }
}
