//! Ablation over the stochastic settings `(γ, B, N)`: every cell is compared
//! with the full-batch reference `(γ = 0, B = n, N = n - 1)` run for the same
//! number of epochs, on training (leave-one-out) and test NLL per point.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::density::{test_nll, DensityKind, DensityModel};
use crate::error::{LcaError, Result};
use crate::lca::{FitConfig, MetricModel};
use crate::matrix::sym_eig;
use crate::stochastic::{fit_stochastic_monitored, StochasticConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleGrid {
    pub gammas: Vec<f64>,
    pub batches: Vec<usize>,
    pub neighs: Vec<usize>,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SubsampleGrid {
    fn default() -> Self {
        Self {
            gammas: vec![0.3, 0.6, 0.9],
            batches: vec![10, 100, 1000],
            neighs: vec![100, 1000, 3000],
            epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsampleRow {
    pub gamma: f64,
    /// Requested sizes; the fit clamps them to the data.
    pub batch: usize,
    pub neigh: usize,
    /// Leave-one-out NLL per training point.
    pub train_nll: f64,
    /// NLL per test point with the training set as support.
    pub test_nll: f64,
    pub train_diff: f64,
    pub test_diff: f64,
    /// Smallest eigenvalue of the running `C_L` over all updates.
    pub min_eigenvalue: f64,
}

struct Cell {
    train_nll: f64,
    test_nll: f64,
    min_eigenvalue: f64,
}

fn evaluate(train: &Dataset, test: &Dataset, cfg: &FitConfig, scfg: &StochasticConfig) -> Result<Cell> {
    let mut min_eig = f64::INFINITY;
    let mut eig_err = None;
    let model: MetricModel = fit_stochastic_monitored(train, cfg, scfg, |c| match sym_eig(c) {
        Ok(e) => min_eig = min_eig.min(e.values.min()),
        Err(e) => eig_err = Some(e),
    })?;
    if let Some(e) = eig_err {
        return Err(e);
    }
    let density = DensityModel::parzen_from_full(DensityKind::ParzenFull, &model.sigma, train.clone(), model.nu)?;
    Ok(Cell {
        train_nll: model.loo_nll / train.n() as f64,
        test_nll: test_nll(&density, test)?,
        min_eigenvalue: min_eig,
    })
}

/// Runs every `(γ, B, N)` cell and the full-batch reference.
pub fn run_subsample_grid(
    train: &Dataset,
    test: &Dataset,
    grid: &SubsampleGrid,
    cfg: &FitConfig,
) -> Result<(SubsampleRow, Vec<SubsampleRow>)> {
    if grid.gammas.is_empty() || grid.batches.is_empty() || grid.neighs.is_empty() {
        return Err(LcaError::InvalidInput("subsample grid has an empty axis".into()));
    }
    let n = train.n();
    let scfg = |gamma, batch_size, neigh_size| StochasticConfig {
        gamma,
        batch_size,
        neigh_size,
        seed: grid.seed,
        epochs: grid.epochs,
    };
    let reference = evaluate(train, test, cfg, &scfg(0.0, n, n - 1))?;
    let row = |gamma, batch, neigh, c: &Cell| SubsampleRow {
        gamma,
        batch,
        neigh,
        train_nll: c.train_nll,
        test_nll: c.test_nll,
        train_diff: c.train_nll - reference.train_nll,
        test_diff: c.test_nll - reference.test_nll,
        min_eigenvalue: c.min_eigenvalue,
    };
    let ref_row = row(0.0, n, n - 1, &reference);

    let mut rows = Vec::new();
    for &gamma in &grid.gammas {
        for &batch in &grid.batches {
            for &neigh in &grid.neighs {
                let c = evaluate(train, test, cfg, &scfg(gamma, batch, neigh))?;
                log::info!("gamma={gamma} B={batch} N={neigh}: test NLL {:.4}", c.test_nll);
                rows.push(row(gamma, batch, neigh, &c));
            }
        }
    }
    Ok((ref_row, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::signal_noise_surrogate;

    #[test]
    fn reference_cell_has_zero_difference() {
        let data = signal_noise_surrogate(90, 1, 2).unwrap();
        let train = data.select(&(0..60).collect::<Vec<_>>());
        let test = data.select(&(60..90).collect::<Vec<_>>());
        let grid = SubsampleGrid {
            gammas: vec![0.0, 0.6],
            batches: vec![60],
            neighs: vec![59, 10],
            epochs: 3,
            seed: 1,
        };
        let (reference, rows) = run_subsample_grid(&train, &test, &grid, &FitConfig::default()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0].train_diff, rows[0].test_diff), (0.0, 0.0));
        assert_eq!(rows[0].test_nll, reference.test_nll);
        assert!(rows.iter().all(|r| r.min_eigenvalue > 0.0));
    }
}
