//! Normalized spectral clustering (Ng, Jordan and Weiss) with k-means++ on
//! the row-normalized eigenvector embedding.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LcaError, Result};
use crate::matrix::{sym_eig, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    /// Independent k-means++ restarts; the lowest inertia wins.
    pub restarts: usize,
    pub max_kmeans_iter: usize,
    /// Kernel width as a multiple of the median pairwise distance.
    pub bandwidth_scale: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_kmeans_iter: 300,
            bandwidth_scale: 1.0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn pairwise_sq(data: &Dataset) -> DMatrix<f64> {
    let n = data.n();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| sq_dist(data.row(i), data.row(j))).collect())
        .collect();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Median of the `n(n-1)/2` pairwise distances (mean of the two middle
/// values for an even count).
fn median_distance(d2: &DMatrix<f64>) -> f64 {
    let n = d2.nrows();
    let mut v: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| d2[(i, j)])
        .collect();
    let m = v.len();
    let (_, hi, _) = v.select_nth_unstable_by(m / 2, f64::total_cmp);
    let hi = *hi;
    let med2 = if m % 2 == 1 {
        hi
    } else {
        let lo = v[..m / 2].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    med2.sqrt()
}

/// Clusters the rows of `data` into `k` groups.
///
/// Affinities are `exp(-‖xᵢ - xⱼ‖² / 2σ²)` with `σ` the median pairwise
/// distance (times `cfg.bandwidth_scale`) and a zero diagonal. The top `k` eigenvectors of
/// `D^(-1/2) A D^(-1/2)` form the embedding, whose rows are scaled to unit
/// length before k-means.
pub fn spectral_cluster(data: &Dataset, k: usize, seed: u64, cfg: &SpectralConfig) -> Result<Vec<usize>> {
    let n = data.n();
    if k < 2 || n <= k {
        return Err(LcaError::InvalidInput(format!("need 2 <= k < n, got k = {k}, n = {n}")));
    }
    let d2 = pairwise_sq(data);
    if !(cfg.bandwidth_scale > 0.0) || !cfg.bandwidth_scale.is_finite() {
        return Err(LcaError::InvalidInput("bandwidth scale must be positive".into()));
    }
    let sigma = cfg.bandwidth_scale * median_distance(&d2);
    if !(sigma > 0.0) {
        return Err(LcaError::InvalidInput("all points coincide".into()));
    }
    let scale = 0.5 / (sigma * sigma);
    let mut a = d2.map(|v| (-v * scale).exp());
    a.fill_diagonal(0.0);
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let inv_sqrt_deg: Vec<f64> = deg
        .iter()
        .map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 })
        .collect();
    let l = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * inv_sqrt_deg[i] * inv_sqrt_deg[j]);

    let eig = sym_eig(&SymMatrix::new(l)?)?;
    // ascending order: the top k are the last k columns
    let mut emb = Vec::with_capacity(n * k);
    for i in 0..n {
        let row: Vec<f64> = (n - k..n).map(|c| eig.vectors[(i, c)]).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        emb.extend(row.iter().map(|v| if norm > 0.0 { v / norm } else { *v }));
    }
    let emb = Dataset::new(n, k, emb)?;
    Ok(kmeans(&emb, k, seed, cfg))
}

/// Best of `cfg.restarts` k-means++ runs by inertia.
pub fn kmeans(data: &Dataset, k: usize, seed: u64, cfg: &SpectralConfig) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..cfg.restarts.max(1) {
        let (inertia, assign) = kmeans_once(data, k, cfg.max_kmeans_iter, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.expect("at least one restart").1
}

fn kmeans_pp_init<R: Rng>(data: &Dataset, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = data.n();
    let mut centers = vec![data.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = data.rows().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(data.row(next).to_vec());
        for (i, r) in data.rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn kmeans_once<R: Rng>(data: &Dataset, k: usize, max_iter: usize, rng: &mut R) -> (f64, Vec<usize>) {
    let n = data.n();
    let d = data.d();
    let mut centers = kmeans_pp_init(data, k, rng);
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, r) in data.rows().enumerate() {
            let c = (0..k)
                .map(|c| (sq_dist(r, &centers[c]), c))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("k > 0")
                .1;
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, r) in data.rows().enumerate() {
            counts[assign[i]] += 1;
            sums[assign[i]].iter_mut().zip(r).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // reseed an empty cluster at the point farthest from its center
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(data.row(a), &centers[assign[a]]).total_cmp(&sq_dist(data.row(b), &centers[assign[b]]))
                    })
                    .expect("n > 0");
                centers[c] = data.row(far).to_vec();
            }
        }
    }
    let inertia = data
        .rows()
        .enumerate()
        .map(|(i, r)| sq_dist(r, &centers[assign[i]]))
        .sum();
    (inertia, assign)
}
