//! Pairwise Gaussian-kernel passes shared by the batch, Gauss–Parzen and
//! stochastic fits.
//!
//! A pass visits a set of locations `i`, scores each candidate neighbor `j`
//! by the logit `-½‖yᵢ - yⱼ‖²` in kernel coordinates `y`, normalizes the
//! logits per location with log-sum-exp and accumulates the responsibility
//! weighted scatter `Σᵢ Σⱼ λᵢⱼ (xᵢ - xⱼ)(xᵢ - xⱼ)ᵀ` in the raw coordinates
//! `x`.
//!
//! The scatter is assembled in expanded form,
//! `Σₖ aₖ xₖxₖᵀ - (C + Cᵀ)` with `C = Σᵢ xᵢ (Σⱼ λᵢⱼ xⱼ)ᵀ`, which costs
//! `O(d² n + d·|pairs|)` instead of `O(d²·|pairs|)`. Raw coordinates are
//! centered first to keep the cancellation between the two terms small.
//!
//! Locations are processed in fixed-size blocks (in parallel when a pool is
//! available) and the block results are reduced in block order, so the
//! output does not depend on the number of worker threads.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::Dataset;

const BLOCK: usize = 32;

/// Which neighbors each location is compared against.
#[derive(Clone, Copy)]
pub(crate) enum Neighbors<'a> {
    /// Every other point (leave-one-out).
    AllOthers,
    /// An explicit list per location, aligned with the location slice.
    Lists(&'a [Vec<usize>]),
}

pub(crate) struct PassStats {
    /// Unnormalized local scatter; `None` when not requested.
    pub scatter: Option<DMatrix<f64>>,
    /// `Σᵢ logsumexpⱼ(-½ qᵢⱼ)`.
    pub log_sum: f64,
    /// `Σᵢ Σⱼ λᵢⱼ log λᵢⱼ`.
    pub entropy: f64,
}

struct BlockStats {
    weights: Vec<f64>,
    cross: DMatrix<f64>,
    log_sum: f64,
    entropy: f64,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let t = a[k] - b[k];
        s += t * t;
    }
    s
}

/// Log-sum-exp of `logits`, overwriting them with normalized weights.
/// Returns `(lse, Σ λ log λ)`.
pub(crate) fn normalize_logits(logits: &mut [f64]) -> (f64, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for &l in logits.iter() {
        s += (l - max).exp();
    }
    let log_s = s.ln();
    let lse = max + log_s;
    let mut entropy = 0.0;
    for l in logits.iter_mut() {
        // relative to the max so that large offsets do not cost precision
        let log_lam = (*l - max) - log_s;
        let lam = log_lam.exp();
        if lam > 0.0 {
            entropy += lam * log_lam;
        }
        *l = lam;
    }
    (lse, entropy)
}

/// Runs one pass. `x` holds raw coordinates, `y` kernel coordinates (same
/// row count, possibly zero columns).
pub(crate) fn local_pass(
    x: &Dataset,
    y: &Dataset,
    locations: &[usize],
    neighbors: Neighbors<'_>,
    want_scatter: bool,
) -> PassStats {
    let n = x.n();
    let d = x.d();
    let xc = x.centered();

    let blocks: Vec<(usize, &[usize])> = locations
        .chunks(BLOCK)
        .enumerate()
        .map(|(b, c)| (b * BLOCK, c))
        .collect();

    let results: Vec<BlockStats> = blocks
        .par_iter()
        .map(|&(offset, locs)| {
            let mut weights = if want_scatter { vec![0.0; n] } else { Vec::new() };
            let mut cross = DMatrix::zeros(if want_scatter { d } else { 0 }, if want_scatter { d } else { 0 });
            let mut log_sum = 0.0;
            let mut entropy = 0.0;
            let mut logits = Vec::new();
            let mut idx: Vec<usize> = Vec::new();
            let mut m = vec![0.0; d];
            for (t, &i) in locs.iter().enumerate() {
                idx.clear();
                match neighbors {
                    Neighbors::AllOthers => idx.extend((0..n).filter(|&j| j != i)),
                    Neighbors::Lists(lists) => idx.extend_from_slice(&lists[offset + t]),
                }
                let yi = y.row(i);
                logits.clear();
                logits.extend(idx.iter().map(|&j| -0.5 * sq_dist(yi, y.row(j))));
                let (lse, ent) = normalize_logits(&mut logits);
                log_sum += lse;
                entropy += ent;
                if want_scatter {
                    m.iter_mut().for_each(|v| *v = 0.0);
                    for (&j, &lam) in idx.iter().zip(logits.iter()) {
                        if lam == 0.0 {
                            continue;
                        }
                        weights[j] += lam;
                        for (mk, xk) in m.iter_mut().zip(xc.row(j)) {
                            *mk += lam * xk;
                        }
                    }
                    weights[i] += 1.0;
                    let xi = xc.row(i);
                    for q in 0..d {
                        for p in 0..d {
                            cross[(p, q)] += xi[p] * m[q];
                        }
                    }
                }
            }
            BlockStats {
                weights,
                cross,
                log_sum,
                entropy,
            }
        })
        .collect();

    let mut log_sum = 0.0;
    let mut entropy = 0.0;
    let mut weights = vec![0.0; if want_scatter { n } else { 0 }];
    let mut cross = DMatrix::zeros(if want_scatter { d } else { 0 }, if want_scatter { d } else { 0 });
    for b in &results {
        log_sum += b.log_sum;
        entropy += b.entropy;
        if want_scatter {
            for (w, bw) in weights.iter_mut().zip(&b.weights) {
                *w += bw;
            }
            cross += &b.cross;
        }
    }

    let scatter = want_scatter.then(|| {
        // only rows that were touched contribute; minibatches touch few
        let touched: Vec<usize> = (0..n).filter(|&k| weights[k] != 0.0).collect();
        let raw = xc.select(&touched).to_matrix();
        let mut weighted = raw.clone();
        for (r, &k) in touched.iter().enumerate() {
            weighted.row_mut(r).scale_mut(weights[k]);
        }
        let mut s = raw.transpose() * weighted;
        s -= &cross;
        s -= cross.transpose();
        // exact symmetry
        for q in 0..d {
            for p in (q + 1)..d {
                let v = 0.5 * (s[(p, q)] + s[(q, p)]);
                s[(p, q)] = v;
                s[(q, p)] = v;
            }
        }
        s
    });

    PassStats {
        scatter,
        log_sum,
        entropy,
    }
}

/// For each query row, `logsumexpⱼ(-½‖qᵢ - sⱼ‖²)` over all support rows.
pub(crate) fn cross_log_sums(query: &Dataset, support: &Dataset) -> Vec<f64> {
    (0..query.n())
        .into_par_iter()
        .map(|i| {
            let qi = query.row(i);
            let mut logits: Vec<f64> = support.rows().map(|s| -0.5 * sq_dist(qi, s)).collect();
            normalize_logits(&mut logits).0
        })
        .collect()
}
