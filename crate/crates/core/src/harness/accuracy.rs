use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::error::{LcaError, Result};

/// Largest `k` for which every label permutation is enumerated.
const EXHAUSTIVE_MAX_K: usize = 8;

/// `E[a][l]`: number of points assigned to cluster `a` with true label `l`.
fn confusion(assignments: &[usize], labels: &[usize], k: usize) -> Result<Vec<Vec<i64>>> {
    if assignments.len() != labels.len() {
        return Err(LcaError::DimensionMismatch {
            expected: labels.len(),
            found: assignments.len(),
        });
    }
    if assignments.is_empty() {
        return Err(LcaError::InvalidInput("no points to score".into()));
    }
    let mut e = vec![vec![0i64; k]; k];
    for (&a, &l) in assignments.iter().zip(labels) {
        if a >= k || l >= k {
            return Err(LcaError::InvalidInput(format!("label out of range for k = {k}")));
        }
        e[a][l] += 1;
    }
    Ok(e)
}

fn percent(matched: i64, n: usize) -> f64 {
    100.0 * matched as f64 / n as f64
}

/// Accuracy by enumerating all `k!` relabelings (Heap's algorithm).
pub fn clustering_accuracy_exhaustive(assignments: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    let e = confusion(assignments, labels, k)?;
    let mut perm: Vec<usize> = (0..k).collect();
    let score = |p: &[usize]| (0..k).map(|a| e[a][p[a]]).sum::<i64>();
    let mut best = score(&perm);
    let mut c = vec![0usize; k];
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.max(score(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(percent(best, labels.len()))
}

/// Accuracy through an optimal assignment between clusters and labels.
pub fn clustering_accuracy_assignment(assignments: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    let e = confusion(assignments, labels, k)?;
    let weights = Matrix::from_rows(e).map_err(|e| LcaError::InvalidInput(e.to_string()))?;
    let (best, _) = kuhn_munkres(&weights);
    Ok(percent(best, labels.len()))
}

/// `(100/n)·max_P tr(E·P)`: the percentage of points that agree with the
/// labels under the best one-to-one matching of cluster ids to labels.
pub fn clustering_accuracy(assignments: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    if k <= EXHAUSTIVE_MAX_K {
        clustering_accuracy_exhaustive(assignments, labels, k)
    } else {
        clustering_accuracy_assignment(assignments, labels, k)
    }
}
