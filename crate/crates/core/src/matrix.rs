//! Dense symmetric-matrix kernels.
//!
//! Everything downstream (the LCA M-step covariance, the Gaussian/Parzen
//! split, whitening) goes through the handful of routines here. They are pure
//! functions of their inputs, so they are safe to call from any thread.
//!
//! Determinants are only ever computed in log space; a 256-dimensional
//! covariance overflows a raw determinant long before it becomes ill-posed.

use crate::error::{LcaError, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// A finite, exactly symmetric square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Builds a symmetric matrix from `m`, averaging `m` and its transpose so
    /// that the stored entries are symmetric bit for bit.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(LcaError::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(LcaError::NonFinite("matrix"));
        }
        Ok(Self::symmetrize(m))
    }

    pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> Self {
        let d = m.nrows();
        for j in 0..d {
            for i in (j + 1)..d {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }

    /// Returns `self + shift * I`.
    pub fn add_identity(&self, shift: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
        SymMatrix(m)
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }

    /// `A · self · Aᵀ`, re-symmetrized.
    pub fn congruence(&self, a: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrize(a * &self.0 * a.transpose())
    }
}

impl From<SymMatrix> for DMatrix<f64> {
    fn from(m: SymMatrix) -> Self {
        m.0
    }
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors
/// stored as columns.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenPairs {
    /// `V · diag(f(values)) · Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            let s = f(v);
            scaled.column_mut(j).scale_mut(s);
        }
        scaled * self.vectors.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(|v| v)
    }
}

/// Symmetric eigendecomposition with ascending eigenvalues.
///
/// Each eigenvector is flipped so that its largest-magnitude component (the
/// first one, on ties) is nonnegative. This makes serialized models
/// reproducible across runs.
pub fn sym_eig(m: &SymMatrix) -> Result<EigenPairs> {
    if m.0.iter().any(|v| !v.is_finite()) {
        return Err(LcaError::NonFinite("matrix"));
    }
    let d = m.dim();
    if d == 0 {
        return Ok(EigenPairs {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(m.0.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut values = DVector::zeros(d);
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..d {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            vectors[(i, dst)] = sign * col[i];
        }
    }
    Ok(EigenPairs { values, vectors })
}

/// Scale-relative eigenvalue floor used by [`inv_sqrt`] when none is given.
pub fn default_floor(m: &SymMatrix) -> f64 {
    let d = m.dim().max(1) as f64;
    let t = (m.trace() / d).abs();
    if t > 0.0 {
        1e-12 * t
    } else {
        f64::MIN_POSITIVE
    }
}

/// `V · diag(max(valᵢ, floor)^(-1/2)) · Vᵀ`.
pub fn inv_sqrt(m: &SymMatrix, floor: f64) -> Result<SymMatrix> {
    if !(floor > 0.0) {
        return Err(LcaError::InvalidInput(format!(
            "eigenvalue floor must be positive, got {floor}"
        )));
    }
    let eig = sym_eig(m)?;
    if let Some(&min) = eig.values.iter().next() {
        if min < -10.0 * floor {
            return Err(LcaError::NotPsd { min_eigenvalue: min });
        }
    }
    Ok(SymMatrix::symmetrize(eig.reconstruct_with(|v| v.max(floor).powf(-0.5))))
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = m`.
pub fn chol_lower(m: &SymMatrix) -> Result<DMatrix<f64>> {
    let d = m.dim();
    let a = &m.0;
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(LcaError::NotPositiveDefinite { pivot: j });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Log-determinant as the sum of log eigenvalues.
pub fn log_det(m: &SymMatrix) -> Result<f64> {
    let eig = sym_eig(m)?;
    log_det_from_eig(&eig)
}

pub(crate) fn log_det_from_eig(eig: &EigenPairs) -> Result<f64> {
    let mut acc = 0.0;
    for &v in eig.values.iter() {
        if !(v > 0.0) {
            return Err(LcaError::Singular { min_eigenvalue: v });
        }
        acc += v.ln();
    }
    Ok(acc)
}

/// Symmetric factor `F = Σ^(-1/2)` of a covariance together with `log det Σ`.
///
/// Unlike [`inv_sqrt`] there is no floor: a covariance with a nonpositive
/// eigenvalue is rejected as a degenerate metric.
pub(crate) fn precision_factor(sigma: &SymMatrix) -> Result<(DMatrix<f64>, f64)> {
    let eig = sym_eig(sigma)?;
    let logdet = log_det_from_eig(&eig).map_err(|_| LcaError::DegenerateMetric)?;
    let f = SymMatrix::symmetrize(eig.reconstruct_with(|v| v.powf(-0.5)));
    Ok((f.into_matrix(), logdet))
}

/// `max |a_ij - b_ij|`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `‖a - b‖_F / ‖b‖_F` (absolute when `b` is zero).
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(d: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::new(&a * a.transpose() + DMatrix::identity(d, d) * 0.5).unwrap()
    }

    #[test]
    fn eig_identity() {
        let e = sym_eig(&SymMatrix::identity(3)).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn eig_diagonal_sorted_axis_aligned() {
        let m = SymMatrix::from_diagonal(&[2.0, 0.5]).unwrap();
        let e = sym_eig(&m).unwrap();
        assert_eq!(e.values.as_slice(), &[0.5, 2.0]);
        assert_eq!(e.vectors[(1, 0)], 1.0);
        assert_eq!(e.vectors[(0, 1)], 1.0);
        assert_eq!(e.vectors[(0, 0)], 0.0);
    }

    #[test]
    fn eig_sign_convention() {
        let m = random_spd(6, 3);
        let e = sym_eig(&m).unwrap();
        for j in 0..6 {
            let col = e.vectors.column(j);
            let big = col
                .iter()
                .cloned()
                .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big >= 0.0);
        }
    }

    #[test]
    fn eig_reconstructs_spd() {
        let m = random_spd(5, 11);
        let e = sym_eig(&m).unwrap();
        assert!(rel_frobenius(&e.reconstruct(), m.as_matrix()) < 1e-9);
        let gram = e.vectors.transpose() * &e.vectors;
        assert!(max_abs_diff(&gram, &DMatrix::identity(5, 5)) < 1e-10);
    }

    #[test]
    fn eig_rejects_nan() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(SymMatrix::new(m.clone()).is_err());
        let raw = SymMatrix(m);
        assert!(matches!(sym_eig(&raw), Err(LcaError::NonFinite(_))));
    }

    #[test]
    fn inv_sqrt_cases() {
        let i = SymMatrix::identity(4);
        let r = inv_sqrt(&i, default_floor(&i)).unwrap();
        assert!(max_abs_diff(r.as_matrix(), i.as_matrix()) < 1e-15);

        let m = SymMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let r = inv_sqrt(&m, default_floor(&m)).unwrap();
        assert!((r.as_matrix()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((r.as_matrix()[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.as_matrix()[(0, 1)], 0.0);

        let m = random_spd(6, 5);
        let a = inv_sqrt(&m, default_floor(&m)).unwrap();
        let p = a.as_matrix() * m.as_matrix() * a.as_matrix();
        assert!(max_abs_diff(&p, &DMatrix::identity(6, 6)) < 1e-8);
    }

    #[test]
    fn inv_sqrt_not_psd() {
        let m = SymMatrix::from_diagonal(&[1.0, -1.0]).unwrap();
        assert!(matches!(inv_sqrt(&m, 1e-6), Err(LcaError::NotPsd { .. })));
        // small negative noise below the floor is tolerated
        let m = SymMatrix::from_diagonal(&[1.0, -1e-7]).unwrap();
        assert!(inv_sqrt(&m, 1e-6).is_ok());
        assert!(inv_sqrt(&m, 0.0).is_err());
    }

    #[test]
    fn chol_cases() {
        let l = chol_lower(&SymMatrix::identity(3)).unwrap();
        assert_eq!(l, DMatrix::identity(3, 3));
        let l = chol_lower(&SymMatrix::from_diagonal(&[4.0]).unwrap()).unwrap();
        assert_eq!(l[(0, 0)], 2.0);
        let m = random_spd(4, 9);
        let l = chol_lower(&m).unwrap();
        assert!(rel_frobenius(&(&l * l.transpose()), m.as_matrix()) < 1e-10);
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn chol_reports_pivot() {
        let m = SymMatrix::from_diagonal(&[1.0, 2.0, -3.0]).unwrap();
        assert!(matches!(
            chol_lower(&m),
            Err(LcaError::NotPositiveDefinite { pivot: 2 })
        ));
    }

    #[test]
    fn log_det_cases() {
        assert_eq!(log_det(&SymMatrix::identity(5)).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let v = log_det(&SymMatrix::from_diagonal(&[e, e]).unwrap()).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
        let m = random_spd(5, 2);
        let e = SymmetricEigen::new(m.as_matrix().clone());
        let oracle: f64 = e.eigenvalues.iter().map(|v| v.ln()).sum();
        assert!((log_det(&m).unwrap() - oracle).abs() < 1e-10);
        assert!(matches!(
            log_det(&SymMatrix::from_diagonal(&[1.0, 0.0]).unwrap()),
            Err(LcaError::Singular { .. })
        ));
    }

    #[test]
    fn log_det_overflow_safe() {
        let m = SymMatrix::identity(256).scale(1e3);
        let v = log_det(&m).unwrap();
        assert!((v - 256.0 * 1e3f64.ln()).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn reconstruct_and_commute(d in 1usize..50, seed in any::<u64>()) {
            let m = random_spd(d, seed);
            let e = sym_eig(&m).unwrap();
            prop_assert!(rel_frobenius(&e.reconstruct(), m.as_matrix()) < 1e-9);

            let a = inv_sqrt(&m, default_floor(&m)).unwrap();
            let comm = a.as_matrix() * m.as_matrix() - m.as_matrix() * a.as_matrix();
            prop_assert!(comm.norm() < 1e-8 * m.as_matrix().norm());
        }

        #[test]
        fn log_det_matches_cholesky(d in 1usize..30, seed in any::<u64>()) {
            let m = random_spd(d, seed);
            let l = chol_lower(&m).unwrap();
            let via_chol: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let via_eig = log_det(&m).unwrap();
            prop_assert!((via_chol - via_eig).abs() < 1e-9 * via_eig.abs().max(1.0));
        }
    }
}
