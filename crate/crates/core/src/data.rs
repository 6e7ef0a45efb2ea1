use nalgebra::{DMatrix, DVector};

use crate::error::{LcaError, Result};
use crate::matrix::SymMatrix;

/// An `n × d` table of finite observations, one row per point.
///
/// Rows are stored contiguously so that pairwise kernels can walk them as
/// plain slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    x: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major values.
    pub fn new(n: usize, d: usize, x: Vec<f64>) -> Result<Self> {
        if x.len() != n * d {
            return Err(LcaError::DimensionMismatch {
                expected: n * d,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LcaError::NonFinite("dataset"));
        }
        Ok(Self { n, d, x })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut x = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(LcaError::DimensionMismatch {
                    expected: d,
                    found: r.len(),
                });
            }
            x.extend_from_slice(r);
        }
        Self::new(rows.len(), d, x)
    }

    /// Rows of `m` become points.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = m.shape();
        let mut x = Vec::with_capacity(n * d);
        for i in 0..n {
            x.extend(m.row(i).iter());
        }
        Self::new(n, d, x)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.x)
    }

    pub fn require_points(&self, min: usize) -> Result<()> {
        if self.n < min {
            return Err(LcaError::TooFewPoints { n: self.n, min });
        }
        Ok(())
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.d);
        for r in self.rows() {
            for (k, v) in r.iter().enumerate() {
                m[k] += v;
            }
        }
        if self.n > 0 {
            m /= self.n as f64;
        }
        m
    }

    /// Population covariance `(1/n) Σ (xᵢ - x̄)(xᵢ - x̄)ᵀ`.
    pub fn covariance(&self) -> SymMatrix {
        let centered = self.centered();
        let m = centered.to_matrix();
        let mut c = m.transpose() * m;
        if self.n > 0 {
            c /= self.n as f64;
        }
        SymMatrix::symmetrize(c)
    }

    pub fn centered(&self) -> Dataset {
        let mu = self.mean();
        self.map_rows(
            |r, out| {
                for k in 0..r.len() {
                    out[k] = r[k] - mu[k];
                }
            },
            self.d,
        )
    }

    /// `yᵢ = A·xᵢ` for a `k × d` matrix `A`.
    pub fn map_linear(&self, a: &DMatrix<f64>) -> Result<Dataset> {
        if a.ncols() != self.d {
            return Err(LcaError::DimensionMismatch {
                expected: self.d,
                found: a.ncols(),
            });
        }
        let k = a.nrows();
        Ok(self.map_rows(
            |r, out| {
                for (p, o) in out.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for q in 0..r.len() {
                        s += a[(p, q)] * r[q];
                    }
                    *o = s;
                }
            },
            k,
        ))
    }

    pub fn translate(&self, shift: &[f64]) -> Result<Dataset> {
        if shift.len() != self.d {
            return Err(LcaError::DimensionMismatch {
                expected: self.d,
                found: shift.len(),
            });
        }
        Ok(self.map_rows(
            |r, out| {
                for k in 0..r.len() {
                    out[k] = r[k] + shift[k];
                }
            },
            self.d,
        ))
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            n: idx.len(),
            d: self.d,
            x,
        }
    }

    /// Concatenates the columns of `self` and `other` row by row.
    pub fn hstack(&self, other: &Dataset) -> Result<Dataset> {
        if other.n != self.n {
            return Err(LcaError::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        let d = self.d + other.d;
        let mut x = Vec::with_capacity(self.n * d);
        for i in 0..self.n {
            x.extend_from_slice(self.row(i));
            x.extend_from_slice(other.row(i));
        }
        Ok(Dataset { n: self.n, d, x })
    }

    fn map_rows(&self, f: impl Fn(&[f64], &mut [f64]), k: usize) -> Dataset {
        let mut x = vec![0.0; self.n * k];
        for (i, out) in x.chunks_mut(k.max(1)).enumerate().take(self.n) {
            if k > 0 {
                f(self.row(i), out);
            }
        }
        Dataset { n: self.n, d: k, x }
    }
}
