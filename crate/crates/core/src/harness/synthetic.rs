use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LcaError, Result};
use crate::matrix::{default_floor, inv_sqrt};

/// The two-dimensional datasets that get buried in noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseDataset {
    /// Two unit-variance isotropic Gaussians at `(±3, 0)`.
    TwoBlobs,
    /// Concentric circles of radii 1 and 2 with isotropic noise of standard
    /// deviation 0.1.
    Circles,
    /// Unit-variance Gaussians at the origin and at `(±3, ±3)`; the central
    /// one holds four times as many points as each of the others.
    FiveGaussians,
}

impl BaseDataset {
    pub const ALL: [BaseDataset; 3] = [BaseDataset::TwoBlobs, BaseDataset::Circles, BaseDataset::FiveGaussians];

    pub fn name(self) -> &'static str {
        match self {
            BaseDataset::TwoBlobs => "two_blobs",
            BaseDataset::Circles => "circles",
            BaseDataset::FiveGaussians => "five_gaussians",
        }
    }

    pub fn k(self) -> usize {
        match self {
            BaseDataset::TwoBlobs | BaseDataset::Circles => 2,
            BaseDataset::FiveGaussians => 5,
        }
    }

    /// Points per run when none is given.
    pub fn default_points(self) -> usize {
        match self {
            BaseDataset::TwoBlobs | BaseDataset::Circles => 600,
            BaseDataset::FiveGaussians => 800,
        }
    }

    /// Cluster sizes for `n` points.
    fn sizes(self, n: usize) -> Vec<usize> {
        match self {
            BaseDataset::TwoBlobs | BaseDataset::Circles => vec![n - n / 2, n / 2],
            BaseDataset::FiveGaussians => {
                let outer = n / 8;
                vec![n - 4 * outer, outer, outer, outer, outer]
            }
        }
    }
}

impl fmt::Display for BaseDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseDataset {
    type Err = LcaError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        BaseDataset::ALL
            .into_iter()
            .find(|b| b.name() == norm)
            .ok_or_else(|| LcaError::InvalidInput(format!("unknown dataset '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub base: BaseDataset,
    pub n_points: usize,
    pub noise_dims: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 10 {
            return Err(LcaError::InvalidInput("need at least 10 points".into()));
        }
        if self.base == BaseDataset::FiveGaussians && self.n_points < 8 {
            return Err(LcaError::InvalidInput("five_gaussians needs at least 8 points".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub data: Dataset,
    pub labels: Vec<usize>,
    pub k: usize,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// The unwhitened base dataset followed by `noise_dims` standard normal
/// coordinates. Clusters are laid out in label order.
pub fn generate_raw(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_points;
    let d = 2 + spec.noise_dims;
    let mut x = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (label, &size) in spec.base.sizes(n).iter().enumerate() {
        for _ in 0..size {
            let (a, b) = match spec.base {
                BaseDataset::TwoBlobs => {
                    let cx = if label == 0 { -3.0 } else { 3.0 };
                    (cx + normal(&mut rng), normal(&mut rng))
                }
                BaseDataset::Circles => {
                    let r = (label + 1) as f64;
                    let t = rng.random_range(0.0..std::f64::consts::TAU);
                    (
                        r * t.cos() + 0.1 * normal(&mut rng),
                        r * t.sin() + 0.1 * normal(&mut rng),
                    )
                }
                BaseDataset::FiveGaussians => {
                    let (cx, cy) = [(0.0, 0.0), (3.0, 3.0), (3.0, -3.0), (-3.0, 3.0), (-3.0, -3.0)][label];
                    (cx + normal(&mut rng), cy + normal(&mut rng))
                }
            };
            x.push(a);
            x.push(b);
            for _ in 0..spec.noise_dims {
                x.push(normal(&mut rng));
            }
            labels.push(label);
        }
    }
    Ok(LabeledDataset {
        data: Dataset::new(n, d, x)?,
        labels,
        k: spec.base.k(),
    })
}

/// [`generate_raw`] followed by [`pca_whiten`].
pub fn generate(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    let raw = generate_raw(spec)?;
    Ok(LabeledDataset {
        data: pca_whiten(&raw.data)?,
        ..raw
    })
}

/// Centers the data and applies `Cov^(-1/2)`, with eigenvalues floored at
/// a tiny fraction of the mean variance so that rank-deficient data still
/// maps to finite values.
pub fn pca_whiten(data: &Dataset) -> Result<Dataset> {
    data.require_points(1)?;
    let cov = data.covariance();
    let w = inv_sqrt(&cov, default_floor(&cov).max(f64::MIN_POSITIVE))?;
    data.centered().map_linear(w.as_matrix())
}
