//! Clustering experiments: synthetic datasets buried in Gaussian noise,
//! spectral clustering, permutation-matched accuracy and the sweep drivers
//! that compare raw whitened data against LCA-learned metrics.

mod accuracy;
mod spectral;
mod sweep;
mod synthetic;

pub use accuracy::{clustering_accuracy, clustering_accuracy_assignment, clustering_accuracy_exhaustive};
pub use spectral::{kmeans, spectral_cluster, SpectralConfig};
pub use sweep::{
    run_iteration_sweep, run_noise_sweep, summarize, ClusterMethod, SweepConfig, SweepRow, SweepSummary, SweepTable,
};
pub use synthetic::{generate, pca_whiten, BaseDataset, LabeledDataset, SyntheticSpec};
