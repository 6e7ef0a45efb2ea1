//! Full-scale density comparison on USPS. Needs the 256-pixel digits as a
//! CSV with a header row, path in `LCA_USPS_CSV`:
//!
//! ```text
//! LCA_USPS_CSV=usps.csv cargo test --release -p lca-core --test usps -- --ignored
//! ```

use std::path::PathBuf;

use lca_core::density::{run_density_benchmark, DensityKind, EvalProtocol};
use lca_core::{io, FitConfig};

#[test]
#[ignore = "needs the USPS data set"]
fn usps_gauss_parzen_is_near_nineteen_nats() {
    let path = PathBuf::from(std::env::var("LCA_USPS_CSV").expect("set LCA_USPS_CSV"));
    let data = io::read_dataset(&path).unwrap();
    let runs = std::env::var("LCA_USPS_RUNS")
        .ok()
        .and_then(|r| r.parse().ok())
        .unwrap_or(20);
    let protocol = EvalProtocol {
        runs,
        ..EvalProtocol::default()
    };
    let report = run_density_benchmark(&data, &protocol, &DensityKind::ALL, &FitConfig::default()).unwrap();
    let mean = |k| report.summary.iter().find(|s| s.kind == k).unwrap().mean;
    for s in &report.summary {
        println!("{:<16} {:>9.2} ± {:.2}", s.kind.name(), s.mean, s.stderr);
    }
    let gp = mean(DensityKind::GaussParzen);
    assert!(gp < mean(DensityKind::ParzenFull).min(mean(DensityKind::Gaussian)));
    assert!(mean(DensityKind::ParzenFull) < mean(DensityKind::ParzenDiagonal));
    assert!(mean(DensityKind::ParzenDiagonal) < mean(DensityKind::ParzenIsotropic));
    assert!((gp - 19.09).abs() <= 3.0, "gauss_parzen {gp:.2}, expected 19.09 ± 3");
}
