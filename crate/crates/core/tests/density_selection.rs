use lca_core::density::{evaluate_split, signal_noise_surrogate, DensityKind};
use lca_core::FitConfig;

#[test]
fn gauss_parzen_beats_full_parzen_with_twenty_noise_dims() {
    let data = signal_noise_surrogate(1000, 20, 3).unwrap();
    let split = |a: usize, b: usize| data.select(&(a..b).collect::<Vec<_>>());
    let (train, valid, test) = (split(0, 400), split(400, 600), split(600, 1000));
    let kinds = [DensityKind::ParzenFull, DensityKind::GaussParzen];
    let grid = [1e-6, 1e-4, 1e-2];
    let out = evaluate_split(&train, &valid, &test, &kinds, &grid, &FitConfig::default()).unwrap();
    let (full, gp) = (out[0].2, out[1].2);
    assert!(gp < full, "gauss_parzen {gp} vs parzen_full {full}");
}

#[test]
fn one_run_is_reproducible() {
    use lca_core::density::{run_density_benchmark, EvalProtocol};
    let data = signal_noise_surrogate(200, 2, 4).unwrap();
    let protocol = EvalProtocol {
        train_n: 80,
        valid_n: 40,
        test_n: 80,
        reg_grid: vec![1e-4, 1e-2],
        runs: 1,
        seed: 6,
    };
    let a = run_density_benchmark(&data, &protocol, &DensityKind::ALL, &FitConfig::default()).unwrap();
    let b = run_density_benchmark(&data, &protocol, &DensityKind::ALL, &FitConfig::default()).unwrap();
    assert_eq!(a, b);
}
