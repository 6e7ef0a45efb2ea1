use std::time::{Duration, Instant};

use lca_core::density::signal_noise_surrogate;
use lca_core::stochastic::{fit_stochastic_monitored, StochasticConfig};
use lca_core::FitConfig;

/// Median wall-clock time between consecutive covariance updates.
fn per_update(n: usize) -> Duration {
    let data = signal_noise_surrogate(n, 3, 5).unwrap();
    let scfg = StochasticConfig {
        gamma: 0.6,
        batch_size: 100,
        neigh_size: 1000,
        seed: 1,
        epochs: 1,
    };
    let mut stamps = Vec::new();
    fit_stochastic_monitored(&data, &FitConfig::default(), &scfg, |_| stamps.push(Instant::now())).unwrap();
    let mut gaps: Vec<Duration> = stamps.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort();
    gaps[gaps.len() / 2]
}

#[test]
fn update_cost_is_within_twice_a_linear_fit_in_n() {
    let ns = [2000.0, 4000.0, 8000.0];
    let ts: Vec<f64> = ns.iter().map(|&n| per_update(n as usize).as_secs_f64()).collect();

    let mean_n = ns.iter().sum::<f64>() / 3.0;
    let mean_t = ts.iter().sum::<f64>() / 3.0;
    let slope = ns
        .iter()
        .zip(&ts)
        .map(|(n, t)| (n - mean_n) * (t - mean_t))
        .sum::<f64>()
        / ns.iter().map(|n| (n - mean_n).powi(2)).sum::<f64>();
    let intercept = mean_t - slope * mean_n;
    for (n, t) in ns.iter().zip(&ts) {
        let fit = intercept + slope * n;
        assert!(
            fit > 0.0 && *t <= 2.0 * fit && *t >= 0.5 * fit,
            "n={n}: {t:.2e}s vs linear fit {fit:.2e}s ({ts:?})"
        );
    }
}
