use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lca_core::density::{self, DensityKind, EvalProtocol};
use lca_core::harness::{self, SweepConfig, SweepTable, SyntheticSpec};
use lca_core::io::{self, LoadedModel, ModelFile};
use lca_core::stochastic::{self, StochasticConfig};
use lca_core::subsample::{self, SubsampleGrid};
use lca_core::{gauss_parzen, lca as lca_fit, Dataset, FitConfig, LcaError, Result};

use crate::args::*;

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit(a),
        Command::Transform(a) => transform(a),
        Command::Density(a) => density_cmd(a),
        Command::Bench(BenchCommand::NoiseSweep(a)) => noise_sweep(a),
        Command::Bench(BenchCommand::IterationSweep(a)) => iteration_sweep(a),
        Command::Bench(BenchCommand::SubsampleGrid(a)) => subsample_grid(a),
        Command::Replay { config } => replay(config),
    }
}

/// `<path>.config.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

fn write_sidecar(path: &Path, cmd: Command) -> Result<()> {
    let json = serde_json::to_string_pretty(&RunConfig::new(cmd))
        .map_err(|e| LcaError::InvalidInput(format!("cannot serialize config: {e}")))?;
    let mut f = fs::File::create(path)?;
    writeln!(f, "{json}")?;
    Ok(())
}

fn replay(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| LcaError::Parse {
        line: e.line() as u64,
        msg: e.to_string(),
    })?;
    if cfg.format_version != 1 {
        return Err(LcaError::InvalidInput(format!(
            "unsupported config format version {}",
            cfg.format_version
        )));
    }
    log::info!("replaying a config written by lca {}", cfg.tool_version);
    run(&cfg.run)
}

fn em_config(em: &EmFlags, seed: u64) -> FitConfig {
    FitConfig {
        max_iter: em.max_iter,
        rel_tol: em.tol,
        reg_nu: em.nu,
        reg_nu_global: em.nu_global,
        seed,
    }
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let spec = SyntheticSpec {
        base: a.base,
        n_points: a.points.unwrap_or_else(|| a.base.default_points()),
        noise_dims: a.noise_dims,
        seed: a.seed,
    };
    let set = harness::generate(&spec)?;
    let labels = a.labels.clone().unwrap_or_else(|| a.out.with_extension("labels.csv"));
    io::write_csv(&a.out, &io::default_header(set.data.d()), &set.data)?;
    io::write_labels(&labels, &set.labels)?;
    println!(
        "wrote {} points in {} dimensions ({} clusters) to {}",
        set.data.n(),
        set.data.d(),
        set.k,
        a.out.display()
    );
    write_sidecar(&sidecar_path(&a.out), Command::Generate(a.clone()))
}

fn fit(a: &FitArgs) -> Result<()> {
    let data = io::read_dataset(&a.data)?;
    let cfg = em_config(&a.em, a.seed);
    let scfg = a.stochastic.stochastic.then_some(StochasticConfig {
        gamma: a.stochastic.gamma,
        batch_size: a.stochastic.batch,
        neigh_size: a.stochastic.neigh,
        seed: a.seed,
        epochs: a.stochastic.epochs,
    });
    let n = data.n() as f64;
    let file = match (a.method, &scfg) {
        (FitMethod::Lca, None) => report_lca(a.method, lca_fit::fit(&data, &cfg)?, None, n),
        (FitMethod::Lca, Some(s)) => report_lca(a.method, stochastic::fit_stochastic(&data, &cfg, s)?, scfg, n),
        (FitMethod::LcaGauss, None) => report_gauss(a.method, gauss_parzen::fit_gauss(&data, &cfg)?, None, n),
        (FitMethod::LcaGauss, Some(s)) => {
            report_gauss(a.method, stochastic::fit_gauss_stochastic(&data, &cfg, s)?, scfg, n)
        }
        (FitMethod::LcaGaussRed, None) => report_gauss(a.method, gauss_parzen::fit_gauss_red(&data, &cfg)?, None, n),
        (FitMethod::LcaGaussRed, Some(_)) => {
            return Err(LcaError::InvalidInput(
                "--stochastic is not available for lca-gauss-red".into(),
            ))
        }
    };
    file.write(&a.out)?;
    write_sidecar(&sidecar_path(&a.out), Command::Fit(a.clone()))
}

fn report_lca(method: FitMethod, m: lca_core::MetricModel, s: Option<StochasticConfig>, n: f64) -> ModelFile {
    println!("method: {}", method.name());
    println!("dimension: {}", m.dim());
    println!("updates: {}", m.iterations());
    println!("nu: {:e}", m.nu);
    println!("leave-one-out NLL per point: {:.6}", m.loo_nll / n);
    ModelFile::from_lca(method.name(), &m, s)
}

fn report_gauss(method: FitMethod, m: lca_core::GaussParzenModel, s: Option<StochasticConfig>, n: f64) -> ModelFile {
    println!("method: {}", method.name());
    println!("dimension: {} ({} Gaussian, {} Parzen)", m.dim(), m.d1(), m.d2());
    println!("iterations: {}", m.bound_trace.len());
    println!("nu: {:e} global, {:e} local", m.nu_global, m.nu_local);
    if let Some(b) = m.bound_trace.last() {
        println!("bound on leave-one-out NLL per point: {:.6}", b / n);
    }
    ModelFile::from_gauss(method.name(), &m, s)
}

fn transform(a: &TransformArgs) -> Result<()> {
    let data = io::read_dataset(&a.data)?;
    let model = ModelFile::read(&a.model)?.to_model()?;
    if model.dim() != data.d() {
        return Err(LcaError::DimensionMismatch {
            expected: model.dim(),
            found: data.d(),
        });
    }
    let out = match &model {
        LoadedModel::Lca(m) if a.parzen_only => {
            return Err(LcaError::InvalidInput(format!(
                "--parzen-only needs a Gauss-Parzen model, got an lca model of dimension {}",
                m.dim()
            )))
        }
        LoadedModel::Lca(m) => lca_fit::transform(&data, m)?,
        LoadedModel::GaussParzen(m) if a.parzen_only => m.parzen_coords(&data)?,
        LoadedModel::GaussParzen(m) => m.full_coords(&data)?,
    };
    io::write_csv(&a.out, &io::default_header(out.d()), &out)?;
    write_sidecar(&sidecar_path(&a.out), Command::Transform(a.clone()))
}

fn density_cmd(a: &DensityArgs) -> Result<()> {
    let kinds: Vec<DensityKind> = if a.kinds.is_empty() {
        DensityKind::ALL.to_vec()
    } else {
        a.kinds.clone()
    };
    let grid = if a.grid.is_empty() {
        density::default_reg_grid()
    } else {
        a.grid.clone()
    };
    let cfg = FitConfig {
        max_iter: a.max_iter,
        rel_tol: a.tol,
        ..FitConfig::default()
    };
    let report = match (&a.data, &a.train, &a.valid, &a.test) {
        (Some(path), _, _, _) => {
            let data = io::read_dataset(path)?;
            let protocol = EvalProtocol {
                train_n: a.train_n,
                valid_n: a.valid_n,
                test_n: a.test_n,
                reg_grid: grid,
                runs: a.runs,
                seed: a.seed,
            };
            density::run_density_benchmark(&data, &protocol, &kinds, &cfg)?
        }
        (None, Some(tr), Some(va), Some(te)) => {
            let (train, valid, test) = (io::read_dataset(tr)?, io::read_dataset(va)?, io::read_dataset(te)?);
            check_same_dim(&train, &[&valid, &test])?;
            fixed_split_report(&train, &valid, &test, &kinds, &grid, &cfg)?
        }
        _ => {
            return Err(LcaError::InvalidInput(
                "give either --data or all of --train, --valid and --test".into(),
            ))
        }
    };
    io::write_records(&a.out, &report.runs)?;
    io::write_records(&a.out.with_extension("summary.csv"), &report.summary)?;
    println!("{:<14} {:>12} {:>10}", "kind", "test NLL", "stderr");
    for s in &report.summary {
        println!("{:<14} {:>12.4} {:>10.4}", s.kind.name(), s.mean, s.stderr);
    }
    write_sidecar(&sidecar_path(&a.out), Command::Density(a.clone()))
}

fn check_same_dim(first: &Dataset, rest: &[&Dataset]) -> Result<()> {
    for other in rest {
        if other.d() != first.d() {
            return Err(LcaError::DimensionMismatch {
                expected: first.d(),
                found: other.d(),
            });
        }
    }
    Ok(())
}

fn fixed_split_report(
    train: &Dataset,
    valid: &Dataset,
    test: &Dataset,
    kinds: &[DensityKind],
    grid: &[f64],
    cfg: &FitConfig,
) -> Result<density::DensityReport> {
    let mut runs = Vec::new();
    let mut summary = Vec::new();
    for (kind, sel, t) in density::evaluate_split(train, valid, test, kinds, grid, cfg)? {
        runs.push(density::DensityRun {
            kind,
            run: 0,
            nu: sel.model.nu,
            valid_nll: sel.valid_nll,
            test_nll: t,
        });
        summary.push(density::DensitySummary {
            kind,
            mean: t,
            stderr: 0.0,
        });
    }
    Ok(density::DensityReport { runs, summary })
}

fn sweep_config(f: &SweepFlags) -> SweepConfig {
    let mut cfg = SweepConfig::new(f.base, f.runs, f.seed);
    cfg.n_points = f.points;
    cfg.fit = em_config(&f.em, f.seed);
    cfg.spectral.bandwidth_scale = f.bandwidth_scale;
    cfg
}

fn write_sweep(dir: &Path, table: &SweepTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::write_records(&dir.join("long.csv"), &table.rows)?;
    io::write_records(&dir.join("summary.csv"), &table.summary)?;
    println!("{:<16} {:>6} {:>10} {:>8}", "method", "noise", "accuracy", "stderr");
    for s in &table.summary {
        println!(
            "{:<16} {:>6} {:>10.2} {:>8.2}",
            s.method, s.noise_dims, s.mean, s.stderr
        );
    }
    Ok(())
}

fn noise_sweep(a: &NoiseSweepArgs) -> Result<()> {
    let table = harness::run_noise_sweep(&sweep_config(&a.sweep), &a.sweep.noise_dims, &a.methods)?;
    write_sweep(&a.sweep.out_dir, &table)?;
    write_sidecar(
        &a.sweep.out_dir.join("config.json"),
        Command::Bench(BenchCommand::NoiseSweep(a.clone())),
    )
}

fn iteration_sweep(a: &IterationSweepArgs) -> Result<()> {
    let counts: Vec<Option<usize>> = a.iterations.iter().map(|i| i.0).collect();
    let table = harness::run_iteration_sweep(&sweep_config(&a.sweep), &a.sweep.noise_dims, &counts)?;
    write_sweep(&a.sweep.out_dir, &table)?;
    write_sidecar(
        &a.sweep.out_dir.join("config.json"),
        Command::Bench(BenchCommand::IterationSweep(a.clone())),
    )
}

fn subsample_grid(a: &SubsampleArgs) -> Result<()> {
    let total = a.train_n + a.test_n;
    let data = match &a.data {
        Some(p) => io::read_dataset(p)?,
        None => density::signal_noise_surrogate(total, a.noise_dims, a.seed)?,
    };
    if a.train_n < 2 || a.test_n == 0 || total > data.n() {
        return Err(LcaError::InvalidInput(format!(
            "need train-n >= 2, test-n >= 1 and train-n + test-n <= {} points",
            data.n()
        )));
    }
    let train = data.select(&(0..a.train_n).collect::<Vec<_>>());
    let test = data.select(&(a.train_n..total).collect::<Vec<_>>());
    let grid = SubsampleGrid {
        gammas: a.gammas.clone(),
        batches: a.batches.clone(),
        neighs: a.neighs.clone(),
        epochs: a.epochs,
        seed: a.seed,
    };
    let cfg = FitConfig {
        reg_nu: a.nu,
        seed: a.seed,
        ..FitConfig::default()
    };
    let (reference, rows) = subsample::run_subsample_grid(&train, &test, &grid, &cfg)?;
    fs::create_dir_all(&a.out_dir)?;
    let mut all = vec![reference];
    all.extend(rows);
    io::write_records(&a.out_dir.join("grid.csv"), &all)?;
    println!(
        "{:>6} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10}",
        "gamma", "B", "N", "train", "test", "d_train", "d_test"
    );
    for r in &all {
        println!(
            "{:>6} {:>6} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            r.gamma, r.batch, r.neigh, r.train_nll, r.test_nll, r.train_diff, r.test_diff
        );
    }
    write_sidecar(
        &a.out_dir.join("config.json"),
        Command::Bench(BenchCommand::SubsampleGrid(a.clone())),
    )
}
