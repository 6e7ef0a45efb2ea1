use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lca_core::io::{self, ModelBody, ModelFile};
use nalgebra::{DMatrix, DVector};
use tempfile::TempDir;

fn lca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lca"))
        .args(args)
        .env_remove("LCA_THREADS")
        .output()
        .expect("binary runs")
}

fn lca_ok(args: &[&str]) -> String {
    let out = lca(args);
    assert!(
        out.status.success(),
        "lca {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_rows(path: &Path, rows: &[&[f64]]) {
    let d = rows[0].len();
    let data = lca_core::Dataset::from_rows(rows).unwrap();
    io::write_csv(path, &io::default_header(d), &data).unwrap();
}

fn read_sigma(path: &Path) -> DMatrix<f64> {
    match ModelFile::read(path).unwrap().model {
        ModelBody::Lca { sigma, .. } => {
            let d = sigma.len();
            DMatrix::from_row_iterator(d, d, sigma.into_iter().flatten())
        }
        other => panic!("expected an lca model, got {other:?}"),
    }
}

fn rows_of(path: &Path) -> Vec<DVector<f64>> {
    let data = io::read_dataset(path).unwrap();
    data.rows().map(DVector::from_column_slice).collect()
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn two_point_fit_is_difference_outer_product_plus_ridge() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "toy.csv");
    write_rows(&data, &[&[1.0, 2.0], &[3.0, -1.0]]);
    let model = p(&dir, "m.json");
    lca_ok(&[
        "fit",
        "--data",
        s(&data),
        "--nu",
        "0.5",
        "--max-iter",
        "5",
        "--out",
        s(&model),
    ]);

    let diff = DVector::from_vec(vec![1.0 - 3.0, 2.0 + 1.0]);
    let expected = &diff * diff.transpose() + DMatrix::identity(2, 2) * 0.5;
    assert!(max_abs_diff(&read_sigma(&model), &expected) < 1e-12);
}

/// One EM update from `Cov + νI`, written out directly.
fn mpw_oracle(x: &[DVector<f64>], nu: f64) -> DMatrix<f64> {
    let n = x.len();
    let d = x[0].len();
    let mean = x.iter().fold(DVector::zeros(d), |a, v| a + v) / n as f64;
    let cov = x
        .iter()
        .fold(DMatrix::zeros(d, d), |a, v| a + (v - &mean) * (v - &mean).transpose())
        / n as f64;
    let prec = (cov + DMatrix::identity(d, d) * nu).try_inverse().unwrap();
    let mut sigma = DMatrix::identity(d, d) * nu;
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|j| {
                if i == j {
                    f64::NEG_INFINITY
                } else {
                    let e = &x[i] - &x[j];
                    -0.5 * (e.transpose() * &prec * &e)[0]
                }
            })
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
        for j in 0..n {
            if i != j {
                let e = &x[i] - &x[j];
                sigma += (&e * e.transpose()) * ((logits[j] - top).exp() / z / n as f64);
            }
        }
    }
    sigma
}

#[test]
fn one_iteration_matches_manifold_parzen_windows() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    write_rows(
        &data,
        &[
            &[0.0, 0.1, 1.0],
            &[1.0, -0.4, 0.3],
            &[0.4, 2.0, -1.0],
            &[-1.2, 0.3, 0.2],
            &[0.8, 0.9, 1.5],
            &[-0.3, -1.1, 0.7],
            &[2.1, 0.5, -0.2],
        ],
    );
    let model = p(&dir, "m.json");
    lca_ok(&[
        "fit",
        "--data",
        s(&data),
        "--nu",
        "0.01",
        "--max-iter",
        "1",
        "--out",
        s(&model),
    ]);
    let expected = mpw_oracle(&rows_of(&data), 0.01);
    let got = read_sigma(&model);
    assert!(max_abs_diff(&got, &expected) < 1e-10, "{got} vs {expected}");
}

#[test]
fn transform_distances_are_mahalanobis_distances() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    lca_ok(&[
        "generate",
        "--base",
        "five_gaussians",
        "--points",
        "60",
        "--noise-dims",
        "1",
        "--seed",
        "4",
        "--out",
        s(&data),
    ]);
    let model = p(&dir, "m.json");
    lca_ok(&["fit", "--data", s(&data), "--out", s(&model)]);
    let out = p(&dir, "t.csv");
    lca_ok(&["transform", "--data", s(&data), "--model", s(&model), "--out", s(&out)]);

    let prec = read_sigma(&model).try_inverse().unwrap();
    let (x, y) = (rows_of(&data), rows_of(&out));
    for (i, j) in [(0, 1), (3, 17), (20, 59), (42, 8)] {
        let e = &x[i] - &x[j];
        let maha = (e.transpose() * &prec * &e)[0];
        let eucl = (&y[i] - &y[j]).norm_squared();
        assert!((maha - eucl).abs() < 1e-8 * maha.max(1.0), "{maha} vs {eucl}");
    }
}

#[test]
fn identity_model_leaves_data_unchanged() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    write_rows(&data, &[&[0.25, -3.0], &[1.5, 2.0], &[-0.125, 7.0]]);
    let model = p(&dir, "m.json");
    let file = ModelFile {
        format_version: 1,
        method: "lca".into(),
        fit_config: Default::default(),
        stochastic: None,
        model: ModelBody::Lca {
            dim: 2,
            sigma: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            loo_nll: 0.0,
            trace: vec![0.0],
            nu: 0.0,
        },
    };
    file.write(&model).unwrap();
    let out = p(&dir, "t.csv");
    lca_ok(&["transform", "--data", s(&data), "--model", s(&model), "--out", s(&out)]);
    assert_eq!(rows_of(&out), rows_of(&data));
}

#[test]
fn parzen_only_on_all_gaussian_model_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    write_rows(&data, &[&[0.0, 1.0], &[1.0, 0.0], &[2.0, 2.0]]);
    let model = p(&dir, "g.json");
    let file = ModelFile {
        format_version: 1,
        method: "lca-gauss".into(),
        fit_config: Default::default(),
        stochastic: None,
        model: ModelBody::GaussParzen {
            dim: 2,
            d1: 2,
            b_g: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            b_l: vec![vec![], vec![]],
            mu: vec![0.0, 0.0],
            eigvals: vec![0.5, 0.7],
            bound_trace: vec![1.0],
            nu_global: 0.0,
            nu_local: 0.0,
        },
    };
    file.write(&model).unwrap();
    let out = p(&dir, "t.csv");
    let res = lca(&[
        "transform",
        "--data",
        s(&data),
        "--model",
        s(&model),
        "--parzen-only",
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("no Parzen dimensions"));
    lca_ok(&["transform", "--data", s(&data), "--model", s(&model), "--out", s(&out)]);
}

#[test]
fn generate_has_requested_shape() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    lca_ok(&[
        "generate",
        "--base",
        "circles",
        "--points",
        "50",
        "--noise-dims",
        "3",
        "--seed",
        "2",
        "--out",
        s(&data),
    ]);
    let x = io::read_dataset(&data).unwrap();
    assert_eq!((x.n(), x.d()), (50, 5));
    let labels = io::read_labels(&p(&dir, "d.labels.csv")).unwrap();
    assert_eq!(labels.len(), 50);
    assert!(labels.iter().all(|&l| l < 2));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(lca(&["fit", "--no-such-flag"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    write_rows(&data, &[&[0.0, 1.0], &[1.0, 0.0], &[2.0, 2.0]]);
    let res = lca(&[
        "fit",
        "--data",
        s(&data),
        "--method",
        "lca-gauss-red",
        "--stochastic",
        "--out",
        s(&p(&dir, "m.json")),
    ]);
    assert_eq!(res.status.code(), Some(2));
    let res = lca(&["fit", "--data", s(&data), "--tol", "0", "--out", s(&p(&dir, "m.json"))]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn malformed_data_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    fs::write(&data, "a,b\n1,2\n3,oops\n").unwrap();
    let res = lca(&["fit", "--data", s(&data), "--out", s(&p(&dir, "m.json"))]);
    assert_eq!(res.status.code(), Some(3));
    let res = lca(&[
        "fit",
        "--data",
        s(&p(&dir, "missing.csv")),
        "--out",
        s(&p(&dir, "m.json")),
    ]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn subsample_full_batch_cell_matches_reference() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "grid");
    lca_ok(&[
        "bench",
        "subsample-grid",
        "--train-n",
        "80",
        "--test-n",
        "40",
        "--noise-dims",
        "2",
        "--gammas",
        "0,0.6",
        "--batches",
        "80,20",
        "--neighs",
        "79",
        "--epochs",
        "3",
        "--out-dir",
        s(&out),
    ]);
    let mut rdr = csv::Reader::from_path(out.join("grid.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 5);
    let cell = &rows[1];
    let num = |name: &str| cell[col(name)].parse::<f64>().unwrap();
    assert_eq!((num("gamma"), num("batch"), num("neigh")), (0.0, 80.0, 79.0));
    assert_eq!((num("train_diff"), num("test_diff")), (0.0, 0.0));
    assert_eq!(cell[col("test_nll")], rows[0][col("test_nll")]);
}

#[test]
fn replay_reproduces_outputs_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let data = p(&dir, "d.csv");
    lca_ok(&[
        "generate",
        "--noise-dims",
        "2",
        "--points",
        "120",
        "--seed",
        "9",
        "--out",
        s(&data),
    ]);
    let model = p(&dir, "m.json");
    lca_ok(&[
        "fit",
        "--data",
        s(&data),
        "--method",
        "lca-gauss",
        "--stochastic",
        "--batch",
        "30",
        "--neigh",
        "50",
        "--epochs",
        "2",
        "--seed",
        "5",
        "--out",
        s(&model),
    ]);
    let first = fs::read(&model).unwrap();
    fs::remove_file(&model).unwrap();
    lca_ok(&["replay", s(&PathBuf::from(format!("{}.config.json", model.display())))]);
    assert_eq!(fs::read(&model).unwrap(), first);

    let first_data = fs::read(&data).unwrap();
    lca_ok(&["replay", s(&PathBuf::from(format!("{}.config.json", data.display())))]);
    assert_eq!(fs::read(&data).unwrap(), first_data);
}

#[test]
fn replay_rejects_malformed_config() {
    let dir = TempDir::new().unwrap();
    let cfg = p(&dir, "c.json");
    fs::write(&cfg, "{\"format_version\": 1, \"run\": {\"command\": \"nope\"}}").unwrap();
    assert_eq!(lca(&["replay", s(&cfg)]).status.code(), Some(3));
}
