use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kdemu::data::Split;
use kdemu::io;

const BIN: &str = env!("CARGO_BIN_EXE_kdemu");

const SMALL: &str = r#"
seed = 5
[generator]
n = 40
m = 10
[forest]
n_trees = 20
[network]
ensemble_size = 2
hidden_width = 8
n_layers = 3
[network.train]
epochs = 3
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn workspace(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, config).unwrap();
    (dir, cfg)
}

#[test]
fn generate_default_writes_172_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate"]);
    let first = fs::read(dir.path().join("out/dataset.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 173);
    assert!(dir.path().join("out/dataset.meta.toml").is_file());
    assert!(dir.path().join("out/generate.config.toml").is_file());
    ok(dir.path(), &["generate"]);
    assert_eq!(fs::read(dir.path().join("out/dataset.csv")).unwrap(), first);
    assert!(!dir.path().join("out/.kdemu.lock").exists());
}

#[test]
fn empty_generation_is_header_only() {
    let (dir, _) = workspace("[generator]\nn = 0\n[split]\nn_test = 0\n");
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    let text = fs::read_to_string(dir.path().join("out/dataset.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("ilsoh,smsoh,ph,ca,smectite,illite,calcite,t_1"));
}

#[test]
fn config_echo_reproduces_the_run() {
    let (dir, _) = workspace(SMALL);
    ok(dir.path(), &["generate", "--config", "run.toml", "--seed", "11"]);
    let echo = fs::read_to_string(dir.path().join("out/generate.config.toml")).unwrap();
    assert!(echo.contains("seed = 11"));
    let first = fs::read(dir.path().join("out/dataset.csv")).unwrap();
    ok(dir.path(), &["generate", "--config", "out/generate.config.toml", "--out", "again"]);
    assert_eq!(fs::read(dir.path().join("again/dataset.csv")).unwrap(), first);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let (dir, _) = workspace("[forest]\nn_tres = 10\n");
    let out = run(dir.path(), &["generate", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("n_tres"), "{}", stderr(&out));
}

#[test]
fn bad_flags_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["generate", "--jobs", "0"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["generate", "--config", "missing.toml"]).status.code(), Some(1));
}

#[test]
fn clustered_forest_bundle_has_two_models_and_stable_manifest() {
    let (dir, _) = workspace(SMALL);
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    let summary = ok(dir.path(), &["train", "--config", "run.toml"]);
    assert!(summary.contains("2 model(s)"), "{summary}");
    let manifest = fs::read(dir.path().join("out/bundle/manifest.json")).unwrap();
    ok(dir.path(), &["train", "--config", "run.toml", "--bundle", "b2"]);
    assert_eq!(fs::read(dir.path().join("b2/manifest.json")).unwrap(), manifest);
    for f in ["model_0.forest", "model_1.forest", "cluster.json"] {
        assert_eq!(
            fs::read(dir.path().join("out/bundle").join(f)).unwrap(),
            fs::read(dir.path().join("b2").join(f)).unwrap()
        );
    }
}

#[test]
fn series_arrangement_with_dynamic_formulation_is_rejected() {
    let (dir, _) = workspace(&format!(
        "{SMALL}\n[emulator]\nformulation = \"f_dyn\"\narrangement = \"series\"\nlearner = \"mlp\"\n"
    ));
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    let out = run(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("series"), "{}", stderr(&out));
}

#[test]
fn diverging_network_exits_with_numerical_code() {
    let (dir, _) = workspace(&format!(
        "{}\n[emulator]\nlearner = \"mlp\"\nuse_clustering = false\n",
        SMALL.replace("epochs = 3", "epochs = 3\nlr = 1e300")
    ));
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    let out = run(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn evaluate_report_has_one_column_per_test_sample_plus_average() {
    let (dir, _) = workspace(SMALL);
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    ok(dir.path(), &["train", "--config", "run.toml"]);
    let table = ok(dir.path(), &["evaluate", "--config", "run.toml"]);
    assert!(table.contains("with") && table.contains("RF"), "{table}");
    let report = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 2 + 6 + 1);
    let errors = fs::read_to_string(dir.path().join("out/errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 1 + 6 + 1);
    assert!(errors.lines().last().unwrap().starts_with("average,"));
}

#[test]
fn missing_bundle_is_a_data_error() {
    let (dir, _) = workspace(SMALL);
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    let out = run(dir.path(), &["evaluate", "--config", "run.toml", "--bundle", "nowhere"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere"));
}

/// Single unbootstrapped tree without clustering: reproduces its training set.
fn interpolating() -> String {
    format!(
        "{}\n[emulator]\nuse_clustering = false\n",
        SMALL.replace("n_trees = 20", "n_trees = 1\nbootstrap = false")
    )
}

/// Bundle trained without bootstrap and evaluated on its own training
/// samples: every error is zero.
#[test]
fn oracle_bundle_gives_zero_error_table() {
    let (dir, _) = workspace(&interpolating());
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    ok(dir.path(), &["train", "--config", "run.toml"]);

    let data = dir.path().join("out/dataset.csv");
    let (ds, meta) = io::read_dataset(&data).unwrap();
    let split = ds.split().unwrap().clone();
    let swapped = Split {
        test: split.train[..6].to_vec(),
        train: split.train[6..].iter().chain(&split.test).copied().collect(),
    };
    let probe = dir.path().join("probe.csv");
    io::write_dataset(&ds.with_split(swapped).unwrap(), &probe, &meta).unwrap();

    ok(dir.path(), &["evaluate", "--config", "run.toml", "--dataset", "probe.csv"]);
    let report = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let row = report.lines().nth(1).unwrap();
    for v in row.split(',').skip(2) {
        assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{row}");
    }
}

#[test]
fn compare_prints_four_rows() {
    let (dir, _) = workspace(SMALL);
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    let table = ok(dir.path(), &["compare", "--config", "run.toml"]);
    assert_eq!(table.lines().count(), 5, "{table}");
    let csv = fs::read_to_string(dir.path().join("out/compare.csv")).unwrap();
    let rows: Vec<String> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(" "))
        .collect();
    assert_eq!(rows, ["without RF", "without NN", "with RF", "with NN"]);
}

fn write_training_params(dir: &Path, rows: usize) -> Vec<Vec<f64>> {
    let (ds, _) = io::read_dataset(&dir.join("out/dataset.csv")).unwrap();
    let split = ds.split().unwrap();
    let picked: Vec<_> = split.train[..rows].iter().map(|&i| ds.samples()[i].clone()).collect();
    let params: Vec<_> = picked.iter().map(|t| t.params).collect();
    io::write_params(&dir.join("params.csv"), &params).unwrap();
    let gamma: Vec<(&[f64], &[f64], &[f64])> = picked
        .iter()
        .map(|t| (t.grid.times(), t.gamma1.as_slice(), t.gamma2.as_slice()))
        .collect();
    io::write_gamma(&dir.join("gamma.csv"), &gamma).unwrap();
    picked.into_iter().map(|t| t.ln_kd).collect()
}

fn predicted_means(path: &Path, rows: usize, m: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; m]; rows];
    let text = fs::read_to_string(path).unwrap();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        out[f[0].parse::<usize>().unwrap()][f[2].parse::<usize>().unwrap()] = f[4].parse().unwrap();
    }
    out
}

#[test]
fn predict_reproduces_training_series_on_interpolating_forest() {
    let (dir, _) = workspace(&interpolating());
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    ok(dir.path(), &["train", "--config", "run.toml"]);
    let truth = write_training_params(dir.path(), 3);
    ok(dir.path(), &["predict", "--config", "run.toml", "--params", "params.csv"]);
    let path = dir.path().join("out/predictions.csv");
    let first = fs::read(&path).unwrap();
    assert_eq!(predicted_means(&path, 3, 10), truth);
    ok(dir.path(), &["predict", "--config", "run.toml", "--params", "params.csv"]);
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn predict_rejects_out_of_bounds_ph() {
    let (dir, _) = workspace(SMALL);
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    ok(dir.path(), &["train", "--config", "run.toml"]);
    fs::write(
        dir.path().join("bad.csv"),
        "ilsoh,smsoh,ph,ca,smectite,illite,calcite\n4.5,5,9.5,-2,0.5,0.1,0.02\n",
    )
    .unwrap();
    let out = run(dir.path(), &["predict", "--config", "run.toml", "--params", "bad.csv"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("`ph`"), "{}", stderr(&out));
}

#[test]
fn predictor_bundle_requires_gamma_file() {
    let (dir, _) = workspace(&format!("{SMALL}\n[emulator]\nformulation = \"g_func\"\n"));
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    ok(dir.path(), &["train", "--config", "run.toml"]);
    write_training_params(dir.path(), 2);

    let out = run(dir.path(), &["predict", "--config", "run.toml", "--params", "params.csv"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("--gamma"), "{}", stderr(&out));

    let out = run(dir.path(), &["predict", "--config", "run.toml", "--params", "params.csv", "--gamma", "absent.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.csv"), "{}", stderr(&out));

    ok(dir.path(), &["predict", "--config", "run.toml", "--params", "params.csv", "--gamma", "gamma.csv"]);
    let text = fs::read_to_string(dir.path().join("out/predictions.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 10);
}

#[test]
fn dynamic_bundle_requires_initial_values() {
    let (dir, _) = workspace(&format!("{SMALL}\n[emulator]\nformulation = \"f_dyn\"\nrollout_subsets = 5\n"));
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    ok(dir.path(), &["train", "--config", "run.toml"]);
    write_training_params(dir.path(), 2);
    let out = run(dir.path(), &["predict", "--config", "run.toml", "--params", "params.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("ln_kd0"), "{}", stderr(&out));
}

#[test]
fn cluster_command_writes_memberships_and_centroids() {
    let (dir, _) = workspace(SMALL);
    ok(dir.path(), &["generate", "--config", "run.toml"]);
    let summary = ok(dir.path(), &["cluster", "--config", "run.toml"]);
    assert!(summary.contains("34 series"), "{summary}");
    let members = fs::read_to_string(dir.path().join("out/memberships.csv")).unwrap();
    assert_eq!(members.lines().count(), 1 + 34);
    let centroids = fs::read_to_string(dir.path().join("out/centroids.csv")).unwrap();
    assert_eq!(centroids.lines().next().unwrap(), "t,centroid_0,centroid_1");
    assert_eq!(centroids.lines().count(), 1 + 10);
}

#[test]
fn held_lock_blocks_a_second_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/.kdemu.lock"), "").unwrap();
    let out = run(dir.path(), &["generate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("another run"));
}
