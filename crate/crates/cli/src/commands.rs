//! One function per subcommand. Each returns the summary printed on stdout.

use std::fs::{self, File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kdemu::cluster::{dtw_kmeans, ClusterConfig};
use kdemu::data::{split_train_test, Dataset};
use kdemu::emulators::{
    evaluate as evaluate_bundle, predict_series, resample_predictors, train_emulator, EmulatorBundle, EmulatorConfig,
    LearnerKind,
};
use kdemu::io::{self, DatasetMeta, GeneratorMeta, ReportRow};
use kdemu::rng;
use kdemu::synthgen::generate_dataset;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const LOCK_FILE: &str = ".kdemu.lock";

/// Guards an output directory against concurrent runs; removed on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::usage(format!(
                "{} exists: another run is using this output directory",
                path.display()
            ))),
            Err(e) => Err(CliError::data(format!("cannot create {}: {e}", path.display()))),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!("{what} {} not found", path.display())))
    }
}

/// Writes `<out>/<command>.config.toml` and returns its text.
pub fn echo_config(cfg: &RunConfig, command: &str) -> CliResult<String> {
    let text = cfg.to_toml();
    let path = cfg.paths.out.join(format!("{command}.config.toml"));
    fs::write(&path, &text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(text)
}

fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    let path = cfg.paths.dataset();
    require_file(&path, "dataset")?;
    let (ds, _) = io::read_dataset(&path).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(ds)
}

fn load_bundle(cfg: &RunConfig) -> CliResult<EmulatorBundle> {
    let dir = cfg.paths.bundle();
    EmulatorBundle::load(&dir).map_err(|e| CliError::from(e).context(format!("bundle {}", dir.display())))
}

fn checked_emulator_config(cfg: &RunConfig) -> CliResult<EmulatorConfig> {
    let e = cfg.emulator_config();
    e.validate().map_err(CliError::config)?;
    Ok(e)
}

pub fn generate(cfg: &RunConfig) -> CliResult<String> {
    let gen = cfg.generator_config()?;
    let mix = cfg.generator.mix;
    let mut ds = generate_dataset(cfg.generator.n, &gen, &mix).map_err(CliError::config)?;
    if cfg.split.n_test > 0 {
        ds = split_train_test(ds, cfg.split.n_test, cfg.seed).map_err(CliError::config)?;
    }
    let path = cfg.paths.dataset();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let meta = DatasetMeta::new(&gen.grid, ds.len(), Some(GeneratorMeta::new(&gen, &mix)));
    io::write_dataset(&ds, &path, &meta).map_err(|e| CliError::from(e).context(path.display()))?;
    let split = ds
        .split()
        .map_or("unsplit".to_string(), |s| format!("{} train / {} test", s.train.len(), s.test.len()));
    Ok(format!("wrote {} samples ({split}) to {}", ds.len(), path.display()))
}

/// Clustering settings exactly as `train` uses them.
fn effective_clustering(cfg: &RunConfig) -> ClusterConfig {
    ClusterConfig {
        seed: rng::fold(cfg.seed, &[1, cfg.clustering.seed]),
        ..cfg.clustering.clone()
    }
}

pub fn cluster(cfg: &RunConfig) -> CliResult<String> {
    let ds = load_dataset(cfg)?;
    let model = dtw_kmeans(&ds, &effective_clustering(cfg)).map_err(CliError::config)?;
    let grid = ds.grid().ok_or_else(|| CliError::data("dataset is empty"))?;
    let out = &cfg.paths.out;
    io::write_memberships(&model, create(&out.join("memberships.csv"))?)?;
    io::write_centroids(&model, grid, create(&out.join("centroids.csv"))?)?;
    model.save(out.join("cluster.json"))?;
    Ok(format!(
        "clustered {} series into sizes {:?} (objective {:.6})",
        model.members.len(),
        model.cluster_sizes(),
        model.objective
    ))
}

pub fn train(cfg: &RunConfig) -> CliResult<String> {
    let ecfg = checked_emulator_config(cfg)?;
    let ds = load_dataset(cfg)?;
    let start = Instant::now();
    let bundle = train_emulator(&ds, &ecfg)?;
    let secs = start.elapsed().as_secs_f64();
    let dir = cfg.paths.bundle();
    bundle.save(&dir)?;
    Ok(format!(
        "trained {} {} emulator: {} model(s), training rows {:?}, {secs:.1} s; saved to {}",
        bundle.formulation,
        bundle.learner_kind,
        bundle.n_models(),
        bundle.training_rows,
        dir.display()
    ))
}

fn method_label(kind: LearnerKind) -> &'static str {
    match kind {
        LearnerKind::Forest => "RF",
        LearnerKind::Mlp => "NN",
    }
}

fn clustering_label(clustered: bool) -> &'static str {
    if clustered {
        "with"
    } else {
        "without"
    }
}

pub fn evaluate(cfg: &RunConfig) -> CliResult<String> {
    let bundle = load_bundle(cfg)?;
    let ds = load_dataset(cfg)?;
    let report = evaluate_bundle(&bundle, &ds)?;
    let out = &cfg.paths.out;
    let row = ReportRow::new(
        clustering_label(bundle.cluster_model.is_some()),
        method_label(bundle.learner_kind),
        &report,
    );
    io::write_report(std::slice::from_ref(&row), create(&out.join("report.csv"))?)?;
    io::write_sample_errors(&report, create(&out.join("errors.csv"))?)?;
    Ok(io::format_report(&[row]))
}

pub fn predict(cfg: &RunConfig) -> CliResult<String> {
    let bundle = load_bundle(cfg)?;
    let params_path = cfg
        .paths
        .params
        .clone()
        .ok_or_else(|| CliError::usage("predict needs a parameter file (--params or paths.params)"))?;
    require_file(&params_path, "parameter file")?;
    let (params, init) = io::read_params(&params_path).map_err(|e| CliError::from(e).context(params_path.display()))?;
    let f = bundle.formulation;

    let gamma = if f.kind.uses_predictors() {
        let path = cfg.paths.gamma.clone().ok_or_else(|| {
            CliError::usage(format!("{f} needs predictor series: pass --gamma <file> (no gamma file given)"))
        })?;
        require_file(&path, "gamma file")?;
        let rows = io::read_gamma(&path).map_err(|e| CliError::from(e).context(path.display()))?;
        if rows.len() < params.len() {
            return Err(CliError::data(format!(
                "gamma file {} has {} rows but {} has {}",
                path.display(),
                rows.len(),
                params_path.display(),
                params.len()
            )));
        }
        let resampled = rows
            .iter()
            .map(|(t, g1, g2)| resample_predictors(t, g1, g2, &bundle.grid))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::from(e).context(path.display()))?;
        Some(resampled)
    } else {
        None
    };
    if f.kind.is_dynamic() && init.is_none() {
        return Err(CliError::data(format!(
            "{f} needs initial values: {} has no `ln_kd0` column",
            params_path.display()
        )));
    }

    let preds = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = gamma.as_ref().map(|g| (g[i].0.as_slice(), g[i].1.as_slice()));
            predict_series(&bundle, p, g, init.as_ref().map(|v| v[i])).map_err(|e| CliError::from(e).context(format!("row {i}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let path = cfg.paths.out.join("predictions.csv");
    io::write_predictions(&bundle.grid, &preds, create(&path)?)?;
    Ok(format!("wrote {} predicted series to {}", preds.len(), path.display()))
}

/// `{without, with} clustering × {forest, mlp}` on the configured formulation.
pub fn compare_rows(cfg: &RunConfig, ds: &Dataset) -> CliResult<Vec<ReportRow>> {
    let base = cfg.emulator_config();
    let mut rows = Vec::new();
    for clustered in [false, true] {
        for learner in [LearnerKind::Forest, LearnerKind::Mlp] {
            let ecfg = EmulatorConfig {
                use_clustering: clustered,
                learner,
                ..base.clone()
            };
            ecfg.validate().map_err(CliError::config)?;
            let bundle = train_emulator(ds, &ecfg)?;
            let report = evaluate_bundle(&bundle, ds)?;
            rows.push(ReportRow::new(clustering_label(clustered), method_label(learner), &report));
        }
    }
    Ok(rows)
}

pub fn compare(cfg: &RunConfig) -> CliResult<String> {
    let ds = load_dataset(cfg)?;
    let rows = compare_rows(cfg, &ds)?;
    io::write_report(&rows, create(&cfg.paths.out.join("compare.csv"))?)?;
    Ok(io::format_report(&rows))
}
