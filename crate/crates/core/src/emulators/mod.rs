//! Surrogates of ln Kd(t): direct function approximation with or without
//! simulated predictors, and one-step flow maps rolled out in time.

mod features;
mod learner;
mod persist;

pub use features::{
    arrange_samples, feature_names, interp_linear, interp_predictors, n_features, n_outputs, pointwise_row,
    resample_predictors, series_row, Arranged, NormalizedPredictors,
};
pub use learner::{ForestLearner, LearnerKind, MlpLearner, NetworkConfig, TrainedLearner};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{assign_cluster, dtw_kmeans, ClusterConfig, ClusterModel};
use crate::data::{Dataset, NormalizationMaps, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::metrics;
use crate::params::{rescale, ParameterVector, N_PARAMS};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormulationKind {
    /// ln Kd as a function of time and parameters.
    #[serde(rename = "f_func")]
    FFunc,
    /// As `FFunc`, with the simulated predictors as extra inputs.
    #[serde(rename = "g_func")]
    GFunc,
    /// One-step increment from the current state, time and parameters.
    #[serde(rename = "f_dyn")]
    FDyn,
    /// One-step increment from the current state and predictor changes.
    #[serde(rename = "g_dyn")]
    GDyn,
}

impl FormulationKind {
    pub const ALL: [FormulationKind; 4] = [Self::FFunc, Self::GFunc, Self::FDyn, Self::GDyn];

    pub fn is_dynamic(self) -> bool {
        matches!(self, Self::FDyn | Self::GDyn)
    }

    pub fn uses_predictors(self) -> bool {
        matches!(self, Self::GFunc | Self::GDyn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FFunc => "f_func",
            Self::GFunc => "g_func",
            Self::FDyn => "f_dyn",
            Self::GDyn => "g_dyn",
        }
    }
}

impl std::str::FromStr for FormulationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown formulation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrangement {
    /// One row per snapshot, scalar target.
    #[default]
    Pointwise,
    /// One row per trajectory, the whole series as target.
    Series,
}

impl std::str::FromStr for Arrangement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointwise" => Ok(Self::Pointwise),
            "series" => Ok(Self::Series),
            other => Err(Error::InvalidArgument(format!("unknown arrangement `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Formulation {
    pub kind: FormulationKind,
    pub arrangement: Arrangement,
}

impl Formulation {
    pub fn new(kind: FormulationKind, arrangement: Arrangement) -> Result<Self> {
        let f = Self { kind, arrangement };
        f.validate()?;
        Ok(f)
    }

    pub fn pointwise(kind: FormulationKind) -> Self {
        Self {
            kind,
            arrangement: Arrangement::Pointwise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_dynamic() && self.arrangement == Arrangement::Series {
            return Err(Error::Unsupported(format!(
                "{} is a one-step map and has no series arrangement",
                self.kind.as_str()
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Formulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = match self.arrangement {
            Arrangement::Pointwise => "pointwise",
            Arrangement::Series => "series",
        };
        write!(f, "{}/{a}", self.kind.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulatorConfig {
    pub formulation: FormulationKind,
    pub arrangement: Arrangement,
    pub learner: LearnerKind,
    pub use_clustering: bool,
    pub clustering: ClusterConfig,
    pub forest: ForestConfig,
    pub network: NetworkConfig,
    /// Central probability of the prediction bands.
    pub band_level: f64,
    /// Tree subsets rolled out for forest bands of dynamic formulations.
    pub rollout_subsets: usize,
    /// Master seed; component seeds are folded into it.
    pub seed: u64,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        Self {
            formulation: FormulationKind::FFunc,
            arrangement: Arrangement::Pointwise,
            learner: LearnerKind::Forest,
            use_clustering: true,
            clustering: ClusterConfig::default(),
            forest: ForestConfig::default(),
            network: NetworkConfig::default(),
            band_level: 0.95,
            rollout_subsets: 100,
            seed: 0,
        }
    }
}

impl EmulatorConfig {
    pub fn formulation(&self) -> Formulation {
        Formulation {
            kind: self.formulation,
            arrangement: self.arrangement,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.formulation().validate()?;
        if self.learner == LearnerKind::Forest && self.arrangement == Arrangement::Series {
            return Err(Error::Unsupported(
                "the series arrangement needs a vector-output learner; use learner = \"mlp\"".into(),
            ));
        }
        if !(self.band_level > 0.0 && self.band_level < 1.0) {
            return Err(Error::InvalidArgument(format!("band_level must lie in (0, 1), got {}", self.band_level)));
        }
        if self.rollout_subsets == 0 {
            return Err(Error::InvalidArgument("rollout_subsets must be >= 1".into()));
        }
        if self.learner == LearnerKind::Mlp {
            if self.network.ensemble_size == 0 {
                return Err(Error::InvalidArgument("ensemble_size must be >= 1".into()));
            }
            self.network.train.validate()?;
        }
        Ok(())
    }
}

/// A deployable surrogate: one learner per cluster (or a single one).
#[derive(Debug, Clone, PartialEq)]
pub struct EmulatorBundle {
    pub formulation: Formulation,
    pub learner_kind: LearnerKind,
    pub cluster_model: Option<ClusterModel>,
    /// Indexed by cluster label.
    pub models: Vec<TrainedLearner>,
    pub normalization: NormalizationMaps,
    pub grid: TimeGrid,
    /// Training rows seen by each model.
    pub training_rows: Vec<usize>,
    pub config: EmulatorConfig,
}

/// Rows of the training part of `ds`.
pub fn arrange(ds: &Dataset, f: Formulation) -> Result<Arranged> {
    arrange_samples(&ds.train_samples()?, f)
}

fn training_groups(ds: &Dataset, cfg: &EmulatorConfig) -> Result<(Option<ClusterModel>, Vec<Vec<usize>>)> {
    let split = ds
        .split()
        .ok_or_else(|| Error::MissingInput("dataset has no train/test split".into()))?;
    if !cfg.use_clustering {
        return Ok((None, vec![split.train.clone()]));
    }
    let ccfg = ClusterConfig {
        seed: rng::fold(cfg.seed, &[1, cfg.clustering.seed]),
        ..cfg.clustering.clone()
    };
    let model = dtw_kmeans(ds, &ccfg)?;
    let mut groups = vec![Vec::new(); model.k];
    for (&member, &label) in model.members.iter().zip(&model.labels) {
        groups[label].push(member);
    }
    for (label, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(Error::ClusterTooSmall { label, size: g.len() });
        }
    }
    Ok((Some(model), groups))
}

pub fn train_emulator(ds: &Dataset, cfg: &EmulatorConfig) -> Result<EmulatorBundle> {
    cfg.validate()?;
    let f = cfg.formulation();
    let grid = ds.grid().ok_or(Error::Empty("dataset"))?.clone();
    let (cluster_model, groups) = training_groups(ds, cfg)?;
    let mut models = Vec::with_capacity(groups.len());
    let mut training_rows = Vec::with_capacity(groups.len());
    for (c, group) in groups.iter().enumerate() {
        let samples: Vec<&Trajectory> = group.iter().map(|&i| &ds.samples()[i]).collect();
        let rows = arrange_samples(&samples, f)?;
        let seed = rng::fold(cfg.seed, &[2, c as u64]);
        models.push(TrainedLearner::fit(
            cfg.learner,
            rows.x.view(),
            rows.y.view(),
            &cfg.forest,
            &cfg.network,
            cfg.rollout_subsets,
            seed,
        )?);
        training_rows.push(rows.x.nrows());
    }
    let normalization = NormalizationMaps::for_samples(ds.train_samples()?)?;
    Ok(EmulatorBundle {
        formulation: f,
        learner_kind: cfg.learner,
        cluster_model,
        models,
        normalization,
        grid,
        training_rows,
        config: cfg.clone(),
    })
}

/// Predicted ln Kd series with a central band.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPrediction {
    pub cluster: usize,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Rolls a one-step map forward from `ln_kd0`: `ln Kd(t_{k+1}) = ln Kd(t_k) +
/// step(k, features_k)`.
pub fn rollout<F>(
    f: Formulation,
    grid: &TimeGrid,
    p: &ParameterVector,
    gamma: Option<&NormalizedPredictors>,
    ln_kd0: f64,
    mut step: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64]) -> Result<f64>,
{
    if !f.kind.is_dynamic() {
        return Err(Error::Unsupported(format!("{f} is not a one-step formulation")));
    }
    let r = rescale(p)?.values;
    let m = grid.len();
    let mut series = Vec::with_capacity(m);
    series.push(ln_kd0);
    for k in 0..m - 1 {
        let x = pointwise_row(f, grid, &r, gamma, k, series[k])?;
        let next = series[k] + step(k, &x)?;
        series.push(next);
    }
    Ok(series)
}

fn band_from_trajectories(trajectories: &[Vec<f64>], level: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = trajectories[0].len();
    let mut lo = Vec::with_capacity(m);
    let mut hi = Vec::with_capacity(m);
    for k in 0..m {
        let column: Vec<f64> = trajectories.iter().map(|t| t[k]).collect();
        let (a, b) = metrics::central_interval(&column, level)?;
        lo.push(a);
        hi.push(b);
    }
    Ok((lo, hi))
}

impl EmulatorBundle {
    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn cluster_of(&self, p: &ParameterVector) -> Result<usize> {
        match &self.cluster_model {
            Some(cm) => assign_cluster(cm, p),
            None => Ok(0),
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        feature_names(self.formulation, self.grid.len())
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.cluster_model.as_ref().map_or(1, |c| c.k);
        if self.models.len() != expected || self.training_rows.len() != expected {
            return Err(Error::Format(format!(
                "bundle has {} models for {expected} clusters",
                self.models.len()
            )));
        }
        let (s, r) = (n_features(self.formulation, self.grid.len()), n_outputs(self.formulation, self.grid.len()));
        for m in &self.models {
            if m.kind() != self.learner_kind || m.n_features() != s || m.n_outputs() != r {
                return Err(Error::Format("model shape does not match the formulation".into()));
            }
        }
        if let Some(c) = &self.cluster_model {
            c.validate()?;
        }
        self.formulation.validate()
    }
}

/// Predicts the ln Kd series of parameter vector `p`. `gamma` (raw
/// predictor series on the bundle grid) is required by the predictor
/// formulations and `ln_kd0` by the dynamic ones.
pub fn predict_series(
    b: &EmulatorBundle,
    p: &ParameterVector,
    gamma: Option<(&[f64], &[f64])>,
    ln_kd0: Option<f64>,
) -> Result<SeriesPrediction> {
    p.validate()?;
    let f = b.formulation;
    let grid = &b.grid;
    let m = grid.len();
    let level = b.config.band_level;
    let gamma = if f.kind.uses_predictors() {
        let (g1, g2) = gamma.ok_or_else(|| Error::MissingInput(format!("{f} needs the predictor series gamma")))?;
        if g1.len() != m || g2.len() != m {
            return Err(Error::ShapeMismatch {
                expected: m,
                got: g1.len().min(g2.len()),
            });
        }
        Some(NormalizedPredictors::from_raw(g1, g2)?)
    } else {
        None
    };
    let cluster = b.cluster_of(p)?;
    let model = &b.models[cluster];
    let r = rescale(p)?.values;

    if f.kind.is_dynamic() {
        let x0 = ln_kd0.ok_or_else(|| Error::MissingInput(format!("{f} needs the initial value ln_kd0")))?;
        if !x0.is_finite() {
            return Err(Error::InvalidArgument("ln_kd0 must be finite".into()));
        }
        let mean = rollout(f, grid, p, gamma.as_ref(), x0, |_, x| Ok(model.predict_mean(x)?[0]))?;
        let members: Vec<Vec<f64>> = (0..model.rollout_members())
            .into_par_iter()
            .map(|i| rollout(f, grid, p, gamma.as_ref(), x0, |_, x| Ok(model.predict_rollout_member(i, x)?[0])))
            .collect::<Result<_>>()?;
        let (lo, hi) = band_from_trajectories(&members, level)?;
        return Ok(SeriesPrediction { cluster, mean, lo, hi });
    }

    let (mean, lo, hi) = match f.arrangement {
        Arrangement::Series => {
            let x = series_row(f, grid, &r, gamma.as_ref())?;
            let mean = model.predict_mean(&x)?;
            let (lo, hi) = band_from_trajectories(&model.spread(&x)?, level)?;
            (mean, lo, hi)
        }
        Arrangement::Pointwise => {
            let mut mean = Vec::with_capacity(m);
            let mut lo = Vec::with_capacity(m);
            let mut hi = Vec::with_capacity(m);
            for k in 0..m {
                let x = pointwise_row(f, grid, &r, gamma.as_ref(), k, f64::NAN)?;
                mean.push(model.predict_mean(&x)?[0]);
                let column: Vec<f64> = model.spread(&x)?.into_iter().map(|v| v[0]).collect();
                let (a, z) = metrics::central_interval(&column, level)?;
                lo.push(a);
                hi.push(z);
            }
            (mean, lo, hi)
        }
    };
    Ok(SeriesPrediction { cluster, mean, lo, hi })
}

/// Prediction for a stored trajectory, taking predictors and the initial
/// value from it.
pub fn predict_trajectory(b: &EmulatorBundle, traj: &Trajectory) -> Result<SeriesPrediction> {
    if traj.grid != b.grid {
        return Err(Error::InvalidArgument("trajectory grid differs from the bundle grid".into()));
    }
    predict_series(
        b,
        &traj.params,
        Some((&traj.gamma1, &traj.gamma2)),
        traj.ln_kd.first().copied(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEvaluation {
    /// Dataset index.
    pub sample: usize,
    pub error: f64,
    /// Share of this sample's snapshots inside the band.
    pub coverage: f64,
    pub prediction: SeriesPrediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub samples: Vec<SampleEvaluation>,
    pub average: f64,
    /// Share of all test snapshots inside their band.
    pub coverage: f64,
}

fn coverage(truth: &[f64], p: &SeriesPrediction) -> f64 {
    let inside = truth
        .iter()
        .zip(p.lo.iter().zip(&p.hi))
        .filter(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
        .count();
    inside as f64 / truth.len() as f64
}

/// Relative error and band coverage on every test sample of `ds`.
pub fn evaluate(b: &EmulatorBundle, ds: &Dataset) -> Result<EvaluationReport> {
    let split = ds
        .split()
        .ok_or_else(|| Error::MissingInput("dataset has no train/test split".into()))?;
    if split.test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let samples: Vec<SampleEvaluation> = split
        .test
        .par_iter()
        .map(|&i| {
            let traj = &ds.samples()[i];
            let prediction = predict_trajectory(b, traj)?;
            Ok(SampleEvaluation {
                sample: i,
                error: metrics::relative_error(&traj.ln_kd, &prediction.mean)?,
                coverage: coverage(&traj.ln_kd, &prediction),
                prediction,
            })
        })
        .collect::<Result<_>>()?;
    let errors: Vec<f64> = samples.iter().map(|s| s.error).collect();
    let points: usize = samples.iter().map(|s| s.prediction.mean.len()).sum();
    let covered: f64 = samples.iter().map(|s| s.coverage * s.prediction.mean.len() as f64).sum();
    Ok(EvaluationReport {
        average: metrics::mean(&errors),
        coverage: covered / points as f64,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub names: Vec<String>,
    /// Importance per feature, averaged over clusters by training rows.
    pub scores: Vec<f64>,
    /// Feature indices by decreasing score; empty when nothing was split.
    pub ranking: Vec<usize>,
}

impl ImportanceReport {
    /// Position of each parameter `p1..p7` among the parameters only.
    pub fn parameter_ranking(&self) -> Vec<usize> {
        let offset = self.names.len() - N_PARAMS;
        self.ranking.iter().filter(|&&i| i >= offset).map(|&i| i - offset).collect()
    }
}

pub fn importance_report(b: &EmulatorBundle) -> Result<ImportanceReport> {
    let names = b.feature_names();
    let mut scores = vec![0.0; names.len()];
    let total: usize = b.training_rows.iter().sum();
    for (model, &rows) in b.models.iter().zip(&b.training_rows) {
        let TrainedLearner::Forest(f) = model else {
            return Err(Error::Unsupported("importance scores need a forest learner".into()));
        };
        let w = rows as f64 / total as f64;
        for (s, v) in scores.iter_mut().zip(f.forest.feature_importance()) {
            *s += w * v;
        }
    }
    let mut ranking: Vec<usize> = if scores.iter().any(|&s| s > 0.0) {
        (0..names.len()).collect()
    } else {
        Vec::new()
    };
    ranking.sort_by(|&a, &c| scores[c].total_cmp(&scores[a]).then(a.cmp(&c)));
    Ok(ImportanceReport { names, scores, ranking })
}
