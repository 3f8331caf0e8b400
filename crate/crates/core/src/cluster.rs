//! k-means over ln Kd trajectories under DTW, with a parameter-space rule that
//! assigns unseen samples to the learned clusters.

use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Trajectory};
use crate::dtw::{self, DtwConfig};
use crate::error::{Error, Result};
use crate::forest::ClassificationTree;
use crate::params::{rescale, ParameterVector};
use crate::rng;

/// Rescaled parameters the assignment rule looks at: smsoh, pH and Ca.
pub const RULE_FEATURES: [usize; 3] = [1, 2, 3];

/// How ln Kd series are standardized before DTW.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    /// One mean and standard deviation pooled over every training value.
    /// Level differences then dominate the DTW cost over shape.
    Dataset,
    /// Each series to zero mean and unit variance on its own.
    #[default]
    Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub dba_iters: usize,
    pub rule_depth: usize,
    pub standardization: Standardization,
    pub dtw: DtwConfig,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 2,
            restarts: 5,
            max_iters: 50,
            dba_iters: 10,
            rule_depth: 3,
            standardization: Standardization::Series,
            dtw: DtwConfig::default(),
            seed: 0,
        }
    }
}

impl ClusterConfig {
    fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if n < self.k {
            return Err(Error::InvalidArgument(format!(
                "need at least k = {} training series, got {n}",
                self.k
            )));
        }
        if self.restarts == 0 || self.max_iters == 0 {
            return Err(Error::InvalidArgument("restarts and max_iters must be >= 1".into()));
        }
        if self.rule_depth == 0 {
            return Err(Error::InvalidArgument("rule_depth must be >= 1".into()));
        }
        self.dtw.validate(m)
    }
}

/// Affine standardization applied to ln Kd before clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScaler {
    pub mode: Standardization,
    /// Pooled mean and deviation; unused in per-series mode.
    pub mean: f64,
    pub std: f64,
}

impl SeriesScaler {
    pub fn fit(series: &[&[f64]], mode: Standardization) -> Result<Self> {
        let (mean, std) = match mode {
            Standardization::Dataset => moments(series.iter().flat_map(|s| s.iter().copied()))?,
            Standardization::Series => (0.0, 1.0),
        };
        Ok(Self { mode, mean, std })
    }

    pub fn apply(&self, s: &[f64]) -> Result<Vec<f64>> {
        let (mean, std) = match self.mode {
            Standardization::Dataset => (self.mean, self.std),
            Standardization::Series => moments(s.iter().copied())?,
        };
        Ok(s.iter().map(|v| (v - mean) / std).collect())
    }
}

/// Mean and population deviation; a constant input keeps unit scale.
fn moments(values: impl Iterator<Item = f64> + Clone) -> Result<(f64, f64)> {
    let n = values.clone().count();
    if n == 0 {
        return Err(Error::Empty("series"));
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    Ok((mean, if std > 0.0 { std } else { 1.0 }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// Standardized centroid series, largest cluster first.
    pub centroids: Vec<Vec<f64>>,
    /// Dataset index of each training sample, parallel to `labels`.
    pub members: Vec<usize>,
    pub labels: Vec<usize>,
    pub scaler: SeriesScaler,
    pub dtw: DtwConfig,
    /// Total squared DTW cost of the kept restart.
    pub objective: f64,
    /// Objective after every assignment step of the kept restart.
    pub history: Vec<f64>,
    pub rule: ClassificationTree,
}

#[derive(Debug)]
struct Run {
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    objective: f64,
    history: Vec<f64>,
}

fn nearest(s: &[f64], centroids: &[Vec<f64>], cfg: &DtwConfig) -> Result<(usize, f64)> {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dtw::dtw_cost(s, centroid, cfg)?;
        if d < best.1 {
            best = (c, d);
        }
    }
    Ok(best)
}

fn assign(series: &[Vec<f64>], centroids: &[Vec<f64>], cfg: &DtwConfig) -> Result<(Vec<usize>, Vec<f64>)> {
    let pairs: Vec<(usize, f64)> = series
        .par_iter()
        .map(|s| nearest(s, centroids, cfg))
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Gives every empty cluster the series farthest from its own centroid,
/// taken only from clusters that keep at least one member.
fn reseed_empty(series: &[Vec<f64>], labels: &mut [usize], costs: &mut [f64], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..series.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(b.cmp(&a)))
            .expect("n >= k leaves a cluster with two members");
        centroids[empty] = series[donor].clone();
        labels[donor] = empty;
        costs[donor] = 0.0;
    }
}

fn lloyd(series: &[Vec<f64>], cfg: &ClusterConfig, restart: usize) -> Result<Run> {
    let mut r = rng::stream(cfg.seed, restart as u64);
    let init = index::sample(&mut r, series.len(), cfg.k);
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|i| series[i].clone()).collect();
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..cfg.max_iters {
        let (mut next, mut costs) = assign(series, &centroids, &cfg.dtw)?;
        reseed_empty(series, &mut next, &mut costs, &mut centroids);
        history.push(costs.iter().sum());
        if next == labels {
            break;
        }
        labels = next;
        centroids = (0..cfg.k)
            .into_par_iter()
            .map(|c| {
                let group: Vec<&[f64]> = labels
                    .iter()
                    .zip(series)
                    .filter(|(&l, _)| l == c)
                    .map(|(_, s)| s.as_slice())
                    .collect();
                dtw::dba_centroid(&group, &centroids[c], cfg.dba_iters, &cfg.dtw)
            })
            .collect::<Result<_>>()?;
    }
    let objective = labels
        .iter()
        .zip(series)
        .map(|(&l, s)| dtw::dtw_cost(s, &centroids[l], &cfg.dtw))
        .sum::<Result<f64>>()?;
    history.push(objective);
    Ok(Run {
        labels,
        centroids,
        objective,
        history,
    })
}

/// Renumbers clusters by decreasing size, ties by first member.
fn canonical_order(run: &mut Run) {
    let k = run.centroids.len();
    let mut sizes = vec![0usize; k];
    let mut first = vec![usize::MAX; k];
    for (i, &l) in run.labels.iter().enumerate() {
        sizes[l] += 1;
        first[l] = first[l].min(i);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(first[a].cmp(&first[b])));
    let mut new_label = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        new_label[old] = new;
    }
    run.labels.iter_mut().for_each(|l| *l = new_label[*l]);
    run.centroids = order.iter().map(|&old| run.centroids[old].clone()).collect();
}

fn rule_features(p: &ParameterVector) -> Result<[f64; 3]> {
    let r = rescale(p)?.values;
    Ok(RULE_FEATURES.map(|i| r[i]))
}

/// Clusters the given trajectories. `members` are their dataset indices.
pub fn dtw_kmeans_samples(samples: &[&Trajectory], members: Vec<usize>, cfg: &ClusterConfig) -> Result<ClusterModel> {
    if samples.len() != members.len() {
        return Err(Error::ShapeMismatch {
            expected: samples.len(),
            got: members.len(),
        });
    }
    let m = samples.first().map_or(0, |s| s.len());
    cfg.validate(samples.len(), m)?;
    let raw: Vec<&[f64]> = samples.iter().map(|s| s.ln_kd.as_slice()).collect();
    let scaler = SeriesScaler::fit(&raw, cfg.standardization)?;
    let series: Vec<Vec<f64>> = raw.iter().map(|s| scaler.apply(s)).collect::<Result<_>>()?;

    let mut best: Option<Run> = None;
    for restart in 0..cfg.restarts {
        let run = lloyd(&series, cfg, restart)?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let mut run = best.expect("restarts >= 1");
    canonical_order(&mut run);

    let feats: Vec<[f64; 3]> = samples.iter().map(|s| rule_features(&s.params)).collect::<Result<_>>()?;
    let x = Array2::from_shape_fn((feats.len(), 3), |(i, j)| feats[i][j]);
    let rule = ClassificationTree::fit(x.view(), &run.labels, cfg.k, cfg.rule_depth)?;
    Ok(ClusterModel {
        k: cfg.k,
        centroids: run.centroids,
        members,
        labels: run.labels,
        scaler,
        dtw: cfg.dtw,
        objective: run.objective,
        history: run.history,
        rule,
    })
}

/// Clusters the training part of `ds` (every sample when unsplit).
pub fn dtw_kmeans(ds: &Dataset, cfg: &ClusterConfig) -> Result<ClusterModel> {
    let members: Vec<usize> = match ds.split() {
        Some(s) => s.train.clone(),
        None => (0..ds.len()).collect(),
    };
    let samples: Vec<&Trajectory> = members.iter().map(|&i| &ds.samples()[i]).collect();
    dtw_kmeans_samples(&samples, members, cfg)
}

/// Cluster of an unseen sample from its parameters alone.
pub fn assign_cluster(model: &ClusterModel, p: &ParameterVector) -> Result<usize> {
    Ok(model.rule.predict(&rule_features(p)?))
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.labels.iter().for_each(|&l| sizes[l] += 1);
        sizes
    }

    /// Label the training run gave to dataset sample `idx`, if it was a member.
    pub fn training_label(&self, idx: usize) -> Option<usize> {
        self.members.iter().position(|&m| m == idx).map(|i| self.labels[i])
    }

    /// Nearest centroid of a full ln Kd series (needs the trajectory, unlike
    /// [`assign_cluster`]).
    pub fn nearest_centroid(&self, ln_kd: &[f64]) -> Result<usize> {
        let s = self.scaler.apply(ln_kd)?;
        Ok(nearest(&s, &self.centroids, &self.dtw)?.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Format(format!("cluster model: {msg}")));
        if self.k == 0 || self.centroids.len() != self.k {
            return bad("centroid count does not match k");
        }
        let m = self.centroids[0].len();
        if m == 0 || self.centroids.iter().any(|c| c.len() != m) {
            return bad("centroids differ in length");
        }
        if self.members.len() != self.labels.len() {
            return bad("members and labels differ in length");
        }
        if self.labels.iter().any(|&l| l >= self.k) {
            return bad("label out of range");
        }
        if self.cluster_sizes().contains(&0) {
            return bad("empty cluster");
        }
        if self.rule.n_features() != RULE_FEATURES.len() {
            return bad("assignment rule has the wrong number of inputs");
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let model: Self = serde_json::from_reader(f)?;
        model.validate()?;
        Ok(model)
    }
}
