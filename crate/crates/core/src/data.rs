//! Trajectories, datasets, the train/test protocol and predictor
//! normalization.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{parameter_maps, AffineMap, ParameterVector, N_PARAMS};
use crate::rng;

pub const DEFAULT_T_MIN: f64 = 1e3;
pub const DEFAULT_T_MAX: f64 = 1e5;
pub const DEFAULT_M: usize = 50;

/// Log-uniform snapshot times in years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn log_uniform(t_min: f64, t_max: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("time grid needs M >= 2, got {m}")));
        }
        if !(t_min > 0.0 && t_max > t_min && t_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time bounds must satisfy 0 < t_min < t_max, got [{t_min}, {t_max}]"
            )));
        }
        let (a, b) = (t_min.ln(), t_max.ln());
        let step = (b - a) / (m - 1) as f64;
        let mut times: Vec<f64> = (0..m).map(|k| (a + step * k as f64).exp()).collect();
        times[0] = t_min;
        times[m - 1] = t_max;
        Ok(Self { times })
    }

    /// Accepts an explicit grid, e.g. one read back from a dataset file.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidArgument("time grid needs at least 2 points".into()));
        }
        if times[0] <= 0.0 || times.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::InvalidArgument(
                "time grid must be positive and strictly increasing".into(),
            ));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// `log10 t` mapped affinely so the grid spans `[-1, 1]`.
    pub fn time_map(&self) -> AffineMap {
        AffineMap::onto_unit_interval(self.first().log10(), self.last().log10())
            .expect("grid is strictly increasing")
    }

    pub fn time_feature(&self, t: f64) -> f64 {
        let k_last = self.times.len() - 1;
        if t == self.times[0] {
            -1.0
        } else if t == self.times[k_last] {
            1.0
        } else {
            self.time_map().apply(t.log10())
        }
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self::log_uniform(DEFAULT_T_MIN, DEFAULT_T_MAX, DEFAULT_M).expect("valid default grid")
    }
}

/// One simulated (or synthetic) history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub params: ParameterVector,
    pub grid: TimeGrid,
    /// natural log of Kd
    pub ln_kd: Vec<f64>,
    /// pH(t)
    pub gamma1: Vec<f64>,
    /// log10 [Ca²⁺](t)
    pub gamma2: Vec<f64>,
}

impl Trajectory {
    pub fn new(
        params: ParameterVector,
        grid: TimeGrid,
        ln_kd: Vec<f64>,
        gamma1: Vec<f64>,
        gamma2: Vec<f64>,
    ) -> Result<Self> {
        let m = grid.len();
        for (name, s) in [("ln_kd", &ln_kd), ("gamma1", &gamma1), ("gamma2", &gamma2)] {
            if s.len() != m {
                return Err(Error::InvalidArgument(format!(
                    "{name} has length {}, grid has {m}",
                    s.len()
                )));
            }
        }
        if ln_kd.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("ln_kd must be finite".into()));
        }
        Ok(Self {
            params,
            grid,
            ln_kd,
            gamma1,
            gamma2,
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// False-run filter: full-length finite series and a physical pH.
    pub fn is_valid(&self) -> bool {
        let m = self.grid.len();
        self.ln_kd.len() == m
            && self.gamma1.len() == m
            && self.gamma2.len() == m
            && self.ln_kd.iter().chain(&self.gamma1).chain(&self.gamma2).all(|v| v.is_finite())
            && self.gamma1.iter().all(|ph| (0.0..=14.0).contains(ph))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Trajectory>,
    split: Option<Split>,
}

impl Dataset {
    /// Rejects duplicated parameter vectors and trajectories on differing grids.
    pub fn new(samples: Vec<Trajectory>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if !seen.insert(s.params.bits()) {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} duplicates an earlier parameter vector"
                )));
            }
            if s.grid != samples[0].grid {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} uses a different time grid"
                )));
            }
        }
        Ok(Self {
            samples,
            split: None,
        })
    }

    pub fn empty() -> Self {
        Self {
            samples: Vec::new(),
            split: None,
        }
    }

    pub fn samples(&self) -> &[Trajectory] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self) -> Option<&Split> {
        self.split.as_ref()
    }

    pub fn grid(&self) -> Option<&TimeGrid> {
        self.samples.first().map(|s| &s.grid)
    }

    pub fn with_split(mut self, split: Split) -> Result<Self> {
        let n = self.samples.len();
        let mut seen = vec![false; n];
        for &i in split.train.iter().chain(&split.test) {
            if i >= n || seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range or repeated in split"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("split does not cover every sample".into()));
        }
        self.split = Some(split);
        Ok(self)
    }

    pub fn train_samples(&self) -> Result<Vec<&Trajectory>> {
        let split = self.split.as_ref().ok_or(Error::MissingInput("train/test split".into()))?;
        Ok(split.train.iter().map(|&i| &self.samples[i]).collect())
    }

    pub fn test_samples(&self) -> Result<Vec<&Trajectory>> {
        let split = self.split.as_ref().ok_or(Error::MissingInput("train/test split".into()))?;
        Ok(split.test.iter().map(|&i| &self.samples[i]).collect())
    }
}

/// Test set drawn uniformly without replacement; the remaining training
/// indices come out in random order.
pub fn split_train_test(ds: Dataset, n_test: usize, seed: u64) -> Result<Dataset> {
    let n = ds.len();
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidArgument(format!(
            "n_test must satisfy 0 < n_test < {n}, got {n_test}"
        )));
    }
    let mut rng = rng::stream(seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    train.shuffle(&mut rng);
    ds.with_split(Split { train, test })
}

/// Initial predictor values of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorRefs {
    pub gamma1_0: f64,
    pub gamma2_0: f64,
}

impl PredictorRefs {
    pub fn from_series(gamma1: &[f64], gamma2: &[f64]) -> Result<Self> {
        let (g1, g2) = match (gamma1.first(), gamma2.first()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::Empty("predictor series")),
        };
        if g1 == 0.0 || g2 == 0.0 || !g1.is_finite() || !g2.is_finite() {
            return Err(Error::ZeroNorm("predictor initial value is zero or not finite"));
        }
        Ok(Self {
            gamma1_0: g1,
            gamma2_0: g2,
        })
    }

    pub fn normalize(&self, gamma1: &[f64], gamma2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            gamma1.iter().map(|v| v / self.gamma1_0).collect(),
            gamma2.iter().map(|v| v / self.gamma2_0).collect(),
        )
    }

    pub fn denormalize(&self, gamma1: &[f64], gamma2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            gamma1.iter().map(|v| v * self.gamma1_0).collect(),
            gamma2.iter().map(|v| v * self.gamma2_0).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMaps {
    pub param_maps: [AffineMap; N_PARAMS],
    pub gamma_refs: Vec<PredictorRefs>,
}

impl NormalizationMaps {
    pub fn for_samples<'a>(samples: impl IntoIterator<Item = &'a Trajectory>) -> Result<Self> {
        let gamma_refs = samples
            .into_iter()
            .map(|t| PredictorRefs::from_series(&t.gamma1, &t.gamma2))
            .collect::<Result<_>>()?;
        Ok(Self {
            param_maps: parameter_maps(),
            gamma_refs,
        })
    }
}

/// Divides each predictor series by its own first value.
pub fn normalize_predictors(traj: &Trajectory) -> Result<(Vec<f64>, Vec<f64>, PredictorRefs)> {
    let refs = PredictorRefs::from_series(&traj.gamma1, &traj.gamma2)?;
    let (g1, g2) = refs.normalize(&traj.gamma1, &traj.gamma2);
    Ok((g1, g2, refs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(params: ParameterVector, gamma1: Vec<f64>, gamma2: Vec<f64>) -> Trajectory {
        let m = gamma1.len();
        let grid = TimeGrid::log_uniform(1e3, 1e5, m).unwrap();
        Trajectory::new(params, grid, vec![1.0; m], gamma1, gamma2).unwrap()
    }

    #[test]
    fn default_grid_is_log_uniform() {
        let g = TimeGrid::default();
        assert_eq!(g.len(), 50);
        assert_eq!(g.first(), 1e3);
        assert_eq!(g.last(), 1e5);
        let t = g.times();
        let ratio = t[1] / t[0];
        for w in t.windows(2) {
            assert!(w[1] > w[0]);
            assert!(((w[1] / w[0]) - ratio).abs() <= 1e-9 * ratio);
        }
        let logs: Vec<f64> = t.iter().map(|v| v.ln()).collect();
        let step = logs[1] - logs[0];
        for w in logs.windows(2) {
            assert!(((w[1] - w[0]) - step).abs() <= 1e-9 * step);
        }
    }

    #[test]
    fn time_feature_spans_unit_interval() {
        let g = TimeGrid::default();
        assert_eq!(g.time_feature(1e3), -1.0);
        assert_eq!(g.time_feature(1e5), 1.0);
        assert!(g.time_feature(1e4).abs() < 1e-12);
    }

    #[test]
    fn constant_predictor_normalizes_to_ones() {
        let t = traj(ParameterVector::reference(), vec![8.0; 4], vec![-2.0; 4]);
        let (g1, g2, _) = normalize_predictors(&t).unwrap();
        assert!(g1.iter().chain(&g2).all(|&v| v == 1.0));
    }

    #[test]
    fn normalization_divides_by_initial_value() {
        let t = traj(ParameterVector::reference(), vec![8.0, 8.8], vec![-2.0, -1.0]);
        let (g1, g2, refs) = normalize_predictors(&t).unwrap();
        assert_eq!(g1[0], 1.0);
        assert!((g1[1] - 1.1).abs() < 1e-15);
        assert_eq!(g2, vec![1.0, 0.5]);
        let (b1, b2) = refs.denormalize(&g1, &g2);
        for (a, b) in b1.iter().zip(&t.gamma1).chain(b2.iter().zip(&t.gamma2)) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn zero_initial_predictor_is_rejected() {
        let t = traj(ParameterVector::reference(), vec![0.0, 1.0], vec![-2.0, -1.0]);
        assert!(matches!(normalize_predictors(&t), Err(Error::ZeroNorm(_))));
    }

    fn dataset(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let mut p = ParameterVector::reference();
                p.ilsoh = 3.0 + 3.0 * i as f64 / n as f64;
                traj(p, vec![8.0; 3], vec![-2.0; 3])
            })
            .collect();
        Dataset::new(samples).unwrap()
    }

    #[test]
    fn split_counts_and_partition() {
        let ds = split_train_test(dataset(172), 6, 42).unwrap();
        let s = ds.split().unwrap();
        assert_eq!(s.train.len(), 166);
        assert_eq!(s.test.len(), 6);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..172).collect::<Vec<_>>());
        let again = split_train_test(dataset(172), 6, 42).unwrap();
        assert_eq!(ds.split(), again.split());
    }

    #[test]
    fn split_rejects_bad_n_test() {
        assert!(split_train_test(dataset(5), 0, 0).is_err());
        assert!(split_train_test(dataset(5), 5, 0).is_err());
    }

    #[test]
    fn split_membership_frequency_is_uniform() {
        let (n, n_test, seeds) = (12usize, 3usize, 30_000u64);
        let mut counts = vec![0usize; n];
        let base = dataset(n);
        for seed in 0..seeds {
            let ds = split_train_test(base.clone(), n_test, seed).unwrap();
            for &i in &ds.split().unwrap().test {
                counts[i] += 1;
            }
        }
        let p = n_test as f64 / n as f64;
        let mean = seeds as f64 * p;
        let sigma = (seeds as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "count {c} vs mean {mean}");
        }
    }

    #[test]
    fn duplicate_parameters_are_rejected() {
        let p = ParameterVector::reference();
        let a = traj(p, vec![8.0; 2], vec![-2.0; 2]);
        assert!(Dataset::new(vec![a.clone(), a]).is_err());
    }

    #[test]
    fn validity_predicate_flags_unphysical_ph() {
        let mut t = traj(ParameterVector::reference(), vec![8.0; 3], vec![-2.0; 3]);
        assert!(t.is_valid());
        t.gamma1[2] = 14.5;
        assert!(!t.is_valid());
    }
}
