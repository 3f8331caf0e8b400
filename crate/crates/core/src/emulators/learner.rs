//! The two learner families behind an emulator, with the member structure
//! used for uncertainty bands.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{fit_forest, Forest, ForestConfig};
use crate::neural::{train_ensemble, LossHistory, MlpArchitecture, TrainConfig, WeightSet, DEFAULT_HIDDEN_WIDTH, DEFAULT_LAYERS};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Forest,
    Mlp,
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LearnerKind::Forest => "forest",
            LearnerKind::Mlp => "mlp",
        })
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forest" | "rf" => Ok(LearnerKind::Forest),
            "mlp" | "nn" => Ok(LearnerKind::Mlp),
            other => Err(Error::InvalidArgument(format!("unknown learner `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_width: usize,
    /// Total layer count including input and output.
    pub n_layers: usize,
    pub ensemble_size: usize,
    pub train: TrainConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            n_layers: DEFAULT_LAYERS,
            ensemble_size: 10,
            train: TrainConfig::default(),
        }
    }
}

/// A forest plus the tree subsets whose means are rolled out for bands of
/// the dynamic formulations.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestLearner {
    pub forest: Forest,
    pub subset_seed: u64,
    subsets: Vec<Vec<usize>>,
}

impl ForestLearner {
    /// `n_subsets` resamples of the trees, each as large as the forest and
    /// drawn with replacement.
    pub fn new(forest: Forest, n_subsets: usize, subset_seed: u64) -> Self {
        let n = forest.n_trees();
        let mut r = rng::stream(subset_seed, 0);
        let subsets = (0..n_subsets)
            .map(|_| (0..n).map(|_| r.random_range(0..n)).collect())
            .collect();
        Self {
            forest,
            subset_seed,
            subsets,
        }
    }

    pub fn n_subsets(&self) -> usize {
        self.subsets.len()
    }
}

/// Networks trained on standardized columns; predictions are mapped back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLearner {
    pub x_center: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_center: Vec<f64>,
    pub y_scale: Vec<f64>,
    pub members: Vec<WeightSet>,
    pub histories: Vec<LossHistory>,
}

/// Column means and deviations; constant columns keep unit scale.
fn column_moments(a: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = a.nrows() as f64;
    let center = a.mean_axis(Axis(0)).expect("nonempty").to_vec();
    let scale = a
        .axis_iter(Axis(1))
        .zip(&center)
        .map(|(col, m)| {
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (center, scale)
}

fn standardize(a: ArrayView2<f64>, center: &[f64], scale: &[f64]) -> Array2<f64> {
    let mut out = a.to_owned();
    for mut row in out.rows_mut() {
        for ((v, c), s) in row.iter_mut().zip(center).zip(scale) {
            *v = (*v - c) / s;
        }
    }
    out
}

impl MlpLearner {
    pub fn fit(x: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Empty("training rows"));
        }
        let (x_center, x_scale) = column_moments(x);
        let (y_center, y_scale) = column_moments(y);
        let xs = standardize(x, &x_center, &x_scale);
        let ys = standardize(y, &y_center, &y_scale);
        let arch = MlpArchitecture::uniform(x.ncols(), y.ncols(), cfg.hidden_width, cfg.n_layers)?;
        let train = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let trained = train_ensemble(&arch, xs.view(), ys.view(), &train, cfg.ensemble_size)?;
        let (members, histories) = trained.into_iter().unzip();
        Ok(Self {
            x_center,
            x_scale,
            y_center,
            y_scale,
            members,
            histories,
        })
    }

    pub fn predict_member(&self, m: usize, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.x_center.len() {
            return Err(Error::ShapeMismatch {
                expected: self.x_center.len(),
                got: x.len(),
            });
        }
        let xs: Vec<f64> = x
            .iter()
            .zip(&self.x_center)
            .zip(&self.x_scale)
            .map(|((v, c), s)| (v - c) / s)
            .collect();
        let out = self.members[m].forward(&xs)?;
        Ok(out
            .iter()
            .zip(&self.y_center)
            .zip(&self.y_scale)
            .map(|((v, c), s)| v * s + c)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedLearner {
    Forest(ForestLearner),
    Mlp(MlpLearner),
}

impl TrainedLearner {
    pub fn fit(
        kind: LearnerKind,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        forest: &ForestConfig,
        network: &NetworkConfig,
        n_subsets: usize,
        seed: u64,
    ) -> Result<Self> {
        match kind {
            LearnerKind::Forest => {
                if y.ncols() != 1 {
                    return Err(Error::Unsupported("forest learners predict a single output".into()));
                }
                let target: Vec<f64> = y.column(0).to_vec();
                let cfg = ForestConfig {
                    seed: rng::fold(seed, &[forest.seed]),
                    ..forest.clone()
                };
                let f = fit_forest(x, &target, &cfg)?;
                Ok(TrainedLearner::Forest(ForestLearner::new(f, n_subsets, rng::fold(seed, &[1]))))
            }
            LearnerKind::Mlp => {
                let seed = rng::fold(seed, &[network.train.seed]);
                Ok(TrainedLearner::Mlp(MlpLearner::fit(x, y, network, seed)?))
            }
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            TrainedLearner::Forest(_) => LearnerKind::Forest,
            TrainedLearner::Mlp(_) => LearnerKind::Mlp,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedLearner::Forest(f) => f.forest.n_features(),
            TrainedLearner::Mlp(m) => m.x_center.len(),
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            TrainedLearner::Forest(_) => 1,
            TrainedLearner::Mlp(m) => m.y_center.len(),
        }
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            TrainedLearner::Forest(f) => Ok(vec![f.forest.predict_mean(x)?]),
            TrainedLearner::Mlp(m) => {
                let mut acc = vec![0.0; m.y_center.len()];
                for i in 0..m.members.len() {
                    for (a, v) in acc.iter_mut().zip(m.predict_member(i, x)?) {
                        *a += v;
                    }
                }
                let n = m.members.len() as f64;
                Ok(acc.into_iter().map(|a| a / n).collect())
            }
        }
    }

    /// Per-member predictions at one row: trees or networks.
    pub fn spread(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        match self {
            TrainedLearner::Forest(f) => Ok(f.forest.tree_predictions(x)?.into_iter().map(|v| vec![v]).collect()),
            TrainedLearner::Mlp(m) => (0..m.members.len()).map(|i| m.predict_member(i, x)).collect(),
        }
    }

    /// Number of independent models rolled out for dynamic bands.
    pub fn rollout_members(&self) -> usize {
        match self {
            TrainedLearner::Forest(f) => f.subsets.len(),
            TrainedLearner::Mlp(m) => m.members.len(),
        }
    }

    pub fn predict_rollout_member(&self, member: usize, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            TrainedLearner::Forest(f) => {
                let preds = f.forest.tree_predictions(x)?;
                let subset = &f.subsets[member];
                Ok(vec![subset.iter().map(|&t| preds[t]).sum::<f64>() / subset.len() as f64])
            }
            TrainedLearner::Mlp(m) => m.predict_member(member, x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn mlp_learner_undoes_standardization() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| 100.0 + i as f64 * (j + 1) as f64);
        let y = x.map_axis(Axis(1), |r| 1000.0 + 3.0 * r[0] - r[1]).insert_axis(Axis(1));
        let cfg = NetworkConfig {
            hidden_width: 8,
            n_layers: 3,
            ensemble_size: 2,
            train: TrainConfig {
                epochs: 300,
                l2_lambda: 0.0,
                ..TrainConfig::default()
            },
        };
        let l = TrainedLearner::fit(LearnerKind::Mlp, x.view(), y.view(), &ForestConfig::default(), &cfg, 10, 1).unwrap();
        let row = x.row(7).to_vec();
        let pred = l.predict_mean(&row).unwrap()[0];
        assert!((pred - y[[7, 0]]).abs() < 0.02 * y[[7, 0]].abs(), "{pred} vs {}", y[[7, 0]]);
        assert_eq!(l.spread(&row).unwrap().len(), 2);
        assert_eq!(l.rollout_members(), 2);
    }

    #[test]
    fn forest_subsets_are_reproducible_resamples() {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let y = x.clone();
        let cfg = ForestConfig {
            n_trees: 7,
            ..ForestConfig::default()
        };
        let a = TrainedLearner::fit(LearnerKind::Forest, x.view(), y.view(), &cfg, &NetworkConfig::default(), 5, 3).unwrap();
        let b = TrainedLearner::fit(LearnerKind::Forest, x.view(), y.view(), &cfg, &NetworkConfig::default(), 5, 3).unwrap();
        assert_eq!(a, b);
        let TrainedLearner::Forest(f) = &a else { panic!() };
        assert_eq!(f.n_subsets(), 5);
        assert!(f.subsets.iter().all(|s| s.len() == 7 && s.iter().all(|&t| t < 7)));
        let preds = f.forest.tree_predictions(&[4.0]).unwrap();
        let m = a.predict_rollout_member(2, &[4.0]).unwrap()[0];
        let lo = preds.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = preds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= m && m <= hi);
    }

    #[test]
    fn forest_rejects_vector_targets() {
        let x = Array2::zeros((4, 1));
        let y = Array2::zeros((4, 2));
        let r = TrainedLearner::fit(LearnerKind::Forest, x.view(), y.view(), &ForestConfig::default(), &NetworkConfig::default(), 1, 0);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }
}
