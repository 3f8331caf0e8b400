//! Bagged regression forest.

mod persist;
mod tree;

pub use tree::{fit_tree, ClassificationTree, Tree, TreeNode, TreeParams};

use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` uses every feature.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 1000,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            features_per_split: self.features_per_split,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    n_features: usize,
    importances: Vec<f64>,
    config: ForestConfig,
}

/// Each tree draws its bootstrap sample from sub-stream `i` of the seed, so
/// adding trees leaves earlier ones unchanged.
pub fn fit_forest(x: ArrayView2<f64>, y: &[f64], cfg: &ForestConfig) -> Result<Forest> {
    tree::check_rows(x, y.len())?;
    if cfg.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be >= 1".into()));
    }
    let n = x.nrows();
    let params = cfg.tree_params();
    let fitted: Vec<tree::FitOutput> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(cfg.seed, i as u64);
            let samples: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            tree::build(x, y, 1, &samples, &params, rng.random())
        })
        .collect::<Result<_>>()?;

    let n_features = x.ncols();
    let mut importances = vec![0.0; n_features];
    let mut trees = Vec::with_capacity(fitted.len());
    for f in fitted {
        for (acc, v) in importances.iter_mut().zip(&f.importances) {
            *acc += v;
        }
        trees.push(f.tree);
    }
    normalize(&mut importances);
    Ok(Forest {
        trees,
        n_features,
        importances,
        config: cfg.clone(),
    })
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::ShapeMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn tree_predictions(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.trees.iter().map(|t| t.predict(x)).collect())
    }

    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        Ok(metrics::mean(&self.tree_predictions(x)?))
    }

    /// Central `level` band of the per-tree predictions.
    pub fn predict_interval(&self, x: &[f64], level: f64) -> Result<(f64, f64)> {
        metrics::central_interval(&self.tree_predictions(x)?, level)
    }

    /// Mean decrease in impurity, normalized to sum to one (all zero when no
    /// tree ever split).
    pub fn feature_importance(&self) -> &[f64] {
        &self.importances
    }

    /// Builds a forest from already fitted trees, recomputing nothing; the
    /// importances are taken as given.
    pub fn from_parts(trees: Vec<Tree>, importances: Vec<f64>, config: ForestConfig) -> Result<Self> {
        let n_features = importances.len();
        if trees.is_empty() {
            return Err(Error::Empty("forest trees"));
        }
        for t in &trees {
            t.validate()?;
            if t.n_features() != n_features || t.n_outputs() != 1 {
                return Err(Error::Format("tree shape does not match forest".into()));
            }
        }
        Ok(Self {
            trees,
            n_features,
            importances,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn cfg(n_trees: usize, bootstrap: bool) -> ForestConfig {
        ForestConfig {
            n_trees,
            bootstrap,
            seed: 3,
            ..ForestConfig::default()
        }
    }

    fn step_data(n: usize) -> (Array2<f64>, Vec<f64>) {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { i as f64 / n as f64 } else { ((i * 7) % 5) as f64 });
        let y = (0..n).map(|i| if (i as f64 / n as f64) < 0.4 { -1.0 } else { 2.0 }).collect();
        (x, y)
    }

    #[test]
    fn no_bootstrap_gives_identical_trees() {
        let (x, y) = step_data(30);
        let f = fit_forest(x.view(), &y, &cfg(5, false)).unwrap();
        let single = fit_tree(x.view(), &y, &TreeParams::default(), 0).unwrap();
        for t in f.trees() {
            assert_eq!(t.nodes(), f.trees()[0].nodes());
        }
        for i in 0..30 {
            let row = x.row(i).to_vec();
            assert_eq!(f.predict_mean(&row).unwrap(), single.predict(&row));
        }
    }

    #[test]
    fn constant_target_has_zero_width_band_and_zero_importance() {
        let x = Array2::from_shape_fn((20, 3), |(i, j)| (i * (j + 1)) as f64);
        let y = vec![1.5; 20];
        let f = fit_forest(x.view(), &y, &cfg(10, true)).unwrap();
        let p = [3.0, 1.0, 2.0];
        assert_eq!(f.predict_mean(&p).unwrap(), 1.5);
        assert_eq!(f.predict_interval(&p, 0.95).unwrap(), (1.5, 1.5));
        assert!(f.feature_importance().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_function_fits_training_set() {
        let (x, y) = step_data(1000);
        let f = fit_forest(x.view(), &y, &cfg(100, true)).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let sse: f64 = (0..1000)
            .map(|i| (f.predict_mean(&x.row(i).to_vec()).unwrap() - y[i]).powi(2))
            .sum();
        assert!(1.0 - sse / sst >= 0.999, "{sse} {sst}");
    }

    #[test]
    fn importance_concentrates_on_informative_feature() {
        let mut r = rng::stream(1, 0);
        let x = Array2::from_shape_fn((300, 2), |_| r.random_range(0.0f64..1.0));
        let y: Vec<f64> = (0..300).map(|i| x[[i, 0]]).collect();
        let f = fit_forest(x.view(), &y, &cfg(50, true)).unwrap();
        let imp = f.feature_importance();
        assert!(imp[0] >= 0.9, "{imp:?}");
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_lies_within_tree_range_and_band_holds_median() {
        let mut r = rng::stream(2, 0);
        let x = Array2::from_shape_fn((80, 3), |_| r.random_range(0.0f64..1.0));
        let y: Vec<f64> = (0..80).map(|i| (5.0 * x[[i, 0]]).sin() + x[[i, 1]]).collect();
        let f = fit_forest(x.view(), &y, &cfg(40, true)).unwrap();
        for probe in [[0.1, 0.5, 0.2], [0.9, 0.1, 0.7]] {
            let preds = f.tree_predictions(&probe).unwrap();
            let m = f.predict_mean(&probe).unwrap();
            let lo = preds.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = preds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo <= m && m <= hi);
            let (blo, bhi) = f.predict_interval(&probe, 0.95).unwrap();
            let med = metrics::median(&preds);
            assert!(blo <= med && med <= bhi);
        }
    }

    #[test]
    fn tree_order_does_not_change_prediction() {
        let (x, y) = step_data(50);
        let f = fit_forest(x.view(), &y, &cfg(20, true)).unwrap();
        let mut trees = f.trees().to_vec();
        trees.reverse();
        let g = Forest::from_parts(trees, f.feature_importance().to_vec(), f.config().clone()).unwrap();
        let probe = [0.37, 2.0];
        assert_eq!(f.predict_interval(&probe, 0.9).unwrap(), g.predict_interval(&probe, 0.9).unwrap());
        assert!((f.predict_mean(&probe).unwrap() - g.predict_mean(&probe).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn earlier_trees_do_not_depend_on_tree_count() {
        let (x, y) = step_data(40);
        let a = fit_forest(x.view(), &y, &cfg(5, true)).unwrap();
        let b = fit_forest(x.view(), &y, &cfg(9, true)).unwrap();
        assert_eq!(a.trees(), &b.trees()[..5]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let (x, y) = step_data(10);
        let f = fit_forest(x.view(), &y, &cfg(2, true)).unwrap();
        assert!(f.predict_mean(&[1.0]).is_err());
        assert!(f.predict_interval(&[1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn feature_subsampling_is_deterministic() {
        let (x, y) = step_data(60);
        let c = ForestConfig {
            features_per_split: Some(1),
            ..cfg(10, true)
        };
        assert_eq!(fit_forest(x.view(), &y, &c).unwrap(), fit_forest(x.view(), &y, &c).unwrap());
    }
}
