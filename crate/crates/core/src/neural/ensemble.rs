use ndarray::ArrayView2;
use rayon::prelude::*;

use super::{train, LossHistory, MlpArchitecture, TrainConfig, WeightSet};
use crate::error::{Error, Result};
use crate::metrics;
use crate::rng;

/// Per-output mean and central band over ensemble members.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Trains `n_members` independently initialized networks. Member `i` uses a
/// seed folded from `cfg.seed` and `i`.
pub fn train_ensemble(
    arch: &MlpArchitecture,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    cfg: &TrainConfig,
    n_members: usize,
) -> Result<Vec<(WeightSet, LossHistory)>> {
    if n_members == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
    }
    (0..n_members)
        .into_par_iter()
        .map(|i| {
            let member = TrainConfig {
                seed: rng::fold(cfg.seed, &[i as u64]),
                ..cfg.clone()
            };
            train(arch, x, y, &member)
        })
        .collect()
}

pub fn ensemble_predict(models: &[WeightSet], x: &[f64], level: f64) -> Result<EnsemblePrediction> {
    if models.is_empty() {
        return Err(Error::Empty("ensemble"));
    }
    let outputs: Vec<Vec<f64>> = models.iter().map(|m| m.forward(x)).collect::<Result<_>>()?;
    let r = outputs[0].len();
    let mut pred = EnsemblePrediction {
        mean: Vec::with_capacity(r),
        lo: Vec::with_capacity(r),
        hi: Vec::with_capacity(r),
    };
    for j in 0..r {
        let column: Vec<f64> = outputs.iter().map(|o| o[j]).collect();
        let (lo, hi) = metrics::central_interval(&column, level)?;
        pred.mean.push(metrics::mean(&column));
        pred.lo.push(lo);
        pred.hi.push(hi);
    }
    Ok(pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn constant(c: f64) -> WeightSet {
        WeightSet {
            weights: vec![array![[0.0]]],
            biases: vec![array![c]],
        }
    }

    #[test]
    fn single_and_identical_members() {
        let p = ensemble_predict(&[constant(2.5)], &[1.0], 0.95).unwrap();
        assert_eq!((p.mean[0], p.lo[0], p.hi[0]), (2.5, 2.5, 2.5));
        let p = ensemble_predict(&vec![constant(-1.0); 4], &[0.3], 0.95).unwrap();
        assert_eq!((p.lo[0], p.hi[0]), (-1.0, -1.0));
    }

    #[test]
    fn band_over_five_members() {
        let models: Vec<WeightSet> = (0..5).map(|c| constant(c as f64)).collect();
        let p = ensemble_predict(&models, &[0.0], 0.95).unwrap();
        // positions 0.025·4 and 0.975·4 on the sorted list 0..4
        assert!((p.lo[0] - 0.1).abs() < 1e-12);
        assert!((p.hi[0] - 3.9).abs() < 1e-12);
        assert_eq!(p.mean[0], 2.0);
        assert!(ensemble_predict(&[], &[0.0], 0.95).is_err());
    }

    #[test]
    fn members_differ_and_are_reproducible() {
        let x = array![[0.0], [0.5], [1.0], [1.5]];
        let y = x.mapv(|v: f64| v * v);
        let arch = MlpArchitecture::new(vec![1, 4, 1]).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train_ensemble(&arch, x.view(), y.view(), &cfg, 3).unwrap();
        let b = train_ensemble(&arch, x.view(), y.view(), &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].0, a[1].0);
    }
}
