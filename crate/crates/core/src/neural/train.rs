use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{init_weights, loss, loss_and_gradient, MlpArchitecture, WeightSet};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub l2_lambda: f64,
    /// Epochs without a validation improvement before the rate is cut.
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            epochs: 5000,
            lr: 1e-3,
            l2_lambda: 1e-5,
            plateau_patience: 100,
            lr_factor: 0.5,
            min_lr: 1e-5,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor must lie in (0, 1), got {}", self.lr_factor));
        }
        if !(self.min_lr > 0.0 && self.lr >= self.min_lr && self.lr.is_finite()) {
            return bad(format!("need 0 < min_lr <= lr, got min_lr {} lr {}", self.min_lr, self.lr));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad(format!("l2_lambda must be >= 0, got {}", self.l2_lambda));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation_fraction must lie in [0, 1), got {}", self.validation_fraction));
        }
        Ok(())
    }
}

#[inline]
fn flush_subnormal(x: &mut f64) {
    if x.is_subnormal() {
        *x = 0.0;
    }
}

/// Adam with bias-corrected moments; subnormal results are flushed to zero.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: WeightSet,
    v: WeightSet,
    t: i32,
}

impl Adam {
    pub fn new(like: &WeightSet) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, w: &mut WeightSet, grad: &WeightSet, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let mut ms = self.m.slices_mut();
        let mut vs = self.v.slices_mut();
        let gs = grad.slices();
        for (((w, m), v), g) in w.slices_mut().into_iter().zip(&mut ms).zip(&mut vs).zip(gs) {
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                // weights of dead units decay geometrically under L2; subnormals
                // would slow every later product by orders of magnitude
                flush_subnormal(&mut w[i]);
                flush_subnormal(&mut m[i]);
                flush_subnormal(&mut v[i]);
            }
        }
    }
}

/// Per-epoch losses (regularized, on the full split) and the rate in force
/// during each epoch. `validation` is empty when no rows were held out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    pub lr: Vec<f64>,
}

impl LossHistory {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "validation_loss", "lr"])?;
        for (e, (t, lr)) in self.train.iter().zip(&self.lr).enumerate() {
            let v = self.validation.get(e).map_or(String::new(), |v| v.to_string());
            out.write_record([e.to_string(), t.to_string(), v, lr.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn rows(a: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(0), idx)
}

pub fn train(
    arch: &MlpArchitecture,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<(WeightSet, LossHistory)> {
    train_from(init_weights(arch, cfg.seed), x, y, cfg)
}

/// Mini-batch Adam from the given weights. A held-out validation split drives
/// the plateau schedule (the training loss does when nothing is held out).
pub fn train_from(
    mut w: WeightSet,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<(WeightSet, LossHistory)> {
    cfg.validate()?;
    w.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("training rows"));
    }
    let arch = w.architecture();
    for (expected, got) in [(n, y.nrows()), (arch.inputs(), x.ncols()), (arch.outputs(), y.ncols())] {
        if expected != got {
            return Err(Error::ShapeMismatch { expected, got });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(cfg.seed, 1));
    let n_val = ((n as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let (xt, yt) = (rows(x, &train_idx), rows(y, &train_idx));
    let (xv, yv) = (rows(x, val_idx), rows(y, val_idx));
    for (i, v) in train_idx.iter_mut().enumerate() {
        *v = i;
    }

    let mut shuffler = rng::stream(cfg.seed, 2);
    let mut adam = Adam::new(&w);
    let mut lr = cfg.lr;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut history = LossHistory::default();
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut shuffler);
        for batch in train_idx.chunks(cfg.batch_size) {
            let (bx, by) = (rows(xt.view(), batch), rows(yt.view(), batch));
            let (value, grad) = loss_and_gradient(&w, bx.view(), by.view(), cfg.l2_lambda)?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            adam.step(&mut w, &grad, lr);
        }
        let train_loss = loss(&w, xt.view(), yt.view(), cfg.l2_lambda)?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.train.push(train_loss);
        history.lr.push(lr);
        let monitored = if n_val > 0 {
            let v = loss(&w, xv.view(), yv.view(), cfg.l2_lambda)?;
            if !v.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            history.validation.push(v);
            v
        } else {
            train_loss
        };
        if monitored < best {
            best = monitored;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau_patience {
                lr = (lr * cfg.lr_factor).max(cfg.min_lr);
                stale = 0;
            }
        }
    }
    Ok((w, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn line(n: usize) -> (Array2<f64>, Array2<f64>) {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
        let y = x.mapv(|v| 2.0 * v);
        (x, y)
    }

    #[test]
    fn adam_flushes_subnormals_to_zero() {
        let arch = MlpArchitecture::new(vec![1, 1]).unwrap();
        let mut w = WeightSet::zeros(&arch);
        w.weights[0][[0, 0]] = 1e-310;
        let mut adam = Adam::new(&w);
        let g = w.zeros_like();
        adam.step(&mut w, &g, 1e-3);
        assert_eq!(w.weights[0][[0, 0]], 0.0);
        assert!(w.flatten().iter().chain(&adam.m.flatten()).all(|v| !v.is_subnormal()));
    }

    #[test]
    fn fits_linear_target() {
        let (x, y) = line(40);
        let arch = MlpArchitecture::new(vec![1, 8, 1]).unwrap();
        let cfg = TrainConfig {
            epochs: 2000,
            l2_lambda: 0.0,
            seed: 4,
            ..TrainConfig::default()
        };
        let (w, h) = train(&arch, x.view(), y.view(), &cfg).unwrap();
        let mse = loss(&w, x.view(), y.view(), 0.0).unwrap();
        assert!(mse <= 1e-4, "{mse}");
        assert_eq!(h.train.len(), 2000);
        assert_eq!(h.validation.len(), 2000);
    }

    #[test]
    fn deterministic_history_and_lr_floor() {
        let (x, y) = line(30);
        let arch = MlpArchitecture::new(vec![1, 4, 4, 1]).unwrap();
        let cfg = TrainConfig {
            epochs: 300,
            plateau_patience: 2,
            lr: 0.1,
            min_lr: 2e-3,
            seed: 1,
            ..TrainConfig::default()
        };
        let a = train(&arch, x.view(), y.view(), &cfg).unwrap();
        let b = train(&arch, x.view(), y.view(), &cfg).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
        assert!(a.1.lr.iter().all(|&lr| lr >= cfg.min_lr));
        assert!(a.1.lr.windows(2).all(|p| p[1] <= p[0]));
        assert!(a.1.lr.contains(&cfg.min_lr), "{:?}", a.1.lr.last());
    }

    #[test]
    fn small_rate_full_batch_descends_on_linear_model() {
        let (x, y) = line(25);
        let arch = MlpArchitecture::new(vec![1, 1]).unwrap();
        let cfg = TrainConfig {
            batch_size: 25,
            epochs: 300,
            lr: 1e-4,
            min_lr: 1e-5,
            validation_fraction: 0.0,
            seed: 3,
            ..TrainConfig::default()
        };
        let (_, h) = train(&arch, x.view(), y.view(), &cfg).unwrap();
        assert!(h.validation.is_empty());
        for p in h.train.windows(2) {
            assert!(p[1] <= p[0], "{} > {}", p[1], p[0]);
        }
    }

    #[test]
    fn zero_gradient_step_is_identity() {
        let arch = MlpArchitecture::new(vec![2, 3, 1]).unwrap();
        let mut w = init_weights(&arch, 5);
        let before = w.clone();
        let mut adam = Adam::new(&w);
        adam.step(&mut w, &before.zeros_like(), 0.1);
        assert_eq!(w, before);
    }

    #[test]
    fn divergence_reports_epoch() {
        let (x, mut y) = line(10);
        y[[3, 0]] = f64::INFINITY;
        let arch = MlpArchitecture::new(vec![1, 2, 1]).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        match train(&arch, x.view(), y.view(), &cfg) {
            Err(Error::Diverged { epoch }) => assert_eq!(epoch, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let (x, y) = line(10);
        let arch = MlpArchitecture::new(vec![1, 2, 1]).unwrap();
        for cfg in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr_factor: 1.0, ..TrainConfig::default() },
            TrainConfig { lr: 1e-6, ..TrainConfig::default() },
        ] {
            assert!(train(&arch, x.view(), y.view(), &cfg).is_err());
        }
        let wrong = MlpArchitecture::new(vec![2, 2, 1]).unwrap();
        assert!(train(&wrong, x.view(), y.view(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn history_csv_has_one_row_per_epoch() {
        let h = LossHistory {
            train: vec![1.0, 0.5],
            validation: vec![],
            lr: vec![0.1, 0.1],
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().nth(1).unwrap(), "0,1,,0.1");
    }
}
