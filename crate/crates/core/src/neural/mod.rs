//! Fully connected ReLU networks: forward pass, regularized squared loss,
//! reverse-mode gradients, Adam training and ensembles.

mod ensemble;
mod persist;
mod train;

pub use ensemble::{ensemble_predict, train_ensemble, EnsemblePrediction};
pub use train::{train, train_from, Adam, LossHistory, TrainConfig};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_HIDDEN_WIDTH: usize = 64;
/// Input, five hidden and output layer.
pub const DEFAULT_LAYERS: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub layer_sizes: Vec<usize>,
}

impl MlpArchitecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument("need at least an input and an output layer".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be >= 1".into()));
        }
        Ok(Self { layer_sizes })
    }

    /// `n_layers` counts input and output, so there are `n_layers - 2`
    /// hidden layers of `width`.
    pub fn uniform(inputs: usize, outputs: usize, width: usize, n_layers: usize) -> Result<Self> {
        if n_layers < 2 {
            return Err(Error::InvalidArgument("n_layers must be >= 2".into()));
        }
        let mut sizes = vec![inputs];
        sizes.extend(std::iter::repeat_n(width, n_layers - 2));
        sizes.push(outputs);
        Self::new(sizes)
    }

    pub fn inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len()
    }
}

/// Weights `W_l` (fan_in × fan_out) and biases per affine map. Gradients use
/// the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// He-normal weights, zero biases.
pub fn init_weights(arch: &MlpArchitecture, seed: u64) -> WeightSet {
    let mut r = rng::stream(seed, 0);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in arch.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive variance");
        weights.push(Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(&mut r)));
        biases.push(Array1::zeros(fan_out));
    }
    WeightSet { weights, biases }
}

impl WeightSet {
    pub fn zeros(arch: &MlpArchitecture) -> Self {
        let pairs = arch.layer_sizes.windows(2);
        Self {
            weights: pairs.clone().map(|p| Array2::zeros((p[0], p[1]))).collect(),
            biases: pairs.map(|p| Array1::zeros(p[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn architecture(&self) -> MlpArchitecture {
        let mut sizes: Vec<usize> = self.weights.iter().map(|w| w.nrows()).collect();
        sizes.push(self.weights.last().map_or(0, |w| w.ncols()));
        MlpArchitecture { layer_sizes: sizes }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err(Error::Format("weight and bias counts differ".into()));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.ncols() != b.len() || w.nrows() == 0 || b.is_empty() {
                return Err(Error::Format(format!("layer {l} bias does not match weights")));
            }
            if l + 1 < self.weights.len() && w.ncols() != self.weights[l + 1].nrows() {
                return Err(Error::Format(format!("layer {l} does not chain into layer {}", l + 1)));
            }
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Every parameter slice, weights first then biases, in layer order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let w = self.weights.iter().map(|w| w.as_slice().expect("standard layout"));
        let b = self.biases.iter().map(|b| b.as_slice().expect("standard layout"));
        w.chain(b).collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let w = self.weights.iter_mut().map(|w| w.as_slice_mut().expect("standard layout"));
        let b = self.biases.iter_mut().map(|b| b.as_slice_mut().expect("standard layout"));
        w.chain(b).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::ShapeMismatch {
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        let expected = self.weights[0].nrows();
        if cols != expected {
            return Err(Error::ShapeMismatch { expected, got: cols });
        }
        Ok(())
    }

    /// Rows of `x` are samples.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.weights.len() - 1;
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = a.dot(w) + b;
            if l < last {
                a.mapv_inplace(relu);
            }
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("one row");
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// `Σ_l ‖W_l‖²_F`; biases are not penalized.
    pub fn l2_penalty(&self) -> f64 {
        self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum()
    }
}

#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

fn check_batch(w: &WeightSet, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    if y.nrows() != x.nrows() {
        return Err(Error::ShapeMismatch {
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    let outputs = w.weights.last().expect("validated").ncols();
    if y.ncols() != outputs {
        return Err(Error::ShapeMismatch {
            expected: outputs,
            got: y.ncols(),
        });
    }
    Ok(())
}

/// `(1/N) Σ_i ‖y_i − f(x_i)‖² + λ Σ_l ‖W_l‖²_F`.
pub fn loss(w: &WeightSet, x: ArrayView2<f64>, y: ArrayView2<f64>, l2_lambda: f64) -> Result<f64> {
    check_batch(w, x, y)?;
    let out = w.forward_batch(x)?;
    let sq: f64 = (&out - &y).iter().map(|v| v * v).sum();
    Ok(sq / x.nrows() as f64 + l2_lambda * w.l2_penalty())
}

/// Loss and its exact gradient. The ReLU derivative at 0 is taken as 0.
pub fn loss_and_gradient(
    w: &WeightSet,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    l2_lambda: f64,
) -> Result<(f64, WeightSet)> {
    check_batch(w, x, y)?;
    let n = x.nrows() as f64;
    let depth = w.weights.len();
    // inputs of each affine map; after ReLU for the hidden ones
    let mut acts = Vec::with_capacity(depth);
    acts.push(x.to_owned());
    for l in 0..depth - 1 {
        let mut z = acts[l].dot(&w.weights[l]) + &w.biases[l];
        z.mapv_inplace(relu);
        acts.push(z);
    }
    let out = acts[depth - 1].dot(&w.weights[depth - 1]) + &w.biases[depth - 1];
    let mut delta = out - y;
    let value = delta.iter().map(|v| v * v).sum::<f64>() / n + l2_lambda * w.l2_penalty();
    delta *= 2.0 / n;

    let mut grad = w.zeros_like();
    for l in (0..depth).rev() {
        let gw = &mut grad.weights[l];
        gw.assign(&acts[l].t().dot(&delta));
        gw.scaled_add(2.0 * l2_lambda, &w.weights[l]);
        grad.biases[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut prev = delta.dot(&w.weights[l].t());
            prev.zip_mut_with(&acts[l], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = prev;
        }
    }
    Ok((value, grad))
}

pub fn gradient(w: &WeightSet, x: ArrayView2<f64>, y: ArrayView2<f64>, l2_lambda: f64) -> Result<WeightSet> {
    Ok(loss_and_gradient(w, x, y, l2_lambda)?.1)
}
