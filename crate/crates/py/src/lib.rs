//! Python module `pykdemu`: datasets, emulator bundles and DTW.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use kdemu::data::split_train_test;
use kdemu::dtw::DtwConfig;
use kdemu::emulators::{self, EmulatorBundle, EmulatorConfig};
use kdemu::io;
use kdemu::params::{ParameterVector, N_PARAMS, PARAM_NAMES};
use kdemu::synthgen::{generate_dataset, GeneratorConfig, RegimeMix};

fn err(e: kdemu::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn params_from(values: Vec<f64>) -> PyResult<ParameterVector> {
    let arr: [f64; N_PARAMS] = values
        .try_into()
        .map_err(|v: Vec<f64>| PyValueError::new_err(format!("expected {N_PARAMS} parameters, got {}", v.len())))?;
    let p = ParameterVector::from_array(arr);
    p.validate().map_err(err)?;
    Ok(p)
}

/// A set of trajectories with an optional train/test split.
#[pyclass(name = "Dataset", module = "pykdemu")]
struct PyDataset {
    inner: kdemu::data::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Synthetic corpus on the default grid; `n_test = 0` leaves it unsplit.
    #[staticmethod]
    #[pyo3(signature = (n=172, seed=0, n_test=6))]
    fn generate(n: usize, seed: u64, n_test: usize) -> PyResult<Self> {
        let cfg = GeneratorConfig {
            seed,
            ..GeneratorConfig::default()
        };
        let mut ds = generate_dataset(n, &cfg, &RegimeMix::default()).map_err(err)?;
        if n_test > 0 {
            ds = split_train_test(ds, n_test, seed).map_err(err)?;
        }
        Ok(Self { inner: ds })
    }

    /// Reads a dataset CSV and its metadata sidecar.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (inner, _) = io::read_dataset(path.as_ref()).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let grid = self
            .inner
            .grid()
            .cloned()
            .ok_or_else(|| PyValueError::new_err("cannot save an empty dataset"))?;
        let meta = io::DatasetMeta::new(&grid, self.inner.len(), None);
        io::write_dataset(&self.inner, path.as_ref(), &meta).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn times(&self) -> Vec<f64> {
        self.inner.grid().map_or_else(Vec::new, |g| g.times().to_vec())
    }

    fn params(&self, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.sample(i)?.params.to_array().to_vec())
    }

    fn ln_kd(&self, i: usize) -> PyResult<Vec<f64>> {
        Ok(self.sample(i)?.ln_kd.clone())
    }

    /// `(gamma1, gamma2)` series of sample `i`.
    fn gamma(&self, i: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let s = self.sample(i)?;
        Ok((s.gamma1.clone(), s.gamma2.clone()))
    }

    #[getter]
    fn train_indices(&self) -> Vec<usize> {
        self.inner.split().map_or_else(Vec::new, |s| s.train.clone())
    }

    #[getter]
    fn test_indices(&self) -> Vec<usize> {
        self.inner.split().map_or_else(Vec::new, |s| s.test.clone())
    }
}

impl PyDataset {
    fn sample(&self, i: usize) -> PyResult<&kdemu::data::Trajectory> {
        self.inner
            .samples()
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("sample {i} out of range (len {})", self.inner.len())))
    }
}

/// A trained emulator bundle.
#[pyclass(name = "Emulator", module = "pykdemu")]
struct PyEmulator {
    inner: EmulatorBundle,
}

#[pymethods]
impl PyEmulator {
    /// Trains on the dataset's training split. `config` holds emulator
    /// settings in TOML, e.g. `formulation = "g_func"\n[forest]\nn_trees = 200`.
    #[staticmethod]
    #[pyo3(signature = (dataset, config="", seed=0))]
    fn train(py: Python<'_>, dataset: &PyDataset, config: &str, seed: u64) -> PyResult<Self> {
        let mut cfg: EmulatorConfig = toml::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        cfg.seed = seed;
        cfg.validate().map_err(err)?;
        let ds = &dataset.inner;
        let inner = py.detach(|| emulators::train_emulator(ds, &cfg)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        Ok(Self {
            inner: EmulatorBundle::load(dir).map_err(err)?,
        })
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        self.inner.save(dir).map_err(err)
    }

    #[getter]
    fn formulation(&self) -> String {
        self.inner.formulation.to_string()
    }

    #[getter]
    fn n_models(&self) -> usize {
        self.inner.n_models()
    }

    fn times(&self) -> Vec<f64> {
        self.inner.grid.times().to_vec()
    }

    /// Mean and band for one parameter vector; predictor series are
    /// required by G_* bundles and `ln_kd0` by dynamic ones.
    #[pyo3(signature = (params, gamma1=None, gamma2=None, ln_kd0=None))]
    fn predict<'py>(
        &self,
        py: Python<'py>,
        params: Vec<f64>,
        gamma1: Option<Vec<f64>>,
        gamma2: Option<Vec<f64>>,
        ln_kd0: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let p = params_from(params)?;
        let gamma = match (&gamma1, &gamma2) {
            (Some(a), Some(b)) => Some((a.as_slice(), b.as_slice())),
            (None, None) => None,
            _ => return Err(PyValueError::new_err("pass both gamma1 and gamma2 or neither")),
        };
        let s = emulators::predict_series(&self.inner, &p, gamma, ln_kd0).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("cluster", s.cluster)?;
        d.set_item("mean", s.mean)?;
        d.set_item("lo", s.lo)?;
        d.set_item("hi", s.hi)?;
        Ok(d)
    }

    /// Per-sample ε, their average and band coverage on the test split.
    fn evaluate<'py>(&self, py: Python<'py>, dataset: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
        let (b, ds) = (&self.inner, &dataset.inner);
        let r = py.detach(|| emulators::evaluate(b, ds)).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("samples", r.samples.iter().map(|s| s.sample).collect::<Vec<_>>())?;
        d.set_item("errors", r.samples.iter().map(|s| s.error).collect::<Vec<_>>())?;
        d.set_item("average", r.average)?;
        d.set_item("coverage", r.coverage)?;
        Ok(d)
    }

    /// `(feature name, score)` pairs by decreasing forest importance.
    fn importance(&self) -> PyResult<Vec<(String, f64)>> {
        let r = emulators::importance_report(&self.inner).map_err(err)?;
        Ok(r.ranking.iter().map(|&i| (r.names[i].clone(), r.scores[i])).collect())
    }
}

/// DTW distance with squared point cost; `window` is a Sakoe–Chiba half-width.
#[pyfunction]
#[pyo3(signature = (a, b, window=None))]
fn dtw_distance(a: Vec<f64>, b: Vec<f64>, window: Option<usize>) -> PyResult<f64> {
    kdemu::dtw::dtw_distance(&a, &b, &DtwConfig { window }).map_err(err)
}

/// Relative L2 error between two series.
#[pyfunction]
fn relative_error(truth: Vec<f64>, prediction: Vec<f64>) -> PyResult<f64> {
    kdemu::metrics::relative_error(&truth, &prediction).map_err(err)
}

#[pymodule]
fn pykdemu(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyEmulator>()?;
    m.add_function(wrap_pyfunction!(dtw_distance, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    m.add("PARAM_NAMES", PARAM_NAMES.to_vec())?;
    Ok(())
}
