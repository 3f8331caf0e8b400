//! Feature rows for each formulation, plus linear predictor interpolation.

use ndarray::Array2;

use super::{Arrangement, Formulation, FormulationKind};
use crate::data::{PredictorRefs, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::params::{rescale, ParameterVector, N_PARAMS};

/// Predictor series divided by their initial values.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPredictors {
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
}

impl NormalizedPredictors {
    pub fn from_raw(gamma1: &[f64], gamma2: &[f64]) -> Result<Self> {
        if gamma1.len() != gamma2.len() {
            return Err(Error::ShapeMismatch {
                expected: gamma1.len(),
                got: gamma2.len(),
            });
        }
        let refs = PredictorRefs::from_series(gamma1, gamma2)?;
        let (gamma1, gamma2) = refs.normalize(gamma1, gamma2);
        Ok(Self { gamma1, gamma2 })
    }

    pub fn len(&self) -> usize {
        self.gamma1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma1.is_empty()
    }
}

/// Feature names in column order.
pub fn feature_names(f: Formulation, m: usize) -> Vec<String> {
    let params = (1..=N_PARAMS).map(|i| format!("p{i}"));
    let mut names: Vec<String> = match (f.kind, f.arrangement) {
        (FormulationKind::FFunc, Arrangement::Pointwise) => vec!["t".into()],
        (FormulationKind::FFunc, Arrangement::Series) => vec![],
        (FormulationKind::GFunc, Arrangement::Pointwise) => vec!["t".into(), "gamma1".into(), "gamma2".into()],
        (FormulationKind::GFunc, Arrangement::Series) => (1..=m)
            .map(|k| format!("t_{k}"))
            .chain((1..=m).map(|k| format!("gamma1_{k}")))
            .chain((1..=m).map(|k| format!("gamma2_{k}")))
            .collect(),
        (FormulationKind::FDyn, _) => vec!["ln_kd".into(), "t".into()],
        (FormulationKind::GDyn, _) => vec![
            "ln_kd".into(),
            "gamma1".into(),
            "gamma2".into(),
            "d_gamma1".into(),
            "d_gamma2".into(),
        ],
    };
    names.extend(params);
    names
}

pub fn n_features(f: Formulation, m: usize) -> usize {
    match (f.kind, f.arrangement) {
        (FormulationKind::FFunc, Arrangement::Pointwise) => 1 + N_PARAMS,
        (FormulationKind::FFunc, Arrangement::Series) => N_PARAMS,
        (FormulationKind::GFunc, Arrangement::Pointwise) => 3 + N_PARAMS,
        (FormulationKind::GFunc, Arrangement::Series) => 3 * m + N_PARAMS,
        (FormulationKind::FDyn, _) => 2 + N_PARAMS,
        (FormulationKind::GDyn, _) => 5 + N_PARAMS,
    }
}

/// Output width: one value per row, or the whole series.
pub fn n_outputs(f: Formulation, m: usize) -> usize {
    match f.arrangement {
        Arrangement::Series => m,
        Arrangement::Pointwise => 1,
    }
}

/// Feature row at snapshot `k` of a pointwise formulation. Dynamic kinds take
/// the current state `ln_kd` and describe the step from `k` to `k + 1`.
pub fn pointwise_row(
    f: Formulation,
    grid: &TimeGrid,
    r: &[f64; N_PARAMS],
    gamma: Option<&NormalizedPredictors>,
    k: usize,
    ln_kd: f64,
) -> Result<Vec<f64>> {
    let tau = grid.time_feature(grid.times()[k]);
    let need = || gamma.ok_or_else(|| Error::MissingInput("predictor series gamma".into()));
    let mut row = match f.kind {
        FormulationKind::FFunc => vec![tau],
        FormulationKind::GFunc => {
            let g = need()?;
            vec![tau, g.gamma1[k], g.gamma2[k]]
        }
        FormulationKind::FDyn => vec![ln_kd, tau],
        FormulationKind::GDyn => {
            let g = need()?;
            vec![
                ln_kd,
                g.gamma1[k],
                g.gamma2[k],
                g.gamma1[k + 1] - g.gamma1[k],
                g.gamma2[k + 1] - g.gamma2[k],
            ]
        }
    };
    row.extend_from_slice(r);
    Ok(row)
}

/// The single feature row of a series formulation.
pub fn series_row(
    f: Formulation,
    grid: &TimeGrid,
    r: &[f64; N_PARAMS],
    gamma: Option<&NormalizedPredictors>,
) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(n_features(f, grid.len()));
    match f.kind {
        FormulationKind::FFunc => {}
        FormulationKind::GFunc => {
            let g = gamma.ok_or_else(|| Error::MissingInput("predictor series gamma".into()))?;
            row.extend(grid.times().iter().map(|&t| grid.time_feature(t)));
            row.extend_from_slice(&g.gamma1);
            row.extend_from_slice(&g.gamma2);
        }
        _ => return Err(Error::Unsupported(format!("{f} has no series arrangement"))),
    }
    row.extend_from_slice(r);
    Ok(row)
}

/// Training matrix of a formulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Arranged {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    /// Index (into the input slice) of the trajectory each row came from.
    pub source: Vec<usize>,
}

fn rescaled(p: &ParameterVector) -> Result<[f64; N_PARAMS]> {
    Ok(rescale(p)?.values)
}

pub fn arrange_samples(samples: &[&Trajectory], f: Formulation) -> Result<Arranged> {
    f.validate()?;
    let Some(first) = samples.first() else {
        return Err(Error::Empty("training samples"));
    };
    let m = first.len();
    if samples.iter().any(|s| s.grid != first.grid) {
        return Err(Error::InvalidArgument("samples use different time grids".into()));
    }
    let (s, r) = (n_features(f, m), n_outputs(f, m));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut source = Vec::new();
    for (i, traj) in samples.iter().enumerate() {
        let p = rescaled(&traj.params)?;
        let gamma = if f.kind.uses_predictors() {
            Some(NormalizedPredictors::from_raw(&traj.gamma1, &traj.gamma2)?)
        } else {
            None
        };
        match (f.arrangement, f.kind.is_dynamic()) {
            (Arrangement::Series, _) => {
                xs.extend(series_row(f, &traj.grid, &p, gamma.as_ref())?);
                ys.extend_from_slice(&traj.ln_kd);
                source.push(i);
            }
            (Arrangement::Pointwise, false) => {
                for k in 0..m {
                    xs.extend(pointwise_row(f, &traj.grid, &p, gamma.as_ref(), k, traj.ln_kd[k])?);
                    ys.push(traj.ln_kd[k]);
                    source.push(i);
                }
            }
            (Arrangement::Pointwise, true) => {
                for k in 0..m - 1 {
                    xs.extend(pointwise_row(f, &traj.grid, &p, gamma.as_ref(), k, traj.ln_kd[k])?);
                    ys.push(traj.ln_kd[k + 1] - traj.ln_kd[k]);
                    source.push(i);
                }
            }
        }
    }
    let rows = source.len();
    Ok(Arranged {
        x: Array2::from_shape_vec((rows, s), xs).expect("row width fixed by formulation"),
        y: Array2::from_shape_vec((rows, r), ys).expect("target width fixed by formulation"),
        source,
    })
}

/// Linear interpolation `v_k + (v_{k+1} − v_k)(t − t_k)/(t_{k+1} − t_k)`
/// between the snapshots bracketing `t`; exact at snapshots.
pub fn interp_linear(times: &[f64], values: &[f64], t: f64) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::ShapeMismatch {
            expected: times.len(),
            got: values.len(),
        });
    }
    if times.is_empty() {
        return Err(Error::Empty("interpolation nodes"));
    }
    let (lo, hi) = (times[0], times[times.len() - 1]);
    if !(t >= lo && t <= hi) {
        return Err(Error::InvalidArgument(format!(
            "t = {t} is outside [{lo}, {hi}]; extrapolation is not supported"
        )));
    }
    // first node with time >= t
    let j = times.partition_point(|&s| s < t);
    if times[j] == t {
        return Ok(values[j]);
    }
    let k = j - 1;
    let dt = times[j] - times[k];
    Ok(values[k] + (values[j] - values[k]) * (t - times[k]) / dt)
}

/// Both predictors at time `t`.
pub fn interp_predictors(grid: &TimeGrid, gamma1: &[f64], gamma2: &[f64], t: f64) -> Result<(f64, f64)> {
    Ok((
        interp_linear(grid.times(), gamma1, t)?,
        interp_linear(grid.times(), gamma2, t)?,
    ))
}

/// Resamples predictor series given on `times` onto `grid`.
pub fn resample_predictors(
    times: &[f64],
    gamma1: &[f64],
    gamma2: &[f64],
    grid: &TimeGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let g1 = grid.times().iter().map(|&t| interp_linear(times, gamma1, t)).collect::<Result<_>>()?;
    let g2 = grid.times().iter().map(|&t| interp_linear(times, gamma2, t)).collect::<Result<_>>()?;
    Ok((g1, g2))
}
