//! The seven hydrological and geochemical inputs, their admissible box, and
//! the affine maps onto `[-1, 1]^7`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const N_PARAMS: usize = 7;

pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "ilsoh", "smsoh", "ph", "ca", "smectite", "illite", "calcite",
];

/// Lower bounds. The pH interval is stored as `[7, 9]`.
pub const PARAM_MIN: [f64; N_PARAMS] = [3.0, 3.0, 7.0, -3.0, 0.3, 0.01, 0.01];
pub const PARAM_MAX: [f64; N_PARAMS] = [6.0, 6.0, 9.0, -1.0, 0.95, 0.2, 0.03];

/// Reference values of the base case.
pub const PARAM_REFERENCE: [f64; N_PARAMS] = [5.0, 5.0, 7.96, -1.66, 0.92, 0.0001, 0.01];

/// One parameter sample `p1..p7`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    /// log10 adsorption surface area on illite (cm²/g)
    pub ilsoh: f64,
    /// log10 adsorption surface area on smectite (cm²/g)
    pub smsoh: f64,
    /// initial pore-water pH
    pub ph: f64,
    /// log10 initial Ca²⁺ concentration
    pub ca: f64,
    pub smectite: f64,
    pub illite: f64,
    pub calcite: f64,
}

impl ParameterVector {
    pub fn from_array(v: [f64; N_PARAMS]) -> Self {
        Self {
            ilsoh: v[0],
            smsoh: v[1],
            ph: v[2],
            ca: v[3],
            smectite: v[4],
            illite: v[5],
            calcite: v[6],
        }
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.ilsoh,
            self.smsoh,
            self.ph,
            self.ca,
            self.smectite,
            self.illite,
            self.calcite,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; N_PARAMS] = v.try_into().map_err(|_| Error::ShapeMismatch {
            expected: N_PARAMS,
            got: v.len(),
        })?;
        Ok(Self::from_array(arr))
    }

    /// The reference point. Its illite fraction (1e-4) lies below the sampling
    /// box, so it is clamped to the lower bound here.
    pub fn reference() -> Self {
        let mut v = PARAM_REFERENCE;
        for i in 0..N_PARAMS {
            v[i] = v[i].clamp(PARAM_MIN[i], PARAM_MAX[i]);
        }
        Self::from_array(v)
    }

    pub fn min_corner() -> Self {
        Self::from_array(PARAM_MIN)
    }

    pub fn max_corner() -> Self {
        Self::from_array(PARAM_MAX)
    }

    /// Checks every component against the admissible box.
    pub fn validate(&self) -> Result<()> {
        for (i, &value) in self.to_array().iter().enumerate() {
            if !value.is_finite() || value < PARAM_MIN[i] || value > PARAM_MAX[i] {
                return Err(Error::OutOfBounds {
                    field: PARAM_NAMES[i],
                    value,
                    min: PARAM_MIN[i],
                    max: PARAM_MAX[i],
                });
            }
        }
        Ok(())
    }

    /// Bit pattern used to detect duplicates and to derive per-sample streams.
    pub fn bits(&self) -> [u64; N_PARAMS] {
        self.to_array().map(f64::to_bits)
    }
}

/// `x ↦ offset + scale·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub offset: f64,
    pub scale: f64,
}

impl AffineMap {
    /// Map sending `[lo, hi]` onto `[-1, 1]`.
    pub fn onto_unit_interval(lo: f64, hi: f64) -> Result<Self> {
        if !(hi - lo).is_finite() || hi == lo {
            return Err(Error::InvalidArgument(format!(
                "degenerate interval [{lo}, {hi}]"
            )));
        }
        let scale = 2.0 / (hi - lo);
        Ok(Self {
            offset: -1.0 - scale * lo,
            scale,
        })
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.offset + self.scale * x
    }

    #[inline]
    pub fn invert(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }
}

/// Per-dimension maps anchored at the fixed bounds, shared by train and test.
pub fn parameter_maps() -> [AffineMap; N_PARAMS] {
    std::array::from_fn(|i| {
        AffineMap::onto_unit_interval(PARAM_MIN[i], PARAM_MAX[i])
            .expect("bounds are non-degenerate")
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaledParameters {
    pub values: [f64; N_PARAMS],
}

pub fn rescale(p: &ParameterVector) -> Result<RescaledParameters> {
    p.validate()?;
    let maps = parameter_maps();
    let raw = p.to_array();
    let values = std::array::from_fn(|i| {
        // endpoints land exactly on ±1
        if raw[i] == PARAM_MIN[i] {
            -1.0
        } else if raw[i] == PARAM_MAX[i] {
            1.0
        } else {
            maps[i].apply(raw[i]).clamp(-1.0, 1.0)
        }
    });
    Ok(RescaledParameters { values })
}

pub fn unrescale(r: &RescaledParameters) -> Result<ParameterVector> {
    let maps = parameter_maps();
    for (i, &v) in r.values.iter().enumerate() {
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::OutOfBounds {
                field: PARAM_NAMES[i],
                value: v,
                min: -1.0,
                max: 1.0,
            });
        }
    }
    let raw = std::array::from_fn(|i| maps[i].invert(r.values[i]).clamp(PARAM_MIN[i], PARAM_MAX[i]));
    Ok(ParameterVector::from_array(raw))
}

/// Level `j` of `levels` equally spaced values spanning dimension `dim`.
/// For four levels this is `{min, (2min+max)/3, (min+2max)/3, max}`.
pub fn grid_level(dim: usize, j: usize, levels: usize) -> f64 {
    let (lo, hi) = (PARAM_MIN[dim], PARAM_MAX[dim]);
    let last = levels - 1;
    if j == 0 {
        lo
    } else if j == last {
        hi
    } else {
        ((last - j) as f64 * lo + j as f64 * hi) / last as f64
    }
}

fn check_sampling_args(levels: usize, perturbation: f64) -> Result<()> {
    if levels < 2 {
        return Err(Error::InvalidArgument(format!(
            "levels_per_dim must be >= 2, got {levels}"
        )));
    }
    if !(0.0..0.5).contains(&perturbation) {
        return Err(Error::InvalidArgument(format!(
            "perturbation must lie in [0, 0.5), got {perturbation}"
        )));
    }
    Ok(())
}

fn jitter<R: Rng>(rng: &mut R, dim: usize, value: f64, perturbation: f64) -> f64 {
    if perturbation == 0.0 {
        return value;
    }
    let range = PARAM_MAX[dim] - PARAM_MIN[dim];
    let delta = rng.random_range(-perturbation..=perturbation) * range;
    (value + delta).clamp(PARAM_MIN[dim], PARAM_MAX[dim])
}

/// Draws one grid point with independently chosen levels, then jitters it.
pub fn draw_grid_point<R: Rng>(rng: &mut R, levels: usize, perturbation: f64) -> ParameterVector {
    let v = std::array::from_fn(|dim| {
        let j = rng.random_range(0..levels);
        jitter(rng, dim, grid_level(dim, j, levels), perturbation)
    });
    ParameterVector::from_array(v)
}

/// The full factorial pool over `levels` values per dimension, in
/// lexicographic order, each point jittered by up to `±perturbation·range`
/// and truncated to the bounds.
pub fn sample_parameters(
    levels_per_dim: usize,
    seed: u64,
    perturbation: f64,
) -> Result<Vec<ParameterVector>> {
    check_sampling_args(levels_per_dim, perturbation)?;
    let total = levels_per_dim
        .checked_pow(N_PARAMS as u32)
        .filter(|&n| n <= 50_000_000)
        .ok_or_else(|| Error::InvalidArgument(format!("{levels_per_dim}^7 grid is too large")))?;
    let mut rng = rng::stream(seed, 0);
    let mut out = Vec::with_capacity(total);
    let mut idx = [0usize; N_PARAMS];
    for _ in 0..total {
        let v = std::array::from_fn(|dim| {
            jitter(&mut rng, dim, grid_level(dim, idx[dim], levels_per_dim), perturbation)
        });
        out.push(ParameterVector::from_array(v));
        // odometer increment, last dimension fastest
        for d in (0..N_PARAMS).rev() {
            idx[d] += 1;
            if idx[d] < levels_per_dim {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(out)
}

pub(crate) fn validate_sampling(levels: usize, perturbation: f64) -> Result<()> {
    check_sampling_args(levels, perturbation)
}
