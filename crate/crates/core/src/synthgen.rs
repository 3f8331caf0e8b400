//! Analytic trajectory generator.
//!
//! Each parameter vector is assigned one of three history shapes by fixed
//! thresholds on `smsoh` and pH; `ln Kd` is a closed-form curve in `log10 t`
//! whose level is dominated by pH, and the two predictors share the curve's
//! shape so that they carry information about it.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::params::{self, rescale, ParameterVector, N_PARAMS, PARAM_MAX, PARAM_MIN};
use crate::rng;

/// pH below this value produces early-high histories (lower tenth of [7, 9]).
pub const EARLY_HIGH_PH_MAX: f64 = 7.2;
/// `smsoh` above this value (upper third of [3, 6]) can produce increasing
/// histories.
pub const INCREASING_SMSOH_MIN: f64 = 5.0;
/// Interior pH band required for increasing histories.
pub const INCREASING_PH_BAND: (f64, f64) = (7.2, 8.8);

/// Upper bound on `|d ln Kd / d log10 t|` over the noiseless closed forms.
pub const MAX_LOG_SLOPE: f64 = 20.0;

/// Baseline coefficients on the rescaled parameters `r1..r7`; pH carries the
/// largest weight, then `smsoh`, then Ca.
pub const BASELINE_OFFSET: f64 = 7.0;
pub const BASELINE_COEFFS: [f64; N_PARAMS] = [0.25, 0.9, -2.4, 0.45, 0.15, 0.1, 0.05];

const PH_SHAPE_COUPLING: f64 = 0.25;
const CA_SHAPE_COUPLING: f64 = -0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Gaussian,
    Increasing,
    EarlyHigh,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Gaussian, Regime::Increasing, Regime::EarlyHigh];

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Gaussian => "gaussian",
            Regime::Increasing => "increasing",
            Regime::EarlyHigh => "early_high",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown regime `{s}`")))
    }
}

pub fn classify_regime(p: &ParameterVector) -> Result<Regime> {
    p.validate()?;
    if p.ph < EARLY_HIGH_PH_MAX {
        Ok(Regime::EarlyHigh)
    } else if p.smsoh > INCREASING_SMSOH_MIN
        && p.ph > INCREASING_PH_BAND.0
        && p.ph < INCREASING_PH_BAND.1
    {
        Ok(Regime::Increasing)
    } else {
        Ok(Regime::Gaussian)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// std of additive Gaussian noise on ln Kd
    pub noise_std: f64,
    pub seed: u64,
    pub grid: TimeGrid,
    /// levels per dimension of the sampling pool
    pub levels: usize,
    /// jitter around pool points, as a fraction of each range
    pub perturbation: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.05,
            seed: 0,
            grid: TimeGrid::default(),
            levels: 4,
            perturbation: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeMix {
    pub gaussian: f64,
    pub increasing: f64,
    pub early_high: f64,
}

impl Default for RegimeMix {
    fn default() -> Self {
        Self {
            gaussian: 0.69,
            increasing: 0.28,
            early_high: 0.03,
        }
    }
}

impl RegimeMix {
    pub fn fraction(&self, r: Regime) -> f64 {
        match r {
            Regime::Gaussian => self.gaussian,
            Regime::Increasing => self.increasing,
            Regime::EarlyHigh => self.early_high,
        }
    }

    /// Integer quotas for `n` samples by largest remainder.
    pub fn quotas(&self, n: usize) -> Result<[usize; 3]> {
        let f = Regime::ALL.map(|r| self.fraction(r));
        if f.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "regime fractions must be in [0, 1] and sum to 1, got {f:?}"
            )));
        }
        let raw = f.map(|x| x * n as f64);
        let mut q = raw.map(|x| x.floor() as usize);
        let mut left = n - q.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            q[i] += 1;
            left -= 1;
        }
        Ok(q)
    }
}

/// Shape parameters of the closed form for one parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub regime: Regime,
    pub baseline: f64,
    pub amplitude: f64,
    /// centre in log10 years
    pub center: f64,
    /// width in log10 years
    pub width: f64,
}

impl Shape {
    pub fn of(p: &ParameterVector) -> Result<Self> {
        let regime = classify_regime(p)?;
        let r = rescale(p)?.values;
        let baseline = BASELINE_OFFSET
            + BASELINE_COEFFS.iter().zip(&r).map(|(c, v)| c * v).sum::<f64>();
        let (amplitude, center, width) = match regime {
            Regime::Gaussian => (
                2.5 + 0.5 * r[0] + 0.3 * r[4],
                4.0 + 0.3 * r[3] + 0.1 * r[5],
                0.35 + 0.08 * r[4] + 0.04 * r[6],
            ),
            Regime::Increasing => (
                3.0 + 0.5 * r[1] + 0.3 * r[3],
                4.0 + 0.25 * r[0] + 0.1 * r[4],
                0.18 + 0.04 * r[6],
            ),
            Regime::EarlyHigh => (3.5 - 0.5 * r[2] + 0.2 * r[0], 3.0, 0.35 + 0.1 * r[0]),
        };
        Ok(Self {
            regime,
            baseline,
            amplitude,
            center,
            width,
        })
    }

    /// Unit-amplitude shape at `x = log10 t`.
    pub fn profile(&self, x: f64) -> f64 {
        match self.regime {
            Regime::Gaussian => (-((x - self.center) / self.width).powi(2)).exp(),
            Regime::Increasing => 1.0 / (1.0 + (-(x - self.center) / self.width).exp()),
            Regime::EarlyHigh => (-(x - self.center) / self.width).exp(),
        }
    }

    pub fn ln_kd(&self, x: f64) -> f64 {
        self.baseline + self.amplitude * self.profile(x)
    }
}

fn ph_asymptote(regime: Regime) -> f64 {
    match regime {
        Regime::Gaussian => 7.6,
        Regime::Increasing => 8.2,
        Regime::EarlyHigh => 7.4,
    }
}

fn ca_asymptote(regime: Regime) -> f64 {
    match regime {
        Regime::Gaussian => -1.8,
        Regime::Increasing => -2.4,
        Regime::EarlyHigh => -1.5,
    }
}

/// Pure function of `(p, cfg)`: noise is drawn from a stream keyed by the
/// seed and the bit pattern of `p`.
pub fn generate_trajectory(p: &ParameterVector, cfg: &GeneratorConfig) -> Result<Trajectory> {
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise_std must be >= 0, got {}",
            cfg.noise_std
        )));
    }
    let shape = Shape::of(p)?;
    let grid = cfg.grid.clone();
    let x0 = grid.first().log10();
    let span = grid.last().log10() - x0;
    let s0 = shape.profile(x0);

    let mut ln_kd = Vec::with_capacity(grid.len());
    let mut gamma1 = Vec::with_capacity(grid.len());
    let mut gamma2 = Vec::with_capacity(grid.len());
    for &t in grid.times() {
        let x = t.log10();
        let u = (x - x0) / span;
        let s = shape.profile(x);
        let relax = 1.0 - (-3.0 * u).exp();
        ln_kd.push(shape.baseline + shape.amplitude * s);
        gamma1.push(p.ph + (ph_asymptote(shape.regime) - p.ph) * relax + PH_SHAPE_COUPLING * (s - s0));
        gamma2.push(p.ca + (ca_asymptote(shape.regime) - p.ca) * relax + CA_SHAPE_COUPLING * (s - s0));
    }

    if cfg.noise_std > 0.0 {
        let mut rng = rng::stream(rng::fold(cfg.seed, &p.bits()), 2);
        let normal = Normal::new(0.0, cfg.noise_std)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for v in &mut ln_kd {
            *v += normal.sample(&mut rng);
        }
    }
    Trajectory::new(*p, grid, ln_kd, gamma1, gamma2)
}

/// Rejection-samples parameter vectors from the jittered grid pool until
/// every regime quota is met.
pub fn generate_dataset(n: usize, cfg: &GeneratorConfig, mix: &RegimeMix) -> Result<Dataset> {
    let quotas = mix.quotas(n)?;
    params::validate_sampling(cfg.levels, cfg.perturbation)?;
    if n == 0 {
        return Ok(Dataset::empty());
    }
    let mut rng = rng::stream(cfg.seed, 3);
    let mut filled = [0usize; 3];
    let mut seen = HashSet::new();
    let mut samples = Vec::with_capacity(n);
    let max_attempts = 2_000 * n + 100_000;
    let mut attempts = 0usize;
    while samples.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            let missing: Vec<String> = Regime::ALL
                .iter()
                .zip(filled.iter().zip(&quotas))
                .filter(|(_, (f, q))| f < q)
                .map(|(r, (f, q))| format!("{r}: {f}/{q}"))
                .collect();
            return Err(Error::InfeasibleMix(format!(
                "gave up after {max_attempts} draws; unfilled {}",
                missing.join(", ")
            )));
        }
        let p = params::draw_grid_point(&mut rng, cfg.levels, cfg.perturbation);
        let regime = classify_regime(&p)?;
        let slot = Regime::ALL.iter().position(|&r| r == regime).expect("known regime");
        if filled[slot] >= quotas[slot] || !seen.insert(p.bits()) {
            continue;
        }
        let traj = generate_trajectory(&p, cfg)?;
        if !traj.is_valid() {
            continue;
        }
        filled[slot] += 1;
        samples.push(traj);
    }
    Dataset::new(samples)
}

/// Regime tag of every sample, in dataset order.
pub fn regimes(ds: &Dataset) -> Result<Vec<Regime>> {
    ds.samples().iter().map(|t| classify_regime(&t.params)).collect()
}

/// Total-effect sensitivity of the noiseless `ln Kd` series to each parameter:
/// over a Latin-hypercube sample, one coordinate at a time is redrawn and half
/// the mean squared change of the series is recorded.
pub fn one_at_a_time_effects(n: usize, seed: u64, grid: &TimeGrid) -> Result<[f64; N_PARAMS]> {
    let mut rng = rng::stream(seed, 4);
    let base = latin_hypercube(n, &mut rng);
    let cfg = GeneratorConfig {
        noise_std: 0.0,
        grid: grid.clone(),
        ..GeneratorConfig::default()
    };
    let mut effects = [0.0; N_PARAMS];
    for p in &base {
        let f0 = generate_trajectory(p, &cfg)?.ln_kd;
        for (dim, effect) in effects.iter_mut().enumerate() {
            let mut v = p.to_array();
            v[dim] = rng.random_range(PARAM_MIN[dim]..=PARAM_MAX[dim]);
            let f1 = generate_trajectory(&ParameterVector::from_array(v), &cfg)?.ln_kd;
            let sq: f64 = f0.iter().zip(&f1).map(|(a, b)| (a - b) * (a - b)).sum();
            *effect += 0.5 * sq / (f0.len() * n) as f64;
        }
    }
    Ok(effects)
}

pub fn latin_hypercube<R: Rng>(n: usize, rng: &mut R) -> Vec<ParameterVector> {
    use rand::seq::SliceRandom;
    let columns: Vec<Vec<f64>> = (0..N_PARAMS)
        .map(|dim| {
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(rng);
            strata
                .into_iter()
                .map(|s| {
                    let u = (s as f64 + rng.random::<f64>()) / n as f64;
                    PARAM_MIN[dim] + u * (PARAM_MAX[dim] - PARAM_MIN[dim])
                })
                .collect()
        })
        .collect();
    (0..n)
        .map(|i| ParameterVector::from_array(std::array::from_fn(|d| columns[d][i])))
        .collect()
}
