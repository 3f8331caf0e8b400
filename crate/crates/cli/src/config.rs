//! Run configuration: one TOML file with a section per pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kdemu::cluster::ClusterConfig;
use kdemu::data::{TimeGrid, DEFAULT_M, DEFAULT_T_MAX, DEFAULT_T_MIN};
use kdemu::emulators::{Arrangement, EmulatorConfig, FormulationKind, LearnerKind, NetworkConfig};
use kdemu::forest::ForestConfig;
use kdemu::synthgen::{GeneratorConfig, RegimeMix};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub n: usize,
    pub noise_std: f64,
    pub levels: usize,
    pub perturbation: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub m: usize,
    pub mix: RegimeMix,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            n: 172,
            noise_std: g.noise_std,
            levels: g.levels,
            perturbation: g.perturbation,
            t_min: DEFAULT_T_MIN,
            t_max: DEFAULT_T_MAX,
            m: DEFAULT_M,
            mix: RegimeMix::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// 0 leaves the dataset unsplit.
    pub n_test: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { n_test: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulatorSection {
    pub formulation: FormulationKind,
    pub arrangement: Arrangement,
    pub learner: LearnerKind,
    pub use_clustering: bool,
    pub band_level: f64,
    pub rollout_subsets: usize,
}

impl Default for EmulatorSection {
    fn default() -> Self {
        let e = EmulatorConfig::default();
        Self {
            formulation: e.formulation,
            arrangement: e.arrangement,
            learner: e.learner,
            use_clustering: e.use_clustering,
            band_level: e.band_level,
            rollout_subsets: e.rollout_subsets,
        }
    }
}

/// Paths are relative to the working directory; unset inputs default to
/// the files earlier commands write into `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            dataset: None,
            bundle: None,
            params: None,
            gamma: None,
        }
    }
}

impl PathsSection {
    pub fn dataset(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out.join("dataset.csv"))
    }

    pub fn bundle(&self) -> PathBuf {
        self.bundle.clone().unwrap_or_else(|| self.out.join("bundle"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed shared by generation, splitting and training.
    pub seed: u64,
    pub generator: GeneratorSection,
    pub split: SplitSection,
    pub clustering: ClusterConfig,
    pub forest: ForestConfig,
    pub network: NetworkConfig,
    pub emulator: EmulatorSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn generator_config(&self) -> CliResult<GeneratorConfig> {
        let g = &self.generator;
        let grid = TimeGrid::log_uniform(g.t_min, g.t_max, g.m).map_err(CliError::config)?;
        Ok(GeneratorConfig {
            noise_std: g.noise_std,
            seed: self.seed,
            grid,
            levels: g.levels,
            perturbation: g.perturbation,
        })
    }

    pub fn emulator_config(&self) -> EmulatorConfig {
        let e = &self.emulator;
        EmulatorConfig {
            formulation: e.formulation,
            arrangement: e.arrangement,
            learner: e.learner,
            use_clustering: e.use_clustering,
            clustering: self.clustering.clone(),
            forest: self.forest.clone(),
            network: self.network.clone(),
            band_level: e.band_level,
            rollout_subsets: e.rollout_subsets,
            seed: self.seed,
        }
    }
}
