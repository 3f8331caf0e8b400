//! Bundle directory: `manifest.json`, an optional `cluster.json`, and one
//! file per learner (`model_<c>.forest` or `model_<c>.json`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmulatorBundle, EmulatorConfig, Formulation, ForestLearner, LearnerKind, MlpLearner, TrainedLearner};
use crate::cluster::ClusterModel;
use crate::data::{NormalizationMaps, TimeGrid};
use crate::error::{Error, Result};
use crate::forest::Forest;

const FORMAT: &str = "kdemu-bundle";
const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
const CLUSTER_FILE: &str = "cluster.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelEntry {
    file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subset_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_subsets: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    formulation: Formulation,
    learner_kind: LearnerKind,
    grid: TimeGrid,
    training_rows: Vec<usize>,
    cluster_file: Option<String>,
    models: Vec<ModelEntry>,
    normalization: NormalizationMaps,
    config: EmulatorConfig,
}

impl EmulatorBundle {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let cluster_file = match &self.cluster_model {
            Some(c) => {
                c.save(dir.join(CLUSTER_FILE))?;
                Some(CLUSTER_FILE.to_string())
            }
            None => None,
        };
        let mut models = Vec::with_capacity(self.models.len());
        for (c, m) in self.models.iter().enumerate() {
            models.push(match m {
                TrainedLearner::Forest(f) => {
                    let file = format!("model_{c}.forest");
                    f.forest.save(dir.join(&file))?;
                    ModelEntry {
                        file,
                        subset_seed: Some(f.subset_seed),
                        n_subsets: Some(f.n_subsets()),
                    }
                }
                TrainedLearner::Mlp(n) => {
                    let file = format!("model_{c}.json");
                    let w = std::io::BufWriter::new(fs::File::create(dir.join(&file))?);
                    serde_json::to_writer(w, n)?;
                    ModelEntry {
                        file,
                        subset_seed: None,
                        n_subsets: None,
                    }
                }
            });
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            formulation: self.formulation,
            learner_kind: self.learner_kind,
            grid: self.grid.clone(),
            training_rows: self.training_rows.clone(),
            cluster_file,
            models,
            normalization: self.normalization.clone(),
            config: self.config.clone(),
        };
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        if !path.is_file() {
            return Err(Error::MissingInput(format!("no bundle manifest at {}", path.display())));
        }
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Format(format!("{} is not a {FORMAT} v{VERSION} manifest", path.display())));
        }
        let cluster_model = manifest
            .cluster_file
            .as_ref()
            .map(|f| ClusterModel::load(dir.join(f)))
            .transpose()?;
        let models = manifest
            .models
            .iter()
            .map(|entry| {
                let file = dir.join(&entry.file);
                match manifest.learner_kind {
                    LearnerKind::Forest => {
                        let (Some(seed), Some(n)) = (entry.subset_seed, entry.n_subsets) else {
                            return Err(Error::Format(format!("{} lacks subset settings", entry.file)));
                        };
                        Ok(TrainedLearner::Forest(ForestLearner::new(Forest::load(file)?, n, seed)))
                    }
                    LearnerKind::Mlp => {
                        let r = std::io::BufReader::new(fs::File::open(file)?);
                        let m: MlpLearner = serde_json::from_reader(r)?;
                        Ok(TrainedLearner::Mlp(m))
                    }
                }
            })
            .collect::<Result<_>>()?;
        let bundle = EmulatorBundle {
            formulation: manifest.formulation,
            learner_kind: manifest.learner_kind,
            cluster_model,
            models,
            normalization: manifest.normalization,
            grid: manifest.grid,
            training_rows: manifest.training_rows,
            config: manifest.config,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}
