//! Networks are stored as JSON with a format tag, version, layer sizes and
//! row-major weights; floats round-trip exactly.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{MlpArchitecture, WeightSet};
use crate::error::{Error, Result};

const FORMAT: &str = "kdemu-mlp";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Stored {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Serialize for WeightSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        Stored {
            format: FORMAT.into(),
            version: VERSION,
            layer_sizes: self.architecture().layer_sizes,
            weights: self.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for WeightSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let stored = Stored::deserialize(d)?;
        from_stored(stored).map_err(serde::de::Error::custom)
    }
}

fn from_stored(s: Stored) -> Result<WeightSet> {
    if s.format != FORMAT || s.version != VERSION {
        return Err(Error::Format(format!("not a {FORMAT} v{VERSION} record")));
    }
    let arch = MlpArchitecture::new(s.layer_sizes)?;
    let depth = arch.n_layers() - 1;
    if s.weights.len() != depth || s.biases.len() != depth {
        return Err(Error::Format("layer count does not match layer sizes".into()));
    }
    let mut weights = Vec::with_capacity(depth);
    let mut biases = Vec::with_capacity(depth);
    for (l, (w, b)) in s.weights.into_iter().zip(s.biases).enumerate() {
        let (fan_in, fan_out) = (arch.layer_sizes[l], arch.layer_sizes[l + 1]);
        weights.push(
            Array2::from_shape_vec((fan_in, fan_out), w)
                .map_err(|_| Error::Format(format!("layer {l} weights have the wrong length")))?,
        );
        if b.len() != fan_out {
            return Err(Error::Format(format!("layer {l} biases have the wrong length")));
        }
        biases.push(Array1::from(b));
    }
    let ws = WeightSet { weights, biases };
    ws.validate()?;
    Ok(ws)
}

impl WeightSet {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}
