//! Forest file layout: one JSON header line (format tag, version, config
//! echo, importances) followed by little-endian node arrays per tree.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Forest, ForestConfig, Tree, TreeNode};
use crate::error::{Error, Result};

const FORMAT: &str = "kdemu-forest";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    n_features: usize,
    n_trees: usize,
    config: ForestConfig,
    importances: Vec<f64>,
}

const SPLIT: u8 = 0;
const LEAF: u8 = 1;

impl Forest {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            n_features: self.n_features,
            n_trees: self.trees.len(),
            config: self.config.clone(),
            importances: self.importances.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for t in &self.trees {
            w.write_all(&(t.nodes.len() as u64).to_le_bytes())?;
            w.write_all(&(t.values.len() as u64).to_le_bytes())?;
            for node in &t.nodes {
                let (tag, a, b, c, v) = match *node {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => (SPLIT, feature, left, right, threshold),
                    TreeNode::Leaf { value, n_samples } => (LEAF, value, n_samples, 0, 0.0),
                };
                w.write_all(&[tag])?;
                for word in [a, b, c] {
                    w.write_all(&(word as u64).to_le_bytes())?;
                }
                w.write_all(&v.to_le_bytes())?;
            }
            for v in &t.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end())?;
        if header.format != FORMAT {
            return Err(Error::Format(format!("not a forest file (format `{}`)", header.format)));
        }
        if header.version != VERSION {
            return Err(Error::Format(format!("unsupported forest version {}", header.version)));
        }
        if header.importances.len() != header.n_features {
            return Err(Error::Format("importance length does not match n_features".into()));
        }
        let mut trees = Vec::with_capacity(header.n_trees);
        for _ in 0..header.n_trees {
            let n_nodes = read_u64(&mut r)? as usize;
            let n_values = read_u64(&mut r)? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let mut tag = [0u8; 1];
                r.read_exact(&mut tag)?;
                let a = read_u64(&mut r)? as usize;
                let b = read_u64(&mut r)? as usize;
                let c = read_u64(&mut r)? as usize;
                let v = f64::from_bits(read_u64(&mut r)?);
                nodes.push(match tag[0] {
                    SPLIT => TreeNode::Split {
                        feature: a,
                        threshold: v,
                        left: b,
                        right: c,
                    },
                    LEAF => TreeNode::Leaf {
                        value: a,
                        n_samples: b,
                    },
                    other => return Err(Error::Format(format!("bad node tag {other}"))),
                });
            }
            let values = (0..n_values)
                .map(|_| read_u64(&mut r).map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            trees.push(Tree {
                nodes,
                values,
                n_outputs: 1,
                n_features: header.n_features,
            });
        }
        Forest::from_parts(trees, header.importances, header.config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::super::fit_forest;
    use super::*;
    use ndarray::Array2;

    #[test]
    fn round_trip_is_bit_exact() {
        let x = Array2::from_shape_fn((60, 3), |(i, j)| ((i * 31 + j * 17) % 23) as f64 / 7.0 + 0.1 * j as f64);
        let y: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let cfg = ForestConfig {
            n_trees: 12,
            seed: 5,
            ..ForestConfig::default()
        };
        let f = fit_forest(x.view(), &y, &cfg).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let g = Forest::read_from(&buf[..]).unwrap();
        assert_eq!(f, g);
        for i in 0..60 {
            let row = x.row(i).to_vec();
            assert_eq!(
                f.predict_mean(&row).unwrap().to_bits(),
                g.predict_mean(&row).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn rejects_foreign_header() {
        let bad = b"{\"format\":\"other\",\"version\":1,\"n_features\":1,\"n_trees\":0,\"config\":{},\"importances\":[0.0]}\n";
        assert!(Forest::read_from(&bad[..]).is_err());
    }
}
