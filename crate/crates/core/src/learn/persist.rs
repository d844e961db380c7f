//! JSON model dump.
//!
//! ```json
//! {
//!   "format": "dae-forest",
//!   "version": 1,
//!   "model": {
//!     "params": {"n_trees": 100, "max_features": "all", "min_samples_split": 2,
//!                "min_samples_leaf": 1, "max_depth": null},
//!     "seed": 7, "n_features": 9, "output_dim": 2,
//!     "trees": [{"nodes": [
//!       {"kind": "split", "feature": 3, "threshold": -97.5, "left": 1, "right": 2,
//!        "samples": 1200, "gain": 8.1},
//!       {"kind": "leaf", "value": [51.21, 4.40], "samples": 1}, ...]}]
//!   }
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so a reloaded forest
//! predicts bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ForestModel, Node};
use crate::error::{Error, Result};

pub const FOREST_FORMAT: &str = "dae-forest";
pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct EnvelopeRef<'a> {
    format: &'a str,
    version: u32,
    model: &'a ForestModel,
}

#[derive(Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    model: ForestModel,
}

impl ForestModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&EnvelopeRef {
            format: FOREST_FORMAT,
            version: FOREST_FORMAT_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: Envelope = serde_json::from_str(text)?;
        if env.format != FOREST_FORMAT || env.version != FOREST_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("{} v{}", env.format, env.version)));
        }
        env.model.check_structure()?;
        Ok(env.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn check_structure(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::ModelFormat("forest has no trees".into()));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return Err(Error::ModelFormat(format!("tree {t} is empty")));
            }
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature, left, right, ..
                    } => {
                        if *feature >= self.n_features || *left >= tree.nodes.len() || *right >= tree.nodes.len() {
                            return Err(Error::ModelFormat(format!("tree {t}: dangling split")));
                        }
                    }
                    Node::Leaf { value, .. } => {
                        if value.len() != self.output_dim {
                            return Err(Error::ModelFormat(format!("tree {t}: leaf width {}", value.len())));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{fit_extratrees, ForestParams, Matrix};
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn reload_predicts_bit_identically() {
        let mut rng = seed::rng(8);
        let x: Vec<Vec<f64>> = (0..150)
            .map(|_| (0..4).map(|_| rng.random_range(-130.0..-50.0)).collect())
            .collect();
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] / 3.0 + 0.123456789, r[1].sin()]).collect();
        let (x, y) = (Matrix::from_rows(&x, 4).unwrap(), Matrix::from_rows(&y, 2).unwrap());
        let params = ForestParams {
            n_trees: 8,
            ..ForestParams::default()
        };
        let m = fit_extratrees(&x, &y, &params, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = ForestModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn rejects_foreign_or_broken_dumps() {
        assert!(matches!(
            ForestModel::from_json(
                r#"{"format":"other","version":1,"model":{"params":{"n_trees":1,"max_features":"all","min_samples_split":2,"min_samples_leaf":1},"seed":0,"n_features":1,"output_dim":1,"trees":[{"nodes":[{"kind":"leaf","value":[1.0],"samples":1}]}]}}"#
            ),
            Err(Error::ModelFormat(_))
        ));
        let dangling = r#"{"format":"dae-forest","version":1,"model":{"params":{"n_trees":1,"max_features":"all","min_samples_split":2,"min_samples_leaf":1},"seed":0,"n_features":1,"output_dim":1,"trees":[{"nodes":[{"kind":"split","feature":0,"threshold":0.5,"left":1,"right":7,"samples":2,"gain":1.0}]}]}}"#;
        assert!(ForestModel::from_json(dangling).is_err());
    }
}
