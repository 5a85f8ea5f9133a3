use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{NodeId, SceneGraph};
use super::io::{read_json, write_json_atomic};
use crate::error::{Error, Result};

/// Per-node appearance vectors and detector scores, standing in for the
/// backbone and detector outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub dim: usize,
    pub vectors: BTreeMap<NodeId, Vec<f64>>,
    pub scores: BTreeMap<NodeId, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureFile {
    image_id: String,
    dim: usize,
    nodes: Vec<FeatureEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureEntry {
    id: NodeId,
    score: f64,
    feature: Vec<f64>,
}

impl FeatureBundle {
    pub fn new(dim: usize) -> Self {
        FeatureBundle {
            dim,
            vectors: BTreeMap::new(),
            scores: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: NodeId, vector: Vec<f64>, score: f64) {
        self.vectors.insert(id, vector);
        self.scores.insert(id, score);
    }

    pub fn vector(&self, id: NodeId) -> Result<&[f64]> {
        self.vectors
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Index(format!("no feature vector for node {id}")))
    }

    pub fn score(&self, id: NodeId) -> Result<f64> {
        self.scores
            .get(&id)
            .copied()
            .ok_or_else(|| Error::Index(format!("no detector score for node {id}")))
    }

    /// Checks that every node of `sg` is covered with a vector of `dim` entries.
    pub fn check_covers(&self, sg: &SceneGraph) -> Result<()> {
        for n in &sg.nodes {
            let v = self.vector(n.node_id)?;
            if v.len() != self.dim {
                return Err(Error::Validation(format!(
                    "{}: node {} feature has dimension {}, expected {}",
                    sg.image_id,
                    n.node_id,
                    v.len(),
                    self.dim
                )));
            }
            let s = self.score(n.node_id)?;
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Validation(format!(
                    "{}: node {} detector score {s} outside [0,1]",
                    sg.image_id, n.node_id
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(String, FeatureBundle)> {
        let file: FeatureFile = read_json(path)?;
        let mut fb = FeatureBundle::new(file.dim);
        for e in file.nodes {
            if e.feature.len() != file.dim {
                return Err(Error::Validation(format!(
                    "{}: node {} feature has dimension {}, expected {}",
                    path.display(),
                    e.id,
                    e.feature.len(),
                    file.dim
                )));
            }
            fb.insert(e.id, e.feature, e.score);
        }
        Ok((file.image_id, fb))
    }

    pub fn save(&self, image_id: &str, path: &Path) -> Result<()> {
        let file = FeatureFile {
            image_id: image_id.to_string(),
            dim: self.dim,
            nodes: self
                .vectors
                .iter()
                .map(|(&id, v)| FeatureEntry {
                    id,
                    score: self.scores.get(&id).copied().unwrap_or(0.0),
                    feature: v.clone(),
                })
                .collect(),
        };
        write_json_atomic(path, &file)
    }
}
