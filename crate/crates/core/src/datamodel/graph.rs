use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geometry::BoundingBox;
use super::io::{read_json, write_json_atomic};
use crate::error::{Error, Result};

pub type NodeId = u32;

/// Relation threshold used when the caller has no opinion.
pub const DEFAULT_RELATION_THRESHOLD: f64 = 0.2;

const SOFT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgNode {
    #[serde(rename = "id")]
    pub node_id: NodeId,
    #[serde(rename = "category")]
    pub category_id: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

impl SgNode {
    pub fn is_human(&self, person_index: usize) -> bool {
        self.category_id == person_index
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgEdge {
    #[serde(rename = "subject")]
    pub subject_id: NodeId,
    #[serde(rename = "object")]
    pub object_id: NodeId,
    #[serde(rename = "predicate")]
    pub predicate_id: usize,
    pub confidence: f64,
    /// Predicate distribution from the scene-graph generator. Absent means
    /// one-hot at `predicate_id`.
    #[serde(rename = "soft", default, skip_serializing_if = "Option::is_none")]
    pub soft_distribution: Option<Vec<f64>>,
}

impl SgEdge {
    /// Soft predicate distribution over `num_predicates` entries.
    pub fn soft(&self, num_predicates: usize) -> Vec<f64> {
        match &self.soft_distribution {
            Some(s) => s.clone(),
            None => {
                let mut v = vec![0.0; num_predicates];
                if self.predicate_id < num_predicates {
                    v[self.predicate_id] = 1.0;
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGraph {
    pub image_id: String,
    #[serde(rename = "width")]
    pub image_width: f64,
    #[serde(rename = "height")]
    pub image_height: f64,
    pub nodes: Vec<SgNode>,
    pub edges: Vec<SgEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationSite {
    Graph,
    Node(NodeId),
    Edge(usize),
}

/// One broken invariant, naming where it was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub site: ViolationSite,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.site {
            ViolationSite::Graph => write!(f, "graph: {}", self.rule),
            ViolationSite::Node(id) => write!(f, "node {id}: {}", self.rule),
            ViolationSite::Edge(k) => write!(f, "edge #{k}: {}", self.rule),
        }
    }
}

impl SceneGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Map from node id to its position in `nodes`.
    pub fn index_of(&self) -> BTreeMap<NodeId, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.node_id, i))
            .collect()
    }

    pub fn node(&self, id: NodeId) -> Option<&SgNode> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    /// Drops edges whose confidence is below `threshold`.
    pub fn filter_edges(&mut self, threshold: f64) {
        self.edges.retain(|e| e.confidence >= threshold);
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_scene_graph(self)
    }

    /// Node positions in left-to-right order of box center x, ties broken by
    /// ascending node id.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|&a, &b| {
            let (na, nb) = (&self.nodes[a], &self.nodes[b]);
            na.bbox
                .center()
                .0
                .total_cmp(&nb.bbox.center().0)
                .then(na.node_id.cmp(&nb.node_id))
        });
        order
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }
}

/// Reads a scene graph, validates it and removes edges below `threshold`.
pub fn load_scene_graph(path: &Path, threshold: f64) -> Result<SceneGraph> {
    let mut sg: SceneGraph = read_json(path)?;
    let violations = validate_scene_graph(&sg);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Validation(format!(
            "{}: {}",
            path.display(),
            list.join("; ")
        )));
    }
    sg.filter_edges(threshold);
    Ok(sg)
}

pub fn validate_scene_graph(sg: &SceneGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |site, rule: String| out.push(Violation { site, rule });

    if !(sg.image_width > 0.0 && sg.image_height > 0.0) {
        push(ViolationSite::Graph, "image size must be positive".into());
    }
    let mut seen = BTreeSet::new();
    for n in &sg.nodes {
        let site = || ViolationSite::Node(n.node_id);
        if !seen.insert(n.node_id) {
            push(site(), "duplicate node id".into());
        }
        if let Some(rule) = n.bbox.violation() {
            push(site(), format!("box: {rule}"));
        }
        if !(0.0..=1.0).contains(&n.score) {
            push(site(), format!("score {} outside [0,1]", n.score));
        }
    }
    for (k, e) in sg.edges.iter().enumerate() {
        let site = || ViolationSite::Edge(k);
        if e.subject_id == e.object_id {
            push(site(), "subject equals object".into());
        }
        for id in [e.subject_id, e.object_id] {
            if !seen.contains(&id) {
                push(site(), format!("endpoint {id} not in graph"));
            }
        }
        if !(0.0..=1.0).contains(&e.confidence) {
            push(site(), format!("confidence {} outside [0,1]", e.confidence));
        }
        if let Some(soft) = &e.soft_distribution {
            if soft.iter().any(|&p| !(p >= 0.0)) {
                push(site(), "soft distribution has negative entries".into());
            }
            let sum: f64 = soft.iter().sum();
            if (sum - 1.0).abs() > SOFT_SUM_TOLERANCE {
                push(site(), format!("soft distribution sums to {sum}"));
            }
            match soft.get(e.predicate_id) {
                None => push(site(), "predicate outside soft distribution".into()),
                Some(&p) if (p - e.confidence).abs() > SOFT_SUM_TOLERANCE => push(
                    site(),
                    format!("confidence {} differs from soft[predicate] {p}", e.confidence),
                ),
                Some(_) => {}
            }
        }
    }
    out
}
