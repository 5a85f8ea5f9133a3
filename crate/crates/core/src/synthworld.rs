//! Deterministic synthetic scenes whose ground-truth interactions are a
//! fixed function of the scene-graph relations.
//!
//! Humans stand in separate horizontal slots of the canvas. An object
//! related to a human is drawn overlapping that human, so the pair layout
//! identifies who interacts with what; which interaction it is follows from
//! the edge predicate (and, for some rules, the object category) through a
//! [`RuleTable`]. Unrelated objects are scattered away from people.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    AnnotationSet, BoundingBox, FeatureBundle, GroundTruthHoi, NodeId, SceneGraph, SgEdge, SgNode,
    Vocabulary, WORD_DIM,
};
use crate::error::{Error, Result};

const OBJECT_NAMES: [&str; 10] = [
    "person", "cup", "pizza", "bag", "chair", "bicycle", "ball", "book", "phone", "horse",
];
const PREDICATE_NAMES: [&str; 8] = [
    "hold", "ride", "eat", "look_at", "carry", "sit_on", "talk_to", "next_to",
];
const INTERACTION_NAMES: [&str; 6] = ["hold", "ride", "look", "eat_pizza", "carry_bag", "sit_chair"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub seed: u64,
    pub num_scenes: usize,
    /// The last `num_test` scenes form the test split.
    pub num_test: usize,
    pub humans: (usize, usize),
    pub objects: (usize, usize),
    pub canvas: (f64, f64),
    pub num_objects: usize,
    pub num_predicates: usize,
    /// Trailing predicates reserved for human–human edges.
    pub human_predicates: usize,
    pub num_interactions: usize,
    pub feature_dim: usize,
    pub noise: f64,
    /// Chance that an object is related to some human.
    pub relation_prob: f64,
    /// Chance of an edge between two humans.
    pub human_edge_prob: f64,
    /// Chance that a related object's category is one a rule asks for.
    pub rule_affinity: f64,
    /// Chance that an edge is dropped from the emitted scene graph (labels
    /// are computed before dropping).
    pub edge_dropout: f64,
    /// Classes with fewer training instances are reported as rare.
    pub rare_threshold: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 7,
            num_scenes: 600,
            num_test: 100,
            humans: (1, 3),
            objects: (2, 5),
            canvas: (640.0, 480.0),
            num_objects: 10,
            num_predicates: 8,
            human_predicates: 2,
            num_interactions: 6,
            feature_dim: 256,
            noise: 0.1,
            relation_prob: 0.7,
            human_edge_prob: 0.3,
            rule_affinity: 0.5,
            edge_dropout: 0.0,
            rare_threshold: 10,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_scenes == 0 || self.num_test > self.num_scenes {
            return bad(format!(
                "need num_scenes >= 1 and num_test <= num_scenes (got {} / {})",
                self.num_scenes, self.num_test
            ));
        }
        for (name, (lo, hi)) in [("humans", self.humans), ("objects", self.objects)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range must satisfy 1 <= min <= max, got {lo}..={hi}"));
            }
        }
        if !(self.canvas.0 >= 64.0 && self.canvas.1 >= 64.0) {
            return bad("canvas must be at least 64x64".into());
        }
        if self.num_objects < 2 || self.num_interactions == 0 || self.feature_dim == 0 {
            return bad("vocabulary sizes and feature_dim must be positive (objects >= 2)".into());
        }
        if self.human_predicates >= self.num_predicates {
            return bad("need at least one human-object predicate".into());
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        for (name, p) in [
            ("relation_prob", self.relation_prob),
            ("human_edge_prob", self.human_edge_prob),
            ("rule_affinity", self.rule_affinity),
            ("edge_dropout", self.edge_dropout),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }

    fn object_predicates(&self) -> usize {
        self.num_predicates - self.human_predicates
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let names = |fixed: &[&str], n: usize, prefix: &str| -> Vec<String> {
            (0..n)
                .map(|i| fixed.get(i).map_or_else(|| format!("{prefix}_{i}"), |s| s.to_string()))
                .collect()
        };
        Vocabulary::new(
            names(&OBJECT_NAMES, self.num_objects, "object"),
            names(&PREDICATE_NAMES, self.num_predicates, "predicate"),
            names(&INTERACTION_NAMES, self.num_interactions, "interaction"),
            0,
            None,
            WORD_DIM,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub predicate: usize,
    /// `None` matches any object category.
    pub category: Option<usize>,
    pub interaction: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleTable {
    pub rules: Vec<Rule>,
}

impl RuleTable {
    /// Three predicate-only rules and three that also need the category.
    pub fn default_table() -> RuleTable {
        let r = |predicate, category, interaction| Rule {
            predicate,
            category,
            interaction,
        };
        RuleTable {
            rules: vec![
                r(0, None, 0),
                r(1, None, 1),
                r(3, None, 2),
                r(2, Some(2), 3),
                r(4, Some(3), 4),
                r(5, Some(4), 5),
            ],
        }
    }

    /// Every interaction determined by one predicate alone.
    pub fn predicate_only() -> RuleTable {
        RuleTable {
            rules: (0..6)
                .map(|i| Rule {
                    predicate: i,
                    category: None,
                    interaction: i,
                })
                .collect(),
        }
    }

    pub fn validate(&self, cfg: &WorldConfig) -> Result<()> {
        let mut keys = BTreeSet::new();
        for r in &self.rules {
            if r.predicate >= cfg.object_predicates() {
                return Err(Error::Config(format!(
                    "rule predicate {} is not a human-object predicate (have {})",
                    r.predicate,
                    cfg.object_predicates()
                )));
            }
            if r.category.is_some_and(|c| c == 0 || c >= cfg.num_objects) {
                return Err(Error::Config(format!("rule category {:?} invalid", r.category)));
            }
            if r.interaction >= cfg.num_interactions {
                return Err(Error::Config(format!(
                    "rule interaction {} outside {} classes",
                    r.interaction, cfg.num_interactions
                )));
            }
            if !keys.insert((r.predicate, r.category)) {
                return Err(Error::Config(format!(
                    "duplicate rule key ({}, {:?})",
                    r.predicate, r.category
                )));
            }
        }
        Ok(())
    }

    pub fn lookup(&self, predicate: usize, category: usize) -> impl Iterator<Item = usize> + '_ {
        self.rules
            .iter()
            .filter(move |r| r.predicate == predicate && r.category.is_none_or(|c| c == category))
            .map(|r| r.interaction)
    }

    /// Categories named by rules on `predicate`.
    fn categories_for(&self, predicate: usize) -> Vec<usize> {
        self.rules
            .iter()
            .filter(|r| r.predicate == predicate)
            .filter_map(|r| r.category)
            .collect()
    }
}

/// Union of rule lookups over all `human → object` edges.
pub fn rule_label(
    sg: &SceneGraph,
    human_id: NodeId,
    object_id: NodeId,
    rules: &RuleTable,
) -> BTreeSet<usize> {
    let Some(object) = sg.node(object_id) else {
        return BTreeSet::new();
    };
    sg.edges
        .iter()
        .filter(|e| e.subject_id == human_id && e.object_id == object_id)
        .flat_map(|e| rules.lookup(e.predicate_id, object.category_id))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLabel {
    pub human: NodeId,
    pub object: NodeId,
    pub interactions: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub split: Split,
    pub graph: SceneGraph,
    pub features: FeatureBundle,
    pub annotations: AnnotationSet,
    /// Every (human, non-human object) pair with its label set.
    pub pair_labels: Vec<PairLabel>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub rules: RuleTable,
    pub vocabulary: Vocabulary,
    pub scenes: Vec<SynthScene>,
    pub rare_classes: Vec<usize>,
}

impl World {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SynthScene> {
        self.scenes.iter().filter(move |s| s.split == split)
    }
}

fn prototypes(cfg: &WorldConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    (0..cfg.num_objects)
        .map(|_| {
            (0..cfg.feature_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect()
}

fn overlaps(a: &BoundingBox, b: &BoundingBox) -> bool {
    a.x_tl < b.x_br && b.x_tl < a.x_br && a.y_tl < b.y_br && b.y_tl < a.y_br
}

/// Soft predicate distribution peaked on `predicate`.
fn soft_distribution(rng: &mut ChaCha8Rng, predicate: usize, n: usize) -> (f64, Vec<f64>) {
    let confidence: f64 = rng.random_range(0.6..0.95);
    let mut soft: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    soft[predicate] = 0.0;
    let rest: f64 = soft.iter().sum();
    for v in soft.iter_mut() {
        *v = if rest > 0.0 { *v / rest * (1.0 - confidence) } else { 0.0 };
    }
    soft[predicate] = if rest > 0.0 { confidence } else { 1.0 };
    (soft[predicate], soft)
}

fn generate_scene(
    cfg: &WorldConfig,
    rules: &RuleTable,
    protos: &[Vec<f64>],
    index: usize,
) -> Result<SynthScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (cw, ch) = cfg.canvas;
    let n_h = rng.random_range(cfg.humans.0..=cfg.humans.1);
    let n_o = rng.random_range(cfg.objects.0..=cfg.objects.1);

    let slot = cw / n_h as f64;
    let mut humans = Vec::with_capacity(n_h);
    for i in 0..n_h {
        let w = rng.random_range(0.35..0.7) * slot.min(200.0);
        let h = rng.random_range(0.4..0.8) * ch;
        let x = i as f64 * slot + rng.random_range(0.0..(slot - w));
        let y = rng.random_range(0.0..(ch - h));
        humans.push(BoundingBox::new(x, y, x + w, y + h)?);
    }

    let object_preds = cfg.object_predicates();
    let mut nodes: Vec<SgNode> = humans
        .iter()
        .enumerate()
        .map(|(i, b)| SgNode {
            node_id: i as NodeId,
            category_id: 0,
            bbox: *b,
            score: rng.random_range(0.8..1.0),
        })
        .collect();
    let mut edges = Vec::new();
    for j in 0..n_o {
        let related = rng.random_bool(cfg.relation_prob);
        let (category, bbox) = if related {
            let owner = rng.random_range(0..n_h);
            let predicate = rng.random_range(0..object_preds);
            let wanted = rules.categories_for(predicate);
            let category = if !wanted.is_empty() && rng.random_bool(cfg.rule_affinity) {
                wanted[rng.random_range(0..wanted.len())]
            } else {
                rng.random_range(1..cfg.num_objects)
            };
            let hb = humans[owner];
            let w = rng.random_range(0.4..0.9) * hb.width();
            let h = rng.random_range(0.1..0.3) * hb.height();
            let cx = rng.random_range(hb.x_tl + w / 2.0..=hb.x_br - w / 2.0);
            let cy = rng.random_range(hb.y_tl + h / 2.0..=hb.y_br - h / 2.0);
            let (confidence, soft) = soft_distribution(&mut rng, predicate, cfg.num_predicates);
            edges.push(SgEdge {
                subject_id: owner as NodeId,
                object_id: (n_h + j) as NodeId,
                predicate_id: predicate,
                confidence,
                soft_distribution: Some(soft),
            });
            (category, BoundingBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)?)
        } else {
            let category = rng.random_range(1..cfg.num_objects);
            let mut bbox = BoundingBox::new(0.0, 0.0, 1.0, 1.0)?;
            for _ in 0..32 {
                let w = rng.random_range(20.0..60.0);
                let h = rng.random_range(20.0..60.0);
                let x = rng.random_range(0.0..cw - w);
                let y = rng.random_range(0.0..ch - h);
                bbox = BoundingBox::new(x, y, x + w, y + h)?;
                if !humans.iter().any(|hb| overlaps(hb, &bbox)) {
                    break;
                }
            }
            (category, bbox)
        };
        nodes.push(SgNode {
            node_id: (n_h + j) as NodeId,
            category_id: category,
            bbox,
            score: rng.random_range(0.6..1.0),
        });
    }
    for a in 0..n_h {
        for b in a + 1..n_h {
            if rng.random_bool(cfg.human_edge_prob) {
                let predicate = object_preds + rng.random_range(0..cfg.human_predicates);
                let (confidence, soft) = soft_distribution(&mut rng, predicate, cfg.num_predicates);
                let (s, o) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
                edges.push(SgEdge {
                    subject_id: s as NodeId,
                    object_id: o as NodeId,
                    predicate_id: predicate,
                    confidence,
                    soft_distribution: Some(soft),
                });
            }
        }
    }

    let mut features = FeatureBundle::new(cfg.feature_dim);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    for n in &nodes {
        let v = protos[n.category_id]
            .iter()
            .map(|p| p + noise.sample(&mut rng))
            .collect();
        features.insert(n.node_id, v, n.score);
    }

    let mut graph = SceneGraph {
        image_id: format!("scene-{index:05}"),
        image_width: cw,
        image_height: ch,
        nodes,
        edges,
    };
    let mut pair_labels = Vec::new();
    let mut hois = Vec::new();
    for h in graph.nodes.iter().filter(|n| n.category_id == 0) {
        for o in graph.nodes.iter().filter(|n| n.category_id != 0) {
            let set = rule_label(&graph, h.node_id, o.node_id, rules);
            for &k in &set {
                hois.push(GroundTruthHoi {
                    human_box: h.bbox,
                    object_box: Some(o.bbox),
                    object_category: Some(o.category_id),
                    interaction_id: k,
                });
            }
            pair_labels.push(PairLabel {
                human: h.node_id,
                object: o.node_id,
                interactions: set,
            });
        }
    }
    if cfg.edge_dropout > 0.0 {
        graph.edges.retain(|_| !rng.random_bool(cfg.edge_dropout));
    }
    let split = if index + cfg.num_test >= cfg.num_scenes {
        Split::Test
    } else {
        Split::Train
    };
    Ok(SynthScene {
        split,
        annotations: AnnotationSet {
            image_id: graph.image_id.clone(),
            hois,
            rare_classes: None,
        },
        graph,
        features,
        pair_labels,
    })
}

/// Generates every scene; scenes are independent streams of one seeded
/// generator, so the output is identical for any thread count.
pub fn generate_world(config: &WorldConfig, rules: &RuleTable) -> Result<World> {
    config.validate()?;
    rules.validate(config)?;
    let vocabulary = config.vocabulary()?;
    let protos = prototypes(config);
    let scenes = (0..config.num_scenes)
        .into_par_iter()
        .map(|i| generate_scene(config, rules, &protos, i))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0usize; config.num_interactions];
    for s in scenes.iter().filter(|s| s.split == Split::Train) {
        for h in &s.annotations.hois {
            counts[h.interaction_id] += 1;
        }
    }
    let rare_classes = (0..config.num_interactions)
        .filter(|&k| counts[k] < config.rare_threshold)
        .collect();
    Ok(World {
        config: config.clone(),
        rules: rules.clone(),
        vocabulary,
        scenes,
        rare_classes,
    })
}
