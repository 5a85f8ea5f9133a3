//! Dataset directories, checkpoints and the load → prepare → predict wiring
//! shared by the command-line tools and the end-to-end tests.
//!
//! A dataset directory holds `manifest.json`, `vocabulary.json`, `world.json`
//! (when generated) and one `scenes/<image_id>/` folder per scene with
//! `scene_graph.json`, `features.json` and `annotations.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Architecture;
use crate::datamodel::io::{read_json, write_json_atomic};
use crate::datamodel::{
    load_annotations, load_scene_graph, AnnotationSet, FeatureBundle, ImageDetections,
    SceneGraph, Vocabulary,
};
use crate::error::{Error, Result};
use crate::hoihead::{detections_from_scores, prepare_scene, score_scene, PreparedScene, SceneScores};
use crate::pairfeat::MaskProjector;
use crate::params::{load_checkpoint, CheckpointHeader, ParameterStore};
use crate::synthworld::{RuleTable, Split, World, WorldConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const WORLD_FILE: &str = "world.json";
pub const SCENE_GRAPH_FILE: &str = "scene_graph.json";
pub const FEATURES_FILE: &str = "features.json";
pub const ANNOTATIONS_FILE: &str = "annotations.json";

/// Generator settings stored next to a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFile {
    pub config: WorldConfig,
    pub rules: RuleTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub image_id: String,
    pub split: Split,
    /// File name → hex SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub num_scenes: usize,
    pub vocabulary_fingerprint: String,
    /// Interaction classes with few training instances.
    #[serde(default)]
    pub rare_classes: Vec<usize>,
    pub scenes: Vec<SceneEntry>,
}

impl Manifest {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!(
            "unknown split '{other}' (expected train or test)"
        ))),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes every scene of `world` under `dir`, then the manifest last so a
/// partially written directory is never mistaken for a dataset.
pub fn write_dataset(world: &World, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    world.vocabulary.save(&dir.join(VOCABULARY_FILE))?;
    write_json_atomic(
        &dir.join(WORLD_FILE),
        &WorldFile {
            config: world.config.clone(),
            rules: world.rules.clone(),
        },
    )?;
    let scenes = world
        .scenes
        .par_iter()
        .map(|s| {
            let id = &s.graph.image_id;
            let sdir = dir.join("scenes").join(id);
            s.graph.save(&sdir.join(SCENE_GRAPH_FILE))?;
            s.features.save(id, &sdir.join(FEATURES_FILE))?;
            s.annotations.save(&sdir.join(ANNOTATIONS_FILE))?;
            let mut files = BTreeMap::new();
            for name in [SCENE_GRAPH_FILE, FEATURES_FILE, ANNOTATIONS_FILE] {
                files.insert(name.to_string(), sha256_file(&sdir.join(name))?);
            }
            Ok(SceneEntry {
                image_id: id.clone(),
                split: s.split,
                files,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        num_scenes: scenes.len(),
        vocabulary_fingerprint: world.vocabulary.fingerprint(),
        rare_classes: world.rare_classes.clone(),
        scenes,
    };
    write_json_atomic(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// One scene as read from disk.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub graph: SceneGraph,
    pub features: FeatureBundle,
    pub annotations: Option<AnnotationSet>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub vocabulary: Vocabulary,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
        let vocabulary = Vocabulary::load(&dir.join(VOCABULARY_FILE))?;
        if vocabulary.fingerprint() != manifest.vocabulary_fingerprint {
            return Err(Error::Validation(format!(
                "{}: vocabulary does not match the manifest",
                dir.display()
            )));
        }
        if manifest.num_scenes != manifest.scenes.len() {
            return Err(Error::Validation(format!(
                "{}: manifest lists {} scenes but claims {}",
                dir.display(),
                manifest.scenes.len(),
                manifest.num_scenes
            )));
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            vocabulary,
        })
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &SceneEntry> {
        self.manifest.scenes.iter().filter(move |e| e.split == split)
    }

    fn scene_file(&self, entry: &SceneEntry, name: &str) -> Result<Option<PathBuf>> {
        let Some(expected) = entry.files.get(name) else {
            return Ok(None);
        };
        let path = self.dir.join("scenes").join(&entry.image_id).join(name);
        let actual = sha256_file(&path)?;
        if &actual != expected {
            return Err(Error::Validation(format!(
                "{}: checksum mismatch",
                path.display()
            )));
        }
        Ok(Some(path))
    }

    /// Loads and checksums one scene; edges below `threshold` are dropped.
    pub fn load_scene(&self, entry: &SceneEntry, threshold: f64) -> Result<LoadedScene> {
        let missing = |name: &str| {
            Error::Validation(format!("scene '{}' lists no {name}", entry.image_id))
        };
        let sg_path = self
            .scene_file(entry, SCENE_GRAPH_FILE)?
            .ok_or_else(|| missing(SCENE_GRAPH_FILE))?;
        let graph = load_scene_graph(&sg_path, threshold)?;
        let feat_path = self
            .scene_file(entry, FEATURES_FILE)?
            .ok_or_else(|| missing(FEATURES_FILE))?;
        let (feat_id, features) = FeatureBundle::load(&feat_path)?;
        if feat_id != graph.image_id || graph.image_id != entry.image_id {
            return Err(Error::Validation(format!(
                "scene '{}': image ids disagree across files",
                entry.image_id
            )));
        }
        let annotations = match self.scene_file(entry, ANNOTATIONS_FILE)? {
            Some(p) => {
                let mut sets = load_annotations(&p)?;
                if sets.len() != 1 || sets[0].image_id != entry.image_id {
                    return Err(Error::Validation(format!(
                        "{}: expected one annotation set for '{}'",
                        p.display(),
                        entry.image_id
                    )));
                }
                sets.pop()
            }
            None => None,
        };
        Ok(LoadedScene {
            graph,
            features,
            annotations,
        })
    }

    pub fn load_split(&self, split: Split, threshold: f64) -> Result<Vec<LoadedScene>> {
        let entries: Vec<&SceneEntry> = self.entries(split).collect();
        entries
            .par_iter()
            .map(|e| self.load_scene(e, threshold))
            .collect()
    }
}

/// Prepares every scene in order; labels are attached when annotations exist.
pub fn prepare_all(
    scenes: &[LoadedScene],
    vocab: &Vocabulary,
    arch: &Architecture,
) -> Result<Vec<PreparedScene>> {
    scenes
        .par_iter()
        .map(|s| prepare_scene(&s.graph, &s.features, s.annotations.as_ref(), vocab, arch))
        .collect()
}

/// Scores and detections of every scene, in input order.
pub fn predict_all(
    store: &ParameterStore,
    arch: &Architecture,
    scenes: &[PreparedScene],
    min_score: f64,
) -> Result<Vec<(SceneScores, ImageDetections)>> {
    store.check_layout(arch)?;
    let projector = MaskProjector::new(store, arch.model.mask_size)?;
    scenes
        .par_iter()
        .map(|s| {
            let scores = score_scene(store, &projector, s, arch)?;
            let dets = detections_from_scores(s, &scores, min_score);
            Ok((scores, dets))
        })
        .collect()
}

/// Loads a checkpoint and refuses it if it was trained on another vocabulary.
pub fn open_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<(CheckpointHeader, ParameterStore)> {
    let (header, store) = load_checkpoint(path)?;
    let fp = vocab.fingerprint();
    if header.vocabulary_fingerprint != fp {
        return Err(Error::Contract(format!(
            "{} was trained with vocabulary {}, data uses {fp}",
            path.display(),
            header.vocabulary_fingerprint
        )));
    }
    if header.architecture.num_interactions != vocab.num_interactions() {
        return Err(Error::Contract(format!(
            "checkpoint predicts {} interactions, vocabulary has {}",
            header.architecture.num_interactions,
            vocab.num_interactions()
        )));
    }
    Ok((header, store))
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn name_of(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| format!("#{i}"))
}

/// Graphviz dump with two clusters: the input scene graph and the predicted
/// HOI graph (one edge per interaction scoring at least `min_score`).
pub fn scene_dot(
    scene: &PreparedScene,
    scores: &SceneScores,
    vocab: &Vocabulary,
    min_score: f64,
) -> String {
    let sg = &scene.graph;
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", dot_escape(&sg.image_id));
    let _ = writeln!(out, "  compound=true;");
    for (prefix, label) in [("sg", "scene graph"), ("hoi", "interactions")] {
        let _ = writeln!(out, "  subgraph cluster_{prefix} {{");
        let _ = writeln!(out, "    label=\"{label}\";");
        for n in &sg.nodes {
            let _ = writeln!(
                out,
                "    {prefix}_{} [label=\"{} {}\\n{:.2}\"];",
                n.node_id,
                dot_escape(&name_of(&vocab.objects, n.category_id)),
                n.node_id,
                n.score
            );
        }
        if prefix == "sg" {
            for e in &sg.edges {
                let _ = writeln!(
                    out,
                    "    sg_{} -> sg_{} [label=\"{} {:.2}\"];",
                    e.subject_id,
                    e.object_id,
                    dot_escape(&name_of(&vocab.predicates, e.predicate_id)),
                    e.confidence
                );
            }
        } else {
            for (r, pair) in scene.pairs.iter().enumerate() {
                let h = sg.nodes[pair.human].node_id;
                let o = sg.nodes[pair.object].node_id;
                for (k, &p) in scores.p.row(r).iter().enumerate() {
                    if p >= min_score {
                        let _ = writeln!(
                            out,
                            "    hoi_{h} -> hoi_{o} [label=\"{} {p:.3}\"];",
                            dot_escape(&name_of(&vocab.interactions, k))
                        );
                    }
                }
            }
        }
        let _ = writeln!(out, "  }}");
    }
    out.push_str("}\n");
    out
}
