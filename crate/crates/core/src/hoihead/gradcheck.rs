//! Central-difference verification of the analytic gradients.
//!
//! Each target builds one stage of the model on a small fixture and reduces
//! its output to a scalar (a fixed random readout, a quadratic, or the
//! training loss). Every parameter entry reachable from that scalar is
//! perturbed by `±step` and the difference quotient compared with the
//! reverse-mode gradient.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{build_scene, mask_features, prepare_scene, PreparedScene};
use crate::config::{Architecture, ModelConfig, Switches};
use crate::datamodel::{
    AnnotationSet, BoundingBox, FeatureBundle, GroundTruthHoi, SceneGraph, SgEdge, SgNode,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::pairfeat::{MaskGradAccumulator, MaskProjector};
use crate::params::{names, Bound, ParameterStore};
use crate::relmp::{gates_on_tape, passing_on_tape, path_messages_on_tape};
use crate::sgembed::{
    context_on_tape, correlation_on_tape, embed_on_tape, relations_on_tape,
};
use crate::tape::{Mat, Var};

pub const DEFAULT_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that entries whose true
/// gradient vanishes are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradTarget {
    /// Single linear map under a quadratic loss.
    Linear,
    Spatial,
    Context,
    Relation,
    Correlation,
    GraphEmbedding,
    InterClass,
    IntraClass,
    Passing,
    Visual,
    Message,
    Pipeline,
}

impl GradTarget {
    pub const ALL: [GradTarget; 12] = [
        GradTarget::Linear,
        GradTarget::Spatial,
        GradTarget::Context,
        GradTarget::Relation,
        GradTarget::Correlation,
        GradTarget::GraphEmbedding,
        GradTarget::InterClass,
        GradTarget::IntraClass,
        GradTarget::Passing,
        GradTarget::Visual,
        GradTarget::Message,
        GradTarget::Pipeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradTarget::Linear => "linear",
            GradTarget::Spatial => "spatial",
            GradTarget::Context => "context",
            GradTarget::Relation => "relation",
            GradTarget::Correlation => "correlation",
            GradTarget::GraphEmbedding => "graph-embedding",
            GradTarget::InterClass => "inter-class",
            GradTarget::IntraClass => "intra-class",
            GradTarget::Passing => "passing",
            GradTarget::Visual => "visual",
            GradTarget::Message => "message",
            GradTarget::Pipeline => "pipeline",
        }
    }
}

impl FromStr for GradTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradTarget::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                let all: Vec<&str> = GradTarget::ALL.iter().map(|t| t.name()).collect();
                Error::Config(format!("unknown gradient target '{s}' (expected one of {})", all.join(", ")))
            })
    }
}

/// A small random scene with everything needed to run any target.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub seed: u64,
    pub vocab: Vocabulary,
    pub graph: SceneGraph,
    pub features: FeatureBundle,
    pub annotations: AnnotationSet,
    pub arch: Architecture,
}

impl Fixture {
    /// Full model on a random scene of `num_nodes ≥ 3` nodes.
    pub fn random(seed: u64, num_nodes: usize) -> Result<Fixture> {
        Fixture::with_switches(seed, num_nodes, Switches::FULL)
    }

    /// Random scene with one edge of every class combination present, so
    /// that all message paths are exercised.
    pub fn with_switches(seed: u64, num_nodes: usize, switches: Switches) -> Result<Fixture> {
        if num_nodes < 3 {
            return Err(Error::Contract("fixtures need at least three nodes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let word_dim = 5;
        let vocab = Vocabulary::new(
            words(&["person", "cup", "bag", "ball"]),
            words(&["hold", "near", "on"]),
            words(&["lift", "watch", "throw"]),
            0,
            None,
            word_dim,
        )?;
        let model = ModelConfig {
            d_s: 3,
            d_h: 4,
            d_g: 3,
            d_f: 3,
            mask_size: 4,
            ..ModelConfig::default()
        };
        let arch = Architecture::new(model, switches, 2, 3, word_dim)?;

        let humans = if num_nodes >= 4 { 2 } else { 1 };
        let mut nodes = Vec::with_capacity(num_nodes);
        let mut features = FeatureBundle::new(arch.model.d_f);
        for i in 0..num_nodes {
            let x = rng.random_range(0.0..70.0);
            let y = rng.random_range(0.0..70.0);
            let w = rng.random_range(10.0..30.0);
            let h = rng.random_range(10.0..30.0);
            let id = 10 + i as u32;
            let score = rng.random_range(0.7..1.0);
            nodes.push(SgNode {
                node_id: id,
                category_id: if i < humans { 0 } else { rng.random_range(1..4) },
                bbox: BoundingBox::new(x, y, x + w, y + h)?,
                score,
            });
            let f = (0..arch.model.d_f).map(|_| rng.random_range(-1.0..1.0)).collect();
            features.insert(id, f, score);
        }
        let random_edge = |s: usize, o: usize, rng: &mut ChaCha8Rng| {
            let mut soft: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = soft.iter().sum();
            soft.iter_mut().for_each(|v| *v /= total);
            let predicate = rng.random_range(0..3);
            SgEdge {
                subject_id: nodes[s].node_id,
                object_id: nodes[o].node_id,
                predicate_id: predicate,
                confidence: soft[predicate],
                soft_distribution: Some(soft),
            }
        };
        let mut edges = vec![random_edge(0, humans, &mut rng)];
        if humans == 2 {
            edges.push(random_edge(1, 0, &mut rng));
        }
        if num_nodes - humans >= 2 {
            edges.push(random_edge(num_nodes - 1, humans, &mut rng));
        }
        for _ in 0..rng.random_range(0..3) {
            let s = rng.random_range(0..num_nodes);
            let o = (s + rng.random_range(1..num_nodes)) % num_nodes;
            edges.push(random_edge(s, o, &mut rng));
        }
        let graph = SceneGraph {
            image_id: format!("fixture-{seed}"),
            image_width: 100.0,
            image_height: 100.0,
            nodes,
            edges,
        };
        let hois = (0..humans)
            .map(|h| GroundTruthHoi {
                human_box: graph.nodes[h].bbox,
                object_box: Some(graph.nodes[num_nodes - 1 - h].bbox),
                object_category: Some(graph.nodes[num_nodes - 1 - h].category_id),
                interaction_id: rng.random_range(0..3),
            })
            .collect();
        let annotations = AnnotationSet {
            image_id: graph.image_id.clone(),
            hois,
            rare_classes: None,
        };
        Ok(Fixture {
            seed,
            vocab,
            graph,
            features,
            annotations,
            arch,
        })
    }

    pub fn prepare(&self) -> Result<PreparedScene> {
        prepare_scene(
            &self.graph,
            &self.features,
            Some(&self.annotations),
            &self.vocab,
            &self.arch,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub target: GradTarget,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    /// False when any analytic or numeric gradient was not finite.
    pub finite: bool,
}

impl GradReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.finite && !self.tensors.is_empty() && self.max_rel_err <= tolerance
    }
}

fn readout(shape: (usize, usize), seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7ea0u64);
    Mat::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

struct Evaluated {
    loss: f64,
    grads: BTreeMap<String, Mat>,
}

fn evaluate(
    target: GradTarget,
    fx: &Fixture,
    scene: &PreparedScene,
    store: &ParameterStore,
    want_grads: bool,
) -> Result<Evaluated> {
    let arch = &fx.arch;
    let mut b = Bound::new(store);
    let mut mask_leaf: Option<(Var, MaskProjector)> = None;

    let missing = |what: &str| Error::Contract(format!("fixture lacks {what} for this target"));
    let out: Var = match target {
        GradTarget::Linear => {
            let mut rng = ChaCha8Rng::seed_from_u64(fx.seed);
            let d = 2 * arch.model.d_f;
            let x: Vec<f64> = (0..d)
                .map(|_| rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect();
            let xv = b.tape.row(&x);
            let w = b.param(names::VISUAL_WEIGHT)?;
            let y = b.tape.linear(xv, w);
            // Targets well away from the outputs keep the residuals O(1).
            let k = store.get(names::VISUAL_WEIGHT)?.nrows();
            let t = Mat::from_shape_simple_fn((1, k), || rng.random_range(2.0..3.0));
            let tv = b.tape.constant(t);
            let neg = b.tape.scale(tv, -1.0);
            let r = b.tape.add(y, neg);
            let sq = b.tape.mul(r, r);
            let half = b.tape.scale(sq, 0.5);
            let loss = b.tape.sum_all(half);
            return finish(b, loss, None, want_grads);
        }
        GradTarget::Spatial => {
            let inp = scene.sge.as_ref().ok_or_else(|| missing("graph inputs"))?;
            let s = b.tape.constant(inp.spatial.clone());
            let w = b.param(names::SPATIAL)?;
            b.tape.linear(s, w)
        }
        GradTarget::Context | GradTarget::Relation | GradTarget::Correlation => {
            let inp = scene.sge.as_ref().ok_or_else(|| missing("graph inputs"))?;
            let h = context_on_tape(&mut b, inp, arch.model.encoder_cell)?;
            if target == GradTarget::Context {
                h
            } else {
                let e = relations_on_tape(&mut b, h, inp)?;
                if target == GradTarget::Relation {
                    e
                } else {
                    correlation_on_tape(&mut b, h, e)?
                }
            }
        }
        GradTarget::GraphEmbedding => {
            let inp = scene.sge.as_ref().ok_or_else(|| missing("graph inputs"))?;
            embed_on_tape(&mut b, inp, arch)?
        }
        GradTarget::InterClass | GradTarget::IntraClass => {
            let inp = scene.passing.as_ref().ok_or_else(|| missing("passing inputs"))?;
            let f = b.tape.constant(scene.features.clone());
            let gates = gates_on_tape(&mut b, inp, arch)?;
            let paths = if target == GradTarget::InterClass { [0, 2] } else { [1, 3] };
            let mut acc: Option<Var> = None;
            for p in paths {
                if let Some(m) = path_messages_on_tape(&mut b, f, inp, &gates, p)? {
                    acc = Some(match acc {
                        Some(a) => b.tape.add(a, m),
                        None => m,
                    });
                }
            }
            acc.ok_or_else(|| missing("edges on these paths"))?
        }
        GradTarget::Passing => {
            let inp = scene.passing.as_ref().ok_or_else(|| missing("passing inputs"))?;
            let f = b.tape.constant(scene.features.clone());
            passing_on_tape(&mut b, f, inp, arch, arch.rounds)?
        }
        GradTarget::Visual | GradTarget::Message | GradTarget::Pipeline => {
            if scene.pairs.is_empty() {
                return Err(missing("candidate pairs"));
            }
            let projector = MaskProjector::new(store, arch.model.mask_size)?;
            let fs = mask_features(&projector, scene)?;
            let built = build_scene(&mut b, scene, fs, arch)?;
            match target {
                GradTarget::Visual => {
                    mask_leaf = Some((built.f_s, projector));
                    built.p_v
                }
                GradTarget::Message => built.p_m,
                _ => {
                    mask_leaf = Some((built.f_s, projector));
                    let labels = scene.labels.clone().ok_or_else(|| missing("labels"))?;
                    let loss = b.tape.bce(built.p, labels, 1e-7);
                    return finish(b, loss, mask_leaf.map(|(v, _)| (v, scene)), want_grads);
                }
            }
        }
    };
    let r = b.tape.constant(readout(b.tape.shape(out), fx.seed));
    let weighted = b.tape.mul(out, r);
    let loss = b.tape.sum_all(weighted);
    finish(b, loss, mask_leaf.map(|(v, _)| (v, scene)), want_grads)
}

fn finish(
    b: Bound,
    loss: Var,
    mask: Option<(Var, &PreparedScene)>,
    want_grads: bool,
) -> Result<Evaluated> {
    let value = b.tape.value(loss)[[0, 0]];
    if !want_grads {
        return Ok(Evaluated {
            loss: value,
            grads: BTreeMap::new(),
        });
    }
    let mut g = b.tape.backward(loss);
    let mut grads = b.param_grads(&mut g);
    if let Some((fs, scene)) = mask {
        let fs_val = b.tape.value(fs);
        let dfs = g.take(fs).unwrap_or_else(|| Mat::zeros(fs_val.dim()));
        let size = scene.pairs[0].layout.size;
        let mut acc = MaskGradAccumulator::new(size, fs_val.ncols());
        for (r, p) in scene.pairs.iter().enumerate() {
            let dz: Vec<f64> = dfs
                .row(r)
                .iter()
                .zip(fs_val.row(r))
                .map(|(g, s)| g * s * (1.0 - s))
                .collect();
            acc.add(&p.layout, &dz);
        }
        let (w, bias) = acc.dense();
        grads.insert(names::MASK_WEIGHT.to_string(), w);
        grads.insert(names::MASK_BIAS.to_string(), bias);
    }
    Ok(Evaluated { loss: value, grads })
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic and central-difference gradients of `target` on the
/// fixture, for every entry of every parameter the target reaches.
pub fn grad_check(
    target: GradTarget,
    fixture: &Fixture,
    store: &ParameterStore,
    step: f64,
) -> Result<GradReport> {
    let scene = fixture.prepare()?;
    let analytic = evaluate(target, fixture, &scene, store, true)?;
    let mut finite = analytic.loss.is_finite();
    let mut tensors = Vec::new();
    let mut probe = store.clone();
    for (name, grad) in &analytic.grads {
        let mut worst: f64 = 0.0;
        for (idx, &a) in grad.indexed_iter() {
            let original = probe.get(name)?[idx];
            let at = |v: f64, probe: &mut ParameterStore| -> Result<f64> {
                probe.get_mut(name)?[idx] = v;
                Ok(evaluate(target, fixture, &scene, probe, false)?.loss)
            };
            let plus = at(original + step, &mut probe)?;
            let minus = at(original - step, &mut probe)?;
            at(original, &mut probe)?;
            let numeric = (plus - minus) / (2.0 * step);
            if !(a.is_finite() && numeric.is_finite()) {
                finite = false;
                continue;
            }
            worst = worst.max(relative_error(a, numeric));
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            entries: grad.len(),
            max_rel_err: worst,
        });
    }
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(GradReport {
        target,
        tensors,
        max_rel_err,
        finite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_quadratic_is_near_exact() {
        let fx = Fixture::random(1, 4).unwrap();
        let store = ParameterStore::init(&fx.arch, 1);
        let r = grad_check(GradTarget::Linear, &fx, &store, DEFAULT_STEP).unwrap();
        assert_eq!(r.tensors.len(), 1);
        assert!(r.passed(1e-8), "{r:?}");
    }

    #[test]
    fn pipeline_on_three_nodes() {
        let fx = Fixture::random(2, 3).unwrap();
        let store = ParameterStore::init(&fx.arch, 2);
        let r = grad_check(GradTarget::Pipeline, &fx, &store, DEFAULT_STEP).unwrap();
        assert!(r.passed(1e-4), "{r:?}");
        assert!(r.tensors.iter().any(|t| t.name == names::MASK_WEIGHT));
    }

    #[test]
    fn target_names_round_trip() {
        for t in GradTarget::ALL {
            assert_eq!(t.name().parse::<GradTarget>().unwrap(), t);
        }
        assert!("bogus".parse::<GradTarget>().is_err());
    }
}
