//! Relation-aware message passing between human and object nodes.
//!
//! Every edge carries messages both ways. A message from sender `j` to
//! receiver `i` is `W_src f_j ⊙ W_α α_ij`, where `α_ij` is the edge's
//! soft-weighted predicate embedding; the messages arriving at a node are
//! summed per path and projected by `W_out`. Paths are keyed by sender and
//! receiver class (`o2h`, `h2h`, `h2o`, `o2o`), each with its own weights.
//! All nodes are updated synchronously: `f' = f + Σ_paths out(·)`.

use std::collections::BTreeMap;

use crate::config::Architecture;
use crate::datamodel::{FeatureBundle, NodeId, SceneGraph, Vocabulary};
use crate::error::{Error, Result};
use crate::params::{names, Bound, ParameterStore, PASSING_PATHS};
use crate::sgembed::predicate_mixture;
use crate::tape::{Mat, Var};

/// Index into [`PASSING_PATHS`] for a (sender, receiver) class pair.
pub fn path_index(sender_human: bool, receiver_human: bool) -> usize {
    match (sender_human, receiver_human) {
        (false, true) => 0,
        (true, true) => 1,
        (true, false) => 2,
        (false, false) => 3,
    }
}

/// Message instances of one path, in edge order.
#[derive(Debug, Clone)]
pub struct PathInstances {
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub alpha: Mat,
}

/// Per-scene constant inputs of message passing; node indices follow
/// `SceneGraph::nodes`.
#[derive(Debug, Clone)]
pub struct PassingInputs {
    pub num_nodes: usize,
    pub paths: [PathInstances; 4],
}

impl PassingInputs {
    pub fn prepare(sg: &SceneGraph, vocab: &Vocabulary) -> Result<PassingInputs> {
        let index = sg.index_of();
        let human: Vec<bool> = sg
            .nodes
            .iter()
            .map(|n| n.is_human(vocab.person_index))
            .collect();
        let mut senders: [Vec<usize>; 4] = Default::default();
        let mut receivers: [Vec<usize>; 4] = Default::default();
        let mut alphas: [Vec<f64>; 4] = Default::default();
        for e in &sg.edges {
            let lookup = |id: NodeId| {
                index
                    .get(&id)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("edge endpoint {id} not in graph")))
            };
            let (s, o) = (lookup(e.subject_id)?, lookup(e.object_id)?);
            let a = predicate_mixture(e, vocab)?;
            for (from, to) in [(s, o), (o, s)] {
                let p = path_index(human[from], human[to]);
                senders[p].push(from);
                receivers[p].push(to);
                alphas[p].extend_from_slice(&a);
            }
        }
        let paths = std::array::from_fn(|p| {
            let k = senders[p].len();
            PathInstances {
                senders: std::mem::take(&mut senders[p]),
                receivers: std::mem::take(&mut receivers[p]),
                alpha: Mat::from_shape_vec((k, vocab.word_dim), std::mem::take(&mut alphas[p]))
                    .expect("alpha rows match instances"),
            }
        });
        Ok(PassingInputs {
            num_nodes: sg.nodes.len(),
            paths,
        })
    }
}

/// Projected relation gates `W_α α` per path (`None` when passing is not
/// relation-aware or the path is empty). Constant across rounds.
pub(crate) fn gates_on_tape(
    b: &mut Bound,
    inp: &PassingInputs,
    arch: &Architecture,
) -> Result<[Option<Var>; 4]> {
    let mut out = [None; 4];
    if !arch.switches.relation_aware() {
        return Ok(out);
    }
    for (p, path) in PASSING_PATHS.iter().enumerate() {
        let inst = &inp.paths[p];
        if inst.senders.is_empty() {
            continue;
        }
        let a = b.tape.constant(inst.alpha.clone());
        let w = b.param(&names::passing(path, "alpha"))?;
        out[p] = Some(b.tape.linear(a, w));
    }
    Ok(out)
}

/// Aggregated, projected messages of one path (`n x d_f`), or `None` when
/// the path has no instances.
pub(crate) fn path_messages_on_tape(
    b: &mut Bound,
    f: Var,
    inp: &PassingInputs,
    gates: &[Option<Var>; 4],
    p: usize,
) -> Result<Option<Var>> {
    let inst = &inp.paths[p];
    if inst.senders.is_empty() {
        return Ok(None);
    }
    let path = PASSING_PATHS[p];
    let src = b.param(&names::passing(path, "src"))?;
    let out = b.param(&names::passing(path, "out"))?;
    let x = b.tape.rows(f, &inst.senders);
    let mut m = b.tape.linear(x, src);
    if let Some(g) = gates[p] {
        m = b.tape.mul(m, g);
    }
    let agg = b.tape.scatter_rows(m, &inst.receivers, inp.num_nodes);
    Ok(Some(b.tape.linear(agg, out)))
}

/// One synchronous round over all paths.
pub(crate) fn round_on_tape(
    b: &mut Bound,
    f: Var,
    inp: &PassingInputs,
    gates: &[Option<Var>; 4],
) -> Result<Var> {
    let mut next = f;
    for p in 0..4 {
        if let Some(m) = path_messages_on_tape(b, f, inp, gates, p)? {
            next = b.tape.add(next, m);
        }
    }
    Ok(next)
}

pub(crate) fn passing_on_tape(
    b: &mut Bound,
    f: Var,
    inp: &PassingInputs,
    arch: &Architecture,
    rounds: usize,
) -> Result<Var> {
    let gates = gates_on_tape(b, inp, arch)?;
    let mut cur = f;
    for _ in 0..rounds {
        cur = round_on_tape(b, cur, inp, &gates)?;
    }
    Ok(cur)
}

/// Node features after `round` rounds of passing.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedFeatures {
    pub round: usize,
    pub vectors: BTreeMap<NodeId, Vec<f64>>,
}

impl RefinedFeatures {
    pub fn vector(&self, id: NodeId) -> Result<&[f64]> {
        self.vectors
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Index(format!("no refined feature for node {id}")))
    }
}

pub(crate) fn feature_matrix(sg: &SceneGraph, features: &FeatureBundle) -> Result<Mat> {
    let mut m = Mat::zeros((sg.nodes.len(), features.dim));
    for (i, n) in sg.nodes.iter().enumerate() {
        let v = features.vector(n.node_id)?;
        m.row_mut(i).assign(&ndarray::ArrayView1::from(v));
    }
    Ok(m)
}

fn check_dims(features: &FeatureBundle, arch: &Architecture) -> Result<()> {
    if features.dim != arch.model.d_f {
        return Err(Error::Contract(format!(
            "feature dim {} does not match model d_f {}",
            features.dim, arch.model.d_f
        )));
    }
    Ok(())
}

fn target_messages(
    target: NodeId,
    sg: &SceneGraph,
    features: &FeatureBundle,
    vocab: &Vocabulary,
    store: &ParameterStore,
    arch: &Architecture,
    intra: bool,
) -> Result<Vec<f64>> {
    check_dims(features, arch)?;
    let i = *sg
        .index_of()
        .get(&target)
        .ok_or_else(|| Error::Index(format!("node {target} not in graph")))?;
    let human = sg.nodes[i].is_human(vocab.person_index);
    let sender_human = if intra { human } else { !human };
    let p = path_index(sender_human, human);
    let inp = PassingInputs::prepare(sg, vocab)?;
    let mut b = Bound::new(store);
    let f = b.tape.constant(feature_matrix(sg, features)?);
    let gates = gates_on_tape(&mut b, &inp, arch)?;
    match path_messages_on_tape(&mut b, f, &inp, &gates, p)? {
        Some(m) => Ok(b.tape.value(m).row(i).to_vec()),
        None => Ok(vec![0.0; arch.model.d_f]),
    }
}

/// Projected messages a node receives from nodes of the other class
/// (objects for a human target, humans for an object target).
pub fn inter_class_messages(
    target: NodeId,
    sg: &SceneGraph,
    features: &FeatureBundle,
    vocab: &Vocabulary,
    store: &ParameterStore,
    arch: &Architecture,
) -> Result<Vec<f64>> {
    target_messages(target, sg, features, vocab, store, arch, false)
}

/// Projected messages a node receives from nodes of its own class.
pub fn intra_class_messages(
    target: NodeId,
    sg: &SceneGraph,
    features: &FeatureBundle,
    vocab: &Vocabulary,
    store: &ParameterStore,
    arch: &Architecture,
) -> Result<Vec<f64>> {
    target_messages(target, sg, features, vocab, store, arch, true)
}

/// `rounds` synchronous refinement rounds; zero rounds return the input.
pub fn run_passing(
    sg: &SceneGraph,
    features: &FeatureBundle,
    vocab: &Vocabulary,
    store: &ParameterStore,
    arch: &Architecture,
    rounds: usize,
) -> Result<RefinedFeatures> {
    check_dims(features, arch)?;
    let inp = PassingInputs::prepare(sg, vocab)?;
    let mut b = Bound::new(store);
    let f = b.tape.constant(feature_matrix(sg, features)?);
    let out = passing_on_tape(&mut b, f, &inp, arch, rounds)?;
    let m = b.tape.value(out);
    let vectors = sg
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.node_id, m.row(i).to_vec()))
        .collect();
    Ok(RefinedFeatures { round: rounds, vectors })
}

/// One round from the given features.
pub fn refine_round(
    sg: &SceneGraph,
    features: &FeatureBundle,
    vocab: &Vocabulary,
    store: &ParameterStore,
    arch: &Architecture,
) -> Result<RefinedFeatures> {
    run_passing(sg, features, vocab, store, arch, 1)
}
