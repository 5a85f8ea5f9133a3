//! Pair scoring: a visual branch gated by the semantic-mask feature, a
//! message branch over the graph embedding and refined node features, and
//! their detector-weighted product.

pub mod gradcheck;
pub mod train;

use crate::config::Architecture;
use crate::datamodel::{
    iou, AnnotationSet, FeatureBundle, HoiDetection, ImageDetections, NodeId, SceneGraph,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::pairfeat::{mask_layout, MaskLayout, MaskProjector};
use crate::params::{names, Bound, ParameterStore};
use crate::relmp::{feature_matrix, passing_on_tape, PassingInputs};
use crate::sgembed::{embed_on_tape, GraphInputs};
use crate::tape::{bce_term, Mat, Var};

fn row_var(b: &mut Bound, v: &[f64]) -> Var {
    b.tape.row(v)
}

fn head_on_tape(b: &mut Bound, x: Var, weight: &str, bias: &str) -> Result<Var> {
    let w = b.param(weight)?;
    let bias = b.param(bias)?;
    let lin = b.tape.linear(x, w);
    let z = b.tape.add_row(lin, bias);
    Ok(b.tape.sigmoid(z))
}

fn check_len(what: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Contract(format!("{what} has length {}, expected {n}", v.len())));
    }
    Ok(())
}

/// `σ(W_v (f_s ⊙ [f_h; f_o]) + b_v)`
pub fn predict_visual(
    f_s: &[f64],
    f_h: &[f64],
    f_o: &[f64],
    store: &ParameterStore,
) -> Result<Vec<f64>> {
    check_len("object feature", f_o, f_h.len())?;
    check_len("mask feature", f_s, 2 * f_h.len())?;
    let mut b = Bound::new(store);
    let s = row_var(&mut b, f_s);
    let h = row_var(&mut b, f_h);
    let o = row_var(&mut b, f_o);
    let x = b.tape.concat_cols(&[h, o]);
    let gated = b.tape.mul(s, x);
    let p = head_on_tape(&mut b, gated, names::VISUAL_WEIGHT, names::VISUAL_BIAS)?;
    Ok(b.tape.value(p).iter().copied().collect())
}

/// `σ(W_m [g̃; f̃_h; f̃_o] + b_m)`
pub fn predict_message(
    g: &[f64],
    f_h: &[f64],
    f_o: &[f64],
    store: &ParameterStore,
) -> Result<Vec<f64>> {
    check_len("object feature", f_o, f_h.len())?;
    let mut b = Bound::new(store);
    let cat: Vec<f64> = g.iter().chain(f_h).chain(f_o).copied().collect();
    let x = row_var(&mut b, &cat);
    let p = head_on_tape(&mut b, x, names::MESSAGE_WEIGHT, names::MESSAGE_BIAS)?;
    Ok(b.tape.value(p).iter().copied().collect())
}

/// Detector weight `(s_h · s_o)^γ`.
pub fn pair_lambda(s_h: f64, s_o: f64, gamma: f64) -> f64 {
    (s_h * s_o).powf(gamma)
}

/// `λ · p_v ⊙ p_m`
pub fn combine(lambda: f64, p_v: &[f64], p_m: &[f64]) -> Result<Vec<f64>> {
    check_len("message scores", p_m, p_v.len())?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Contract(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(p_v.iter().zip(p_m).map(|(v, m)| v * m * lambda).collect())
}

/// Mean binary cross-entropy over classes, probabilities clamped to
/// `[eps, 1 - eps]`.
pub fn bce_loss(p: &[f64], y: &[f64], eps: f64) -> Result<f64> {
    check_len("labels", y, p.len())?;
    if p.is_empty() {
        return Err(Error::Contract("empty score vector".into()));
    }
    let total: f64 = p.iter().zip(y).map(|(&p, &y)| bce_term(p, y, eps)).sum();
    Ok(total / p.len() as f64)
}

/// One candidate (human, object) pair of a prepared scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSlot {
    pub human: usize,
    pub object: usize,
    pub lambda: f64,
    pub layout: MaskLayout,
}

/// A scene with every per-scene constant precomputed.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub graph: SceneGraph,
    pub features: Mat,
    pub sge: Option<GraphInputs>,
    pub passing: Option<PassingInputs>,
    pub pairs: Vec<PairSlot>,
    /// `pairs x K` targets, present for training scenes.
    pub labels: Option<Mat>,
}

impl PreparedScene {
    pub fn image_id(&self) -> &str {
        &self.graph.image_id
    }

    pub fn pair_ids(&self, k: usize) -> (NodeId, NodeId) {
        let p = &self.pairs[k];
        (self.graph.nodes[p.human].node_id, self.graph.nodes[p.object].node_id)
    }
}

/// Candidate pairs: every confident human with every other confident node
/// (humans may take the object role). Nodes keep graph order.
pub fn candidate_pairs(
    sg: &SceneGraph,
    features: &FeatureBundle,
    vocab: &Vocabulary,
    arch: &Architecture,
) -> Result<Vec<PairSlot>> {
    let m = &arch.model;
    let mut keep = Vec::with_capacity(sg.nodes.len());
    for n in &sg.nodes {
        let s = features.score(n.node_id)?;
        let human = n.is_human(vocab.person_index);
        let thr = if human { m.human_threshold } else { m.object_threshold };
        keep.push((human, s, s >= thr));
    }
    let mut pairs = Vec::new();
    for (h, hn) in sg.nodes.iter().enumerate() {
        let (is_h, s_h, ok_h) = keep[h];
        if !(is_h && ok_h) {
            continue;
        }
        for (o, on) in sg.nodes.iter().enumerate() {
            let (_, s_o, ok_o) = keep[o];
            if o == h || !ok_o {
                continue;
            }
            pairs.push(PairSlot {
                human: h,
                object: o,
                lambda: pair_lambda(s_h, s_o, m.lambda_gamma),
                layout: mask_layout(
                    &hn.bbox,
                    &on.bbox,
                    hn.category_id,
                    on.category_id,
                    vocab.num_objects(),
                    m.mask_size,
                )?,
            });
        }
    }
    Ok(pairs)
}

/// Training targets: a pair is positive for class `k` when some annotated
/// `k` instance overlaps its human box (and its object box, if annotated)
/// with IoU above 0.5.
pub fn pair_targets(
    sg: &SceneGraph,
    pairs: &[PairSlot],
    ann: &AnnotationSet,
    num_interactions: usize,
) -> Result<Mat> {
    ann.check(num_interactions)?;
    let mut y = Mat::zeros((pairs.len(), num_interactions));
    for (r, p) in pairs.iter().enumerate() {
        let hb = &sg.nodes[p.human].bbox;
        let ob = &sg.nodes[p.object].bbox;
        for gt in &ann.hois {
            if iou(&gt.human_box, hb)? <= 0.5 {
                continue;
            }
            if let Some(gob) = &gt.object_box {
                if iou(gob, ob)? <= 0.5 {
                    continue;
                }
            }
            y[[r, gt.interaction_id]] = 1.0;
        }
    }
    Ok(y)
}

pub fn prepare_scene(
    sg: &SceneGraph,
    features: &FeatureBundle,
    annotations: Option<&AnnotationSet>,
    vocab: &Vocabulary,
    arch: &Architecture,
) -> Result<PreparedScene> {
    if features.dim != arch.model.d_f {
        return Err(Error::Contract(format!(
            "feature dim {} does not match model d_f {}",
            features.dim, arch.model.d_f
        )));
    }
    features.check_covers(sg)?;
    let pairs = candidate_pairs(sg, features, vocab, arch)?;
    let labels = annotations
        .map(|a| pair_targets(sg, &pairs, a, arch.num_interactions))
        .transpose()?;
    Ok(PreparedScene {
        graph: sg.clone(),
        features: feature_matrix(sg, features)?,
        sge: if arch.switches.sge {
            Some(GraphInputs::prepare(sg, vocab)?)
        } else {
            None
        },
        passing: if arch.switches.passing_enabled() {
            Some(PassingInputs::prepare(sg, vocab)?)
        } else {
            None
        },
        pairs,
        labels,
    })
}

pub(crate) struct Built {
    pub p: Var,
    pub p_v: Var,
    pub p_m: Var,
    pub f_s: Var,
}

/// Mask features for every pair, `pairs x 2·d_f`.
pub(crate) fn mask_features(projector: &MaskProjector, scene: &PreparedScene) -> Result<Mat> {
    let mut m = Mat::zeros((scene.pairs.len(), projector.out_dim()));
    for (r, p) in scene.pairs.iter().enumerate() {
        let v = projector.project(&p.layout)?;
        m.row_mut(r).assign(&ndarray::Array1::from(v));
    }
    Ok(m)
}

/// Graph-level context vector `1 x d_g` for the active variant.
pub(crate) fn graph_vector(b: &mut Bound, scene: &PreparedScene, f: Var, arch: &Architecture) -> Result<Var> {
    if let Some(inp) = &scene.sge {
        embed_on_tape(b, inp, arch)
    } else if arch.switches.cov && scene.features.nrows() > 0 {
        let s = b.tape.sum_rows(f);
        let mean = b.tape.scale(s, 1.0 / scene.features.nrows() as f64);
        let w = b.param(names::COV)?;
        Ok(b.tape.linear(mean, w))
    } else {
        Ok(b.tape.zeros(1, arch.model.d_g))
    }
}

/// Full forward pass over all pairs of a scene (requires at least one pair).
pub(crate) fn build_scene(
    b: &mut Bound,
    scene: &PreparedScene,
    f_s: Mat,
    arch: &Architecture,
) -> Result<Built> {
    let humans: Vec<usize> = scene.pairs.iter().map(|p| p.human).collect();
    let objects: Vec<usize> = scene.pairs.iter().map(|p| p.object).collect();
    let f = b.tape.constant(scene.features.clone());
    let graph = graph_vector(b, scene, f, arch)?;
    let refined = match &scene.passing {
        Some(inp) => passing_on_tape(b, f, inp, arch, arch.rounds)?,
        None => f,
    };

    let f_s = b.tape.variable(f_s);
    let fh = b.tape.rows(f, &humans);
    let fo = b.tape.rows(f, &objects);
    let x = b.tape.concat_cols(&[fh, fo]);
    let gated = b.tape.mul(f_s, x);
    let p_v = head_on_tape(b, gated, names::VISUAL_WEIGHT, names::VISUAL_BIAS)?;

    let g = b.tape.rows(graph, &vec![0; humans.len()]);
    let rh = b.tape.rows(refined, &humans);
    let ro = b.tape.rows(refined, &objects);
    let xm = b.tape.concat_cols(&[g, rh, ro]);
    let p_m = head_on_tape(b, xm, names::MESSAGE_WEIGHT, names::MESSAGE_BIAS)?;

    let k = arch.num_interactions;
    let mut lam = Mat::zeros((humans.len(), k));
    for (r, p) in scene.pairs.iter().enumerate() {
        lam.row_mut(r).fill(p.lambda);
    }
    let lam = b.tape.constant(lam);
    let prod = b.tape.mul(p_v, p_m);
    let p = b.tape.mul(prod, lam);
    Ok(Built {
        p,
        p_v,
        p_m,
        f_s,
    })
}

/// Branch and fused scores of every candidate pair, `pairs x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneScores {
    pub p_v: Mat,
    pub p_m: Mat,
    pub p: Mat,
}

pub fn score_scene(
    store: &ParameterStore,
    projector: &MaskProjector,
    scene: &PreparedScene,
    arch: &Architecture,
) -> Result<SceneScores> {
    let k = arch.num_interactions;
    if scene.pairs.is_empty() {
        let z = Mat::zeros((0, k));
        return Ok(SceneScores {
            p_v: z.clone(),
            p_m: z.clone(),
            p: z,
        });
    }
    let f_s = mask_features(projector, scene)?;
    let mut b = Bound::new(store);
    let built = build_scene(&mut b, scene, f_s, arch)?;
    Ok(SceneScores {
        p_v: b.tape.value(built.p_v).clone(),
        p_m: b.tape.value(built.p_m).clone(),
        p: b.tape.value(built.p).clone(),
    })
}

/// Every `(pair, class)` with fused score at least `min_score`.
pub fn detections_from_scores(
    scene: &PreparedScene,
    scores: &SceneScores,
    min_score: f64,
) -> ImageDetections {
    let mut detections = Vec::new();
    for (r, p) in scene.pairs.iter().enumerate() {
        let h = &scene.graph.nodes[p.human];
        let o = &scene.graph.nodes[p.object];
        for (k, &s) in scores.p.row(r).iter().enumerate() {
            if s >= min_score {
                detections.push(HoiDetection {
                    human_box: h.bbox,
                    object_box: o.bbox,
                    object_category: o.category_id,
                    interaction_id: k,
                    score: s,
                });
            }
        }
    }
    ImageDetections {
        image_id: scene.image_id().to_string(),
        detections,
    }
}

/// Loss and gradients of one scene.
#[derive(Debug, Clone)]
pub struct SceneGrad {
    /// Sum over pairs of the per-pair mean BCE.
    pub loss_sum: f64,
    pub num_pairs: usize,
    pub params: std::collections::BTreeMap<String, Mat>,
    /// Pre-activation gradients of the mask projection per pair.
    pub mask: Vec<(MaskLayout, Vec<f64>)>,
}

pub fn scene_gradients(
    store: &ParameterStore,
    projector: &MaskProjector,
    scene: &PreparedScene,
    arch: &Architecture,
    eps: f64,
) -> Result<SceneGrad> {
    let labels = scene
        .labels
        .as_ref()
        .ok_or_else(|| Error::Contract(format!("scene '{}' has no training labels", scene.image_id())))?;
    if scene.pairs.is_empty() {
        return Ok(SceneGrad {
            loss_sum: 0.0,
            num_pairs: 0,
            params: Default::default(),
            mask: Vec::new(),
        });
    }
    let f_s = mask_features(projector, scene)?;
    let mut b = Bound::new(store);
    let built = build_scene(&mut b, scene, f_s, arch)?;
    let loss = b.tape.bce(built.p, labels.clone(), eps);
    let loss_sum = b.tape.value(loss)[[0, 0]];
    let mut grads = b.tape.backward(loss);
    let params = b.param_grads(&mut grads);
    let fs_val = b.tape.value(built.f_s);
    let dfs = grads.take(built.f_s).unwrap_or_else(|| Mat::zeros(fs_val.dim()));
    let mask = scene
        .pairs
        .iter()
        .enumerate()
        .map(|(r, p)| {
            let dz = dfs
                .row(r)
                .iter()
                .zip(fs_val.row(r))
                .map(|(g, s)| g * s * (1.0 - s))
                .collect();
            (p.layout, dz)
        })
        .collect();
    Ok(SceneGrad {
        loss_sum,
        num_pairs: scene.pairs.len(),
        params,
        mask,
    })
}
