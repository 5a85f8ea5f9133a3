//! Scene-graph embedding: spatial/semantic node codewords, a bidirectional
//! recurrent context encoder over the left-to-right node sequence, relation
//! features, attention correlation between nodes and relations, and the
//! pooled graph embedding.
//!
//! Everything is computed in canonical node order (box center x, ties by
//! node id) so the result does not depend on how the node list is ordered.

use ndarray::Axis;

use crate::config::{Architecture, EncoderCell};
use crate::datamodel::{semantic_lookup, BoundingBox, SceneGraph, SgEdge, SgNode, Vocabulary};
use crate::error::{Error, Result};
use crate::params::{names, Bound, ParameterStore};
use crate::tape::{Mat, Var};

/// Normalized 8-vector `[x_tl, y_tl, x_br, y_br, x_c, y_c, w, h]`; x terms
/// are divided by the image width, y terms by the height.
pub fn spatial_vector(b: &BoundingBox, image_w: f64, image_h: f64) -> Result<[f64; 8]> {
    if !(b.area() > 0.0) {
        return Err(Error::Domain(format!("zero-area box {b:?}")));
    }
    if !(image_w > 0.0 && image_h > 0.0) {
        return Err(Error::Domain(format!("image size {image_w}x{image_h}")));
    }
    let (cx, cy) = b.center();
    Ok([
        b.x_tl / image_w,
        b.y_tl / image_h,
        b.x_br / image_w,
        b.y_br / image_h,
        cx / image_w,
        cy / image_h,
        b.width() / image_w,
        b.height() / image_h,
    ])
}

/// Projected spatial feature `W^s · spatial_vector`.
pub fn spatial_encode(
    b: &BoundingBox,
    image_w: f64,
    image_h: f64,
    store: &ParameterStore,
) -> Result<Vec<f64>> {
    let x = spatial_vector(b, image_w, image_h)?;
    let mut bound = Bound::new(store);
    let xv = bound.tape.row(&x);
    let w = bound.param(names::SPATIAL)?;
    let p = bound.tape.linear(xv, w);
    Ok(bound.tape.value(p).iter().copied().collect())
}

/// Per-scene constant inputs of the embedding, in canonical node order.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    /// Canonical position -> index into `SceneGraph::nodes`.
    pub order: Vec<usize>,
    pub spatial: Mat,
    pub words: Mat,
    pub edge_subject: Vec<usize>,
    pub edge_object: Vec<usize>,
    pub edge_words: Mat,
}

impl GraphInputs {
    pub fn prepare(sg: &SceneGraph, vocab: &Vocabulary) -> Result<GraphInputs> {
        let order = sg.canonical_order();
        let n = order.len();
        let mut spatial = Mat::zeros((n, 8));
        let mut words = Mat::zeros((n, vocab.word_dim));
        let mut position = std::collections::BTreeMap::new();
        for (pos, &i) in order.iter().enumerate() {
            let node = &sg.nodes[i];
            let sv = spatial_vector(&node.bbox, sg.image_width, sg.image_height)?;
            spatial.row_mut(pos).assign(&ndarray::ArrayView1::from(&sv[..]));
            let u = semantic_lookup(node.category_id, vocab)?;
            words.row_mut(pos).assign(&ndarray::ArrayView1::from(u));
            position.insert(node.node_id, pos);
        }
        let m = sg.edges.len();
        let mut edge_words = Mat::zeros((m, vocab.word_dim));
        let mut edge_subject = Vec::with_capacity(m);
        let mut edge_object = Vec::with_capacity(m);
        for (k, e) in sg.edges.iter().enumerate() {
            let lookup = |id| {
                position
                    .get(&id)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("edge endpoint {id} not in graph")))
            };
            edge_subject.push(lookup(e.subject_id)?);
            edge_object.push(lookup(e.object_id)?);
            let a = predicate_mixture(e, vocab)?;
            edge_words.row_mut(k).assign(&ndarray::ArrayView1::from(&a[..]));
        }
        Ok(GraphInputs {
            order,
            spatial,
            words,
            edge_subject,
            edge_object,
            edge_words,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.order.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_subject.len()
    }
}

/// Soft-weighted predicate embedding of an edge; one-hot degrades to lookup.
pub fn predicate_mixture(edge: &SgEdge, vocab: &Vocabulary) -> Result<Vec<f64>> {
    match &edge.soft_distribution {
        Some(soft) => vocab.mixed_predicate_vector(soft),
        None => vocab.predicate_vector(edge.predicate_id).map(<[f64]>::to_vec),
    }
}

/// Bidirectional recurrent encoder over the rows of `x` (sequence order =
/// row order). Returns `n x 2·hidden`, forward states then backward states.
pub(crate) fn encode_sequence(b: &mut Bound, x: Var, cell: EncoderCell) -> Result<Var> {
    let n = b.tape.shape(x).0;
    let mut halves = Vec::with_capacity(2);
    for (dir, reverse) in [("fwd", false), ("bwd", true)] {
        let w_ih = b.param(&names::encoder(dir, "w_ih"))?;
        let w_hh = b.param(&names::encoder(dir, "w_hh"))?;
        let b_ih = b.param(&names::encoder(dir, "b_ih"))?;
        let b_hh = b.param(&names::encoder(dir, "b_hh"))?;
        let hidden = b.tape.shape(w_hh).1;
        let t = &mut b.tape;
        let lin = t.linear(x, w_ih);
        let gi = t.add_row(lin, b_ih);
        let mut h = t.zeros(1, hidden);
        let mut states: Vec<Option<Var>> = vec![None; n];
        let steps: Vec<usize> = if reverse {
            (0..n).rev().collect()
        } else {
            (0..n).collect()
        };
        for step in steps {
            let gi_t = t.rows(gi, &[step]);
            let lin_h = t.linear(h, w_hh);
            let gh = t.add_row(lin_h, b_hh);
            h = match cell {
                EncoderCell::Gru => {
                    let (ir, iz, inn) = (
                        t.slice_cols(gi_t, 0, hidden),
                        t.slice_cols(gi_t, hidden, hidden),
                        t.slice_cols(gi_t, 2 * hidden, hidden),
                    );
                    let (hr, hz, hn) = (
                        t.slice_cols(gh, 0, hidden),
                        t.slice_cols(gh, hidden, hidden),
                        t.slice_cols(gh, 2 * hidden, hidden),
                    );
                    let r_pre = t.add(ir, hr);
                    let r = t.sigmoid(r_pre);
                    let z_pre = t.add(iz, hz);
                    let z = t.sigmoid(z_pre);
                    let rh = t.mul(r, hn);
                    let n_pre = t.add(inn, rh);
                    let cand = t.tanh(n_pre);
                    let keep = t.one_minus(z);
                    let a = t.mul(keep, cand);
                    let bz = t.mul(z, h);
                    t.add(a, bz)
                }
                EncoderCell::Rnn => {
                    let pre = t.add(gi_t, gh);
                    t.tanh(pre)
                }
            };
            states[step] = Some(h);
        }
        let states: Vec<Var> = states.into_iter().map(|s| s.expect("every step visited")).collect();
        halves.push(t.concat_rows(&states));
    }
    Ok(b.tape.concat_cols(&halves))
}

/// Context features `H` (canonical order, `n x d_h`) on the tape.
pub(crate) fn context_on_tape(b: &mut Bound, inp: &GraphInputs, cell: EncoderCell) -> Result<Var> {
    let spatial = b.tape.constant(inp.spatial.clone());
    let ws = b.param(names::SPATIAL)?;
    let p = b.tape.linear(spatial, ws);
    let words = b.tape.constant(inp.words.clone());
    let v = b.tape.concat_cols(&[p, words]);
    let wc = b.param(names::CONTEXT)?;
    let vc = b.tape.linear(v, wc);
    encode_sequence(b, vc, cell)
}

/// Relation features `E` (`m x d_h`) from context features in canonical order.
pub(crate) fn relations_on_tape(b: &mut Bound, h: Var, inp: &GraphInputs) -> Result<Var> {
    let hs = b.tape.rows(h, &inp.edge_subject);
    let ho = b.tape.rows(h, &inp.edge_object);
    let a = b.tape.constant(inp.edge_words.clone());
    let cat = b.tape.concat_cols(&[hs, a, ho]);
    let wr = b.param(names::RELATION)?;
    Ok(b.tape.linear(cat, wr))
}

/// `C = (H ⊙ W^a) · Eᵀ`
pub(crate) fn correlation_on_tape(b: &mut Bound, h: Var, e: Var) -> Result<Var> {
    let wa = b.param(names::ATTENTION)?;
    let hw = b.tape.mul_row(h, wa);
    Ok(b.tape.linear(hw, e))
}

/// `G = (Cᵀ · H) ⊙ E`
pub(crate) fn fuse_on_tape(b: &mut Bound, c: Var, h: Var, e: Var) -> Var {
    let ct = b.tape.transpose(c);
    let ch = b.tape.matmul(ct, h);
    b.tape.mul(ch, e)
}

/// `g̃ = W^g · Σ_j G_j`
pub(crate) fn pool_on_tape(b: &mut Bound, g: Var) -> Result<Var> {
    let s = b.tape.sum_rows(g);
    let wg = b.param(names::POOL)?;
    Ok(b.tape.linear(s, wg))
}

/// Graph embedding `1 x d_g`; the zero vector when the graph has no edges.
pub(crate) fn embed_on_tape(b: &mut Bound, inp: &GraphInputs, arch: &Architecture) -> Result<Var> {
    if inp.num_edges() == 0 || inp.num_nodes() == 0 {
        return Ok(b.tape.zeros(1, arch.model.d_g));
    }
    let h = context_on_tape(b, inp, arch.model.encoder_cell)?;
    let e = relations_on_tape(b, h, inp)?;
    let c = correlation_on_tape(b, h, e)?;
    let g = fuse_on_tape(b, c, h, e);
    pool_on_tape(b, g)
}

fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    m.axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
}

fn mat_from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Mat> {
    let mut m = Mat::zeros((rows.len(), cols));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(Error::Contract(format!(
                "row {i} has {} entries, expected {cols}",
                r.len()
            )));
        }
        m.row_mut(i).assign(&ndarray::ArrayView1::from(&r[..]));
    }
    Ok(m)
}

/// Context features for the given codewords `v_i = [p_i; u_i]`, one per
/// node. The encoder consumes nodes in canonical left-to-right order; the
/// result is returned in the order of `nodes`.
pub fn context_encode(
    codewords: &[Vec<f64>],
    nodes: &[SgNode],
    store: &ParameterStore,
    cell: EncoderCell,
) -> Result<Vec<Vec<f64>>> {
    if codewords.len() != nodes.len() {
        return Err(Error::Contract("one codeword per node required".into()));
    }
    if nodes.is_empty() {
        return Ok(Vec::new());
    }
    let order = canonical_positions(nodes);
    let width = codewords[0].len();
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| codewords[i].clone()).collect();
    let mut b = Bound::new(store);
    let v = b.tape.constant(mat_from_rows(&sorted, width)?);
    let wc = b.param(names::CONTEXT)?;
    let vc = b.tape.linear(v, wc);
    let h = encode_sequence(&mut b, vc, cell)?;
    let sorted_out = rows_of(b.tape.value(h));
    let mut out = vec![Vec::new(); nodes.len()];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = sorted_out[pos].clone();
    }
    Ok(out)
}

fn canonical_positions(nodes: &[SgNode]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by(|&a, &b| {
        nodes[a]
            .bbox
            .center()
            .0
            .total_cmp(&nodes[b].bbox.center().0)
            .then(nodes[a].node_id.cmp(&nodes[b].node_id))
    });
    order
}

/// `e_k = W^r [h_i; α_ij; h_j]`
pub fn relation_feature(
    h_i: &[f64],
    h_j: &[f64],
    edge: &SgEdge,
    vocab: &Vocabulary,
    store: &ParameterStore,
) -> Result<Vec<f64>> {
    let alpha = predicate_mixture(edge, vocab)?;
    let cat: Vec<f64> = h_i.iter().chain(&alpha).chain(h_j).copied().collect();
    let mut b = Bound::new(store);
    let x = b.tape.row(&cat);
    let wr = b.param(names::RELATION)?;
    let e = b.tape.linear(x, wr);
    Ok(b.tape.value(e).iter().copied().collect())
}

/// Node-relation correlation `n x m`. Empty inputs give an empty matrix.
pub fn correlation(h: &Mat, e: &Mat, store: &ParameterStore) -> Result<Mat> {
    if h.nrows() == 0 || e.nrows() == 0 {
        return Ok(Mat::zeros((h.nrows(), e.nrows())));
    }
    if h.ncols() != e.ncols() {
        return Err(Error::Contract(format!(
            "node features have {} columns, relation features {}",
            h.ncols(),
            e.ncols()
        )));
    }
    let mut b = Bound::new(store);
    let hv = b.tape.constant(h.clone());
    let ev = b.tape.constant(e.clone());
    let c = correlation_on_tape(&mut b, hv, ev)?;
    Ok(b.tape.value(c).clone())
}

/// Layout-relation fusion `(Cᵀ H) ⊙ E`, `m x d_h`.
pub fn fuse(c: &Mat, h: &Mat, e: &Mat) -> Result<Mat> {
    if c.dim() != (h.nrows(), e.nrows()) || h.ncols() != e.ncols() {
        return Err(Error::Contract(format!(
            "fuse shapes: C {:?}, H {:?}, E {:?}",
            c.dim(),
            h.dim(),
            e.dim()
        )));
    }
    Ok(c.t().dot(h) * e)
}

/// Pooled embedding `W^g Σ_j G_j`; zero vector for `m = 0`.
pub fn pool_embed(g: &Mat, store: &ParameterStore) -> Result<Vec<f64>> {
    let wg = store.get(names::POOL)?;
    if g.nrows() == 0 {
        return Ok(vec![0.0; wg.nrows()]);
    }
    let mut b = Bound::new(store);
    let gv = b.tape.constant(g.clone());
    let out = pool_on_tape(&mut b, gv)?;
    Ok(b.tape.value(out).iter().copied().collect())
}

/// Full embedding of one scene graph.
pub fn embed_scene_graph(
    sg: &SceneGraph,
    vocab: &Vocabulary,
    store: &ParameterStore,
    arch: &Architecture,
) -> Result<Vec<f64>> {
    let inp = GraphInputs::prepare(sg, vocab)?;
    let mut b = Bound::new(store);
    let g = embed_on_tape(&mut b, &inp, arch)?;
    Ok(b.tape.value(g).iter().copied().collect())
}

/// Intermediate tensors of the embedding, canonical node order.
#[derive(Debug, Clone)]
pub struct EmbeddingTrace {
    pub order: Vec<usize>,
    pub context: Mat,
    pub relations: Mat,
    pub correlation: Mat,
    pub fused: Mat,
    pub embedding: Vec<f64>,
}

pub fn trace_scene_graph(
    sg: &SceneGraph,
    vocab: &Vocabulary,
    store: &ParameterStore,
    arch: &Architecture,
) -> Result<EmbeddingTrace> {
    let inp = GraphInputs::prepare(sg, vocab)?;
    let mut b = Bound::new(store);
    if inp.num_nodes() == 0 {
        return Ok(EmbeddingTrace {
            order: vec![],
            context: Mat::zeros((0, arch.model.d_h)),
            relations: Mat::zeros((0, arch.model.d_h)),
            correlation: Mat::zeros((0, 0)),
            fused: Mat::zeros((0, arch.model.d_h)),
            embedding: vec![0.0; arch.model.d_g],
        });
    }
    let h = context_on_tape(&mut b, &inp, arch.model.encoder_cell)?;
    if inp.num_edges() == 0 {
        return Ok(EmbeddingTrace {
            order: inp.order.clone(),
            context: b.tape.value(h).clone(),
            relations: Mat::zeros((0, arch.model.d_h)),
            correlation: Mat::zeros((inp.num_nodes(), 0)),
            fused: Mat::zeros((0, arch.model.d_h)),
            embedding: vec![0.0; arch.model.d_g],
        });
    }
    let e = relations_on_tape(&mut b, h, &inp)?;
    let c = correlation_on_tape(&mut b, h, e)?;
    let g = fuse_on_tape(&mut b, c, h, e);
    let pooled = pool_on_tape(&mut b, g)?;
    Ok(EmbeddingTrace {
        order: inp.order.clone(),
        context: b.tape.value(h).clone(),
        relations: b.tape.value(e).clone(),
        correlation: b.tape.value(c).clone(),
        fused: b.tape.value(g).clone(),
        embedding: b.tape.value(pooled).iter().copied().collect(),
    })
}
