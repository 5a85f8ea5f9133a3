//! Shared fixtures and independent loop-based reference implementations.
//!
//! The references deliberately avoid the library's tape and matrix code:
//! every product is an explicit index loop over plain `Vec`s.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sg2hoi::config::{Architecture, EncoderCell, EvalSetting, ModelConfig, Switches};
use sg2hoi::datamodel::{
    iou, semantic_lookup, AnnotationSet, BoundingBox, FeatureBundle, GroundTruthHoi,
    HoiDetection, ImageDetections, SceneGraph, SgEdge, SgNode, Vocabulary,
};
use sg2hoi::params::{names, ParameterStore, PASSING_PATHS};
use sg2hoi::tape::Mat;

pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng8 {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const WORD_DIM: usize = 5;

pub fn small_vocab() -> Vocabulary {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
    Vocabulary::new(
        s(&["person", "cup", "bag", "horse", "book"]),
        s(&["hold", "ride", "near", "look_at"]),
        s(&["hold", "ride", "look"]),
        0,
        None,
        WORD_DIM,
    )
    .unwrap()
}

pub fn small_arch(switches: Switches, cell: EncoderCell) -> Architecture {
    let model = ModelConfig {
        d_s: 3,
        d_h: 4,
        d_g: 3,
        d_f: 3,
        mask_size: 4,
        encoder_cell: cell,
        ..ModelConfig::default()
    };
    Architecture::new(model, switches, 2, 3, WORD_DIM).unwrap()
}

pub fn random_box(r: &mut Rng8, w: f64, h: f64) -> BoundingBox {
    let bw = r.random_range(5.0..w / 2.0);
    let bh = r.random_range(5.0..h / 2.0);
    let x = r.random_range(0.0..w - bw);
    let y = r.random_range(0.0..h - bh);
    BoundingBox::new(x, y, x + bw, y + bh).unwrap()
}

fn random_soft(r: &mut Rng8, n: usize, predicate: usize) -> (f64, Option<Vec<f64>>) {
    if r.random_bool(0.3) {
        return (1.0, None);
    }
    let mut v: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
    v[predicate] += 2.0;
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    (v[predicate], Some(v))
}

/// Random graph with `n` nodes (at least one human) and up to `m` edges.
pub fn random_graph(r: &mut Rng8, vocab: &Vocabulary, n: usize, m: usize) -> SceneGraph {
    let (w, h) = (200.0, 150.0);
    let mut ids: Vec<u32> = (0..n as u32).map(|i| i * 3 + 1).collect();
    // Shuffle ids so file order and id order disagree.
    for i in (1..ids.len()).rev() {
        let j = r.random_range(0..=i);
        ids.swap(i, j);
    }
    let nodes: Vec<SgNode> = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| SgNode {
            node_id: id,
            category_id: if i == 0 || r.random_bool(0.35) {
                vocab.person_index
            } else {
                r.random_range(1..vocab.num_objects())
            },
            bbox: random_box(r, w, h),
            score: r.random_range(0.0..1.0),
        })
        .collect();
    let mut edges = Vec::new();
    if n >= 2 {
        for _ in 0..m {
            let s = r.random_range(0..n);
            let mut o = r.random_range(0..n);
            if o == s {
                o = (o + 1) % n;
            }
            let predicate = r.random_range(0..vocab.num_predicates());
            let (confidence, soft_distribution) = random_soft(r, vocab.num_predicates(), predicate);
            edges.push(SgEdge {
                subject_id: nodes[s].node_id,
                object_id: nodes[o].node_id,
                predicate_id: predicate,
                confidence,
                soft_distribution,
            });
        }
    }
    SceneGraph {
        image_id: format!("g{}", r.random_range(0..1_000_000u32)),
        image_width: w,
        image_height: h,
        nodes,
        edges,
    }
}

pub fn random_features(r: &mut Rng8, sg: &SceneGraph, dim: usize) -> FeatureBundle {
    let mut fb = FeatureBundle::new(dim);
    for n in &sg.nodes {
        let v = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        fb.insert(n.node_id, v, n.score);
    }
    fb
}

// ---------------------------------------------------------------- algebra

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[[i, j]]).collect())
        .collect()
}

/// `W x` with `W` given as rows.
pub fn matvec(w: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|row| {
            assert_eq!(row.len(), x.len());
            let mut s = 0.0;
            for j in 0..x.len() {
                s += row[j] * x[j];
            }
            s
        })
        .collect()
}

fn param(store: &ParameterStore, name: &str) -> Vec<Vec<f64>> {
    to_rows(store.get(name).unwrap())
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------- sgembed

pub struct EmbedOracle {
    pub order: Vec<usize>,
    pub context: Vec<Vec<f64>>,
    pub relations: Vec<Vec<f64>>,
    pub correlation: Vec<Vec<f64>>,
    pub fused: Vec<Vec<f64>>,
    pub embedding: Vec<f64>,
}

fn spatial8(b: &BoundingBox, w: f64, h: f64) -> Vec<f64> {
    let xc = (b.x_tl + b.x_br) / 2.0;
    let yc = (b.y_tl + b.y_br) / 2.0;
    vec![
        b.x_tl / w,
        b.y_tl / h,
        b.x_br / w,
        b.y_br / h,
        xc / w,
        yc / h,
        (b.x_br - b.x_tl) / w,
        (b.y_br - b.y_tl) / h,
    ]
}

fn alpha_of(e: &SgEdge, vocab: &Vocabulary) -> Vec<f64> {
    match &e.soft_distribution {
        None => vocab.predicate_vector(e.predicate_id).unwrap().to_vec(),
        Some(soft) => {
            let mut a = vec![0.0; vocab.word_dim];
            for (p, &wgt) in soft.iter().enumerate() {
                let v = vocab.predicate_vector(p).unwrap();
                for d in 0..a.len() {
                    a[d] += wgt * v[d];
                }
            }
            a
        }
    }
}

/// One direction of the recurrent encoder over `xs`.
fn run_direction(
    xs: &[Vec<f64>],
    store: &ParameterStore,
    dir: &str,
    cell: EncoderCell,
) -> Vec<Vec<f64>> {
    let w_ih = param(store, &names::encoder(dir, "w_ih"));
    let w_hh = param(store, &names::encoder(dir, "w_hh"));
    let b_ih = param(store, &names::encoder(dir, "b_ih")).remove(0);
    let b_hh = param(store, &names::encoder(dir, "b_hh")).remove(0);
    let hidden = w_hh[0].len();
    let mut h = vec![0.0; hidden];
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let gi: Vec<f64> = matvec(&w_ih, x).iter().zip(&b_ih).map(|(a, b)| a + b).collect();
        let gh: Vec<f64> = matvec(&w_hh, &h).iter().zip(&b_hh).map(|(a, b)| a + b).collect();
        let mut next = vec![0.0; hidden];
        for u in 0..hidden {
            next[u] = match cell {
                EncoderCell::Gru => {
                    let r = sig(gi[u] + gh[u]);
                    let z = sig(gi[hidden + u] + gh[hidden + u]);
                    let n = (gi[2 * hidden + u] + r * gh[2 * hidden + u]).tanh();
                    (1.0 - z) * n + z * h[u]
                }
                EncoderCell::Rnn => (gi[u] + gh[u]).tanh(),
            };
        }
        h = next;
        out.push(h.clone());
    }
    out
}

pub fn embed_oracle(sg: &SceneGraph, vocab: &Vocabulary, store: &ParameterStore, arch: &Architecture) -> EmbedOracle {
    let n = sg.nodes.len();
    let d_h = arch.model.d_h;
    // Canonical order by repeated minimum selection.
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    while !remaining.is_empty() {
        let mut best = 0;
        for k in 1..remaining.len() {
            let (a, b) = (&sg.nodes[remaining[k]], &sg.nodes[remaining[best]]);
            let (ca, cb) = ((a.bbox.x_tl + a.bbox.x_br) / 2.0, (b.bbox.x_tl + b.bbox.x_br) / 2.0);
            if ca < cb || (ca == cb && a.node_id < b.node_id) {
                best = k;
            }
        }
        order.push(remaining.remove(best));
    }
    if n == 0 {
        return EmbedOracle {
            order,
            context: vec![],
            relations: vec![],
            correlation: vec![],
            fused: vec![],
            embedding: vec![0.0; arch.model.d_g],
        };
    }
    let ws = param(store, names::SPATIAL);
    let wc = param(store, names::CONTEXT);
    let xs: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let node = &sg.nodes[i];
            let mut v = matvec(&ws, &spatial8(&node.bbox, sg.image_width, sg.image_height));
            v.extend_from_slice(semantic_lookup(node.category_id, vocab).unwrap());
            matvec(&wc, &v)
        })
        .collect();
    let fwd = run_direction(&xs, store, "fwd", arch.model.encoder_cell);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut bwd = run_direction(&rev, store, "bwd", arch.model.encoder_cell);
    bwd.reverse();
    let context: Vec<Vec<f64>> = (0..n)
        .map(|p| fwd[p].iter().chain(&bwd[p]).copied().collect())
        .collect();

    let pos_of = |id: u32| order.iter().position(|&i| sg.nodes[i].node_id == id).unwrap();
    let wr = param(store, names::RELATION);
    let relations: Vec<Vec<f64>> = sg
        .edges
        .iter()
        .map(|e| {
            let mut cat = context[pos_of(e.subject_id)].clone();
            cat.extend(alpha_of(e, vocab));
            cat.extend_from_slice(&context[pos_of(e.object_id)]);
            matvec(&wr, &cat)
        })
        .collect();
    let m = relations.len();
    let wa = param(store, names::ATTENTION).remove(0);
    let mut correlation = vec![vec![0.0; m]; n];
    for i in 0..n {
        for k in 0..m {
            let mut s = 0.0;
            for d in 0..d_h {
                s += context[i][d] * wa[d] * relations[k][d];
            }
            correlation[i][k] = s;
        }
    }
    let mut fused = vec![vec![0.0; d_h]; m];
    for k in 0..m {
        for d in 0..d_h {
            let mut s = 0.0;
            for i in 0..n {
                s += correlation[i][k] * context[i][d];
            }
            fused[k][d] = s * relations[k][d];
        }
    }
    let embedding = if m == 0 {
        vec![0.0; arch.model.d_g]
    } else {
        let mut pooled = vec![0.0; d_h];
        for row in &fused {
            for d in 0..d_h {
                pooled[d] += row[d];
            }
        }
        matvec(&param(store, names::POOL), &pooled)
    };
    EmbedOracle {
        order,
        context,
        relations,
        correlation,
        fused,
        embedding,
    }
}

// ---------------------------------------------------------------- relmp

fn path_of(sender_human: bool, receiver_human: bool) -> &'static str {
    match (sender_human, receiver_human) {
        (false, true) => "o2h",
        (true, true) => "h2h",
        (true, false) => "h2o",
        (false, false) => "o2o",
    }
}

/// Messages node `i` receives on `path` from the current features `f`.
pub fn path_message_oracle(
    sg: &SceneGraph,
    f: &[Vec<f64>],
    vocab: &Vocabulary,
    store: &ParameterStore,
    arch: &Architecture,
    path: &str,
    i: usize,
) -> Vec<f64> {
    let d = f[0].len();
    let human = |k: usize| sg.nodes[k].category_id == vocab.person_index;
    let idx = |id: u32| sg.nodes.iter().position(|n| n.node_id == id).unwrap();
    let w_src = param(store, &names::passing(path, "src"));
    let w_out = param(store, &names::passing(path, "out"));
    let mut agg = vec![0.0; d];
    let mut any = false;
    for e in &sg.edges {
        let (s, o) = (idx(e.subject_id), idx(e.object_id));
        for (from, to) in [(s, o), (o, s)] {
            if to != i || path_of(human(from), human(to)) != path {
                continue;
            }
            any = true;
            let msg = matvec(&w_src, &f[from]);
            let gate = if arch.switches.relation_aware() {
                matvec(&param(store, &names::passing(path, "alpha")), &alpha_of(e, vocab))
            } else {
                vec![1.0; d]
            };
            for c in 0..d {
                agg[c] += msg[c] * gate[c];
            }
        }
    }
    if !any {
        return vec![0.0; d];
    }
    matvec(&w_out, &agg)
}

/// Refined features after `rounds` synchronous rounds, in node-list order.
pub fn passing_oracle(
    sg: &SceneGraph,
    features: &FeatureBundle,
    vocab: &Vocabulary,
    store: &ParameterStore,
    arch: &Architecture,
    rounds: usize,
) -> Vec<Vec<f64>> {
    let mut f: Vec<Vec<f64>> = sg
        .nodes
        .iter()
        .map(|n| features.vector(n.node_id).unwrap().to_vec())
        .collect();
    for _ in 0..rounds {
        let mut next = f.clone();
        for i in 0..f.len() {
            for path in PASSING_PATHS {
                let m = path_message_oracle(sg, &f, vocab, store, arch, path, i);
                for c in 0..m.len() {
                    next[i][c] += m[c];
                }
            }
        }
        f = next;
    }
    f
}

// ---------------------------------------------------------------- evalkit

/// Greedy matching by repeated selection of the best remaining detection.
/// Returns per-detection TP flags and matched GT indices (input order) and
/// the processing order.
pub fn match_oracle(
    dets: &[HoiDetection],
    gts: &[GroundTruthHoi],
    thr: f64,
) -> (Vec<usize>, Vec<bool>, Vec<Option<usize>>) {
    let mut done = vec![false; dets.len()];
    let mut claimed = vec![false; gts.len()];
    let mut order = Vec::new();
    let mut tp = vec![false; dets.len()];
    let mut matched = vec![None; dets.len()];
    for _ in 0..dets.len() {
        let mut pick: Option<usize> = None;
        for i in 0..dets.len() {
            if done[i] {
                continue;
            }
            if pick.is_none_or(|p| dets[i].score > dets[p].score) {
                pick = Some(i);
            }
        }
        let i = pick.unwrap();
        done[i] = true;
        order.push(i);
        let d = &dets[i];
        let mut best: Option<usize> = None;
        let mut best_q = f64::NEG_INFINITY;
        for j in 0..gts.len() {
            let g = &gts[j];
            if claimed[j] || g.interaction_id != d.interaction_id {
                continue;
            }
            let ih = iou(&d.human_box, &g.human_box).unwrap();
            let q = match &g.object_box {
                Some(ob) => {
                    let io = iou(&d.object_box, ob).unwrap();
                    if ih > thr && io > thr {
                        Some(if ih < io { ih } else { io })
                    } else {
                        None
                    }
                }
                None => (ih > thr).then_some(ih),
            };
            if let Some(q) = q {
                if best.is_none() || q > best_q {
                    best = Some(j);
                    best_q = q;
                }
            }
        }
        if let Some(j) = best {
            claimed[j] = true;
            tp[i] = true;
            matched[i] = Some(j);
        }
    }
    (order, tp, matched)
}

/// All-point AP: for every true positive in rank order, the recall gained
/// times the best precision at that rank or later.
pub fn ap_oracle(flags: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return if flags.is_empty() { None } else { Some(0.0) };
    }
    let prec = |k: usize| {
        let tp = flags[..=k].iter().filter(|&&f| f).count();
        tp as f64 / (k + 1) as f64
    };
    let mut ap = 0.0;
    let mut seen = 0usize;
    for k in 0..flags.len() {
        if !flags[k] {
            continue;
        }
        let before = seen as f64 / num_gt as f64;
        seen += 1;
        let after = seen as f64 / num_gt as f64;
        let mut best = 0.0f64;
        for j in k..flags.len() {
            best = best.max(prec(j));
        }
        ap += (after - before) * best;
    }
    Some(ap)
}

/// Exact rational AP (numerator, denominator) for cross-checking.
pub fn ap_rational(flags: &[bool], num_gt: usize) -> (u128, u128) {
    fn gcd(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let (mut num, mut den) = (0u128, 1u128);
    let mut tp_at = Vec::new();
    let mut tp = 0u128;
    for &f in flags {
        tp += f as u128;
        tp_at.push(tp);
    }
    for k in 0..flags.len() {
        if !flags[k] {
            continue;
        }
        // max_{j ≥ k} tp_j / (j+1)
        let (mut bn, mut bd) = (0u128, 1u128);
        for j in k..flags.len() {
            let (pn, pd) = (tp_at[j], (j + 1) as u128);
            if pn * bd > bn * pd {
                bn = pn;
                bd = pd;
            }
        }
        // += best / num_gt
        let (an, ad) = (bn, bd * num_gt as u128);
        num = num * ad + an * den;
        den *= ad;
        let g = gcd(num, den);
        num /= g;
        den /= g;
    }
    (num, den)
}

pub struct ClassOracle {
    pub ap: Option<f64>,
    pub num_gt: usize,
    pub num_dets: usize,
}

/// Reference evaluator: per class, pool images, match per image, rank all
/// detections globally by (score desc, image id asc, index asc).
pub fn map_oracle(
    dets: &[ImageDetections],
    gts: &[AnnotationSet],
    num_classes: usize,
    setting: EvalSetting,
    thr: f64,
) -> Vec<ClassOracle> {
    let mut ids: Vec<String> = dets
        .iter()
        .map(|d| d.image_id.clone())
        .chain(gts.iter().map(|g| g.image_id.clone()))
        .collect();
    ids.sort();
    ids.dedup();
    let mut class_objects: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for a in gts {
        for h in &a.hois {
            if let Some(c) = h.object_category {
                class_objects.entry(h.interaction_id).or_default().insert(c);
            }
        }
    }
    let mut out = Vec::new();
    for k in 0..num_classes {
        // (score, image rank, det index, tp)
        let mut pool: Vec<(f64, usize, usize, bool)> = Vec::new();
        let mut num_gt = 0;
        for (rank, id) in ids.iter().enumerate() {
            let img_dets: Vec<HoiDetection> = dets
                .iter()
                .filter(|d| &d.image_id == id)
                .flat_map(|d| d.detections.clone())
                .collect();
            let img_gts: Vec<GroundTruthHoi> = gts
                .iter()
                .filter(|g| &g.image_id == id)
                .flat_map(|g| g.hois.clone())
                .collect();
            if setting == EvalSetting::Known {
                let objs = class_objects.get(&k);
                let present = img_gts.iter().any(|g| match (g.object_category, objs) {
                    (Some(c), Some(o)) => o.contains(&c),
                    _ => false,
                });
                if !present {
                    continue;
                }
            }
            let idx: Vec<usize> = (0..img_dets.len())
                .filter(|&i| img_dets[i].interaction_id == k)
                .collect();
            let cd: Vec<HoiDetection> = idx.iter().map(|&i| img_dets[i].clone()).collect();
            let cg: Vec<GroundTruthHoi> =
                img_gts.iter().filter(|g| g.interaction_id == k).cloned().collect();
            num_gt += cg.len();
            let (_, tp, _) = match_oracle(&cd, &cg, thr);
            for (j, d) in cd.iter().enumerate() {
                pool.push((d.score, rank, idx[j], tp[j]));
            }
        }
        // Selection sort on the composite key.
        let mut flags = Vec::new();
        let mut used = vec![false; pool.len()];
        for _ in 0..pool.len() {
            let mut best: Option<usize> = None;
            for i in 0..pool.len() {
                if used[i] {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        let (x, y) = (&pool[i], &pool[b]);
                        x.0 > y.0 || (x.0 == y.0 && (x.1, x.2) < (y.1, y.2))
                    }
                };
                if better {
                    best = Some(i);
                }
            }
            let b = best.unwrap();
            used[b] = true;
            flags.push(pool[b].3);
        }
        out.push(ClassOracle {
            ap: ap_oracle(&flags, num_gt),
            num_gt,
            num_dets: flags.len(),
        });
    }
    out
}

/// Random evaluation instance: boxes on a coarse grid so that exact IoU
/// ties and near-threshold overlaps both occur; scores on a grid so that
/// score ties occur.
pub fn random_eval_instance(
    r: &mut Rng8,
    num_images: usize,
    num_classes: usize,
) -> (Vec<ImageDetections>, Vec<AnnotationSet>) {
    let grid_box = |r: &mut Rng8| {
        let x = r.random_range(0..6) as f64 * 10.0;
        let y = r.random_range(0..6) as f64 * 10.0;
        let w = r.random_range(1..5) as f64 * 10.0;
        let h = r.random_range(1..5) as f64 * 10.0;
        BoundingBox::new(x, y, x + w, y + h).unwrap()
    };
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for img in 0..num_images {
        let image_id = format!("img{img:02}");
        let ng = r.random_range(0..=8);
        let hois: Vec<GroundTruthHoi> = (0..ng)
            .map(|_| {
                let objectless = r.random_bool(0.15);
                GroundTruthHoi {
                    human_box: grid_box(r),
                    object_box: (!objectless).then(|| grid_box(r)),
                    object_category: (!objectless).then(|| r.random_range(1..4)),
                    interaction_id: r.random_range(0..num_classes),
                }
            })
            .collect();
        let nd = r.random_range(0..=16);
        let mut dl = Vec::new();
        for _ in 0..nd {
            // Half of the detections jitter a ground truth.
            let d = if !hois.is_empty() && r.random_bool(0.5) {
                let g = &hois[r.random_range(0..hois.len())];
                let jit = |r: &mut Rng8, b: &BoundingBox| {
                    b.translated(r.random_range(-1..=1) as f64 * 5.0, r.random_range(-1..=1) as f64 * 5.0)
                };
                let hb = jit(r, &g.human_box);
                let ob = match &g.object_box {
                    Some(b) => jit(r, b),
                    None => grid_box(r),
                };
                HoiDetection {
                    human_box: clamp_box(hb),
                    object_box: clamp_box(ob),
                    object_category: g.object_category.unwrap_or(1),
                    interaction_id: if r.random_bool(0.8) { g.interaction_id } else { r.random_range(0..num_classes) },
                    score: r.random_range(0..=16) as f64 / 16.0,
                }
            } else {
                HoiDetection {
                    human_box: grid_box(r),
                    object_box: grid_box(r),
                    object_category: r.random_range(1..4),
                    interaction_id: r.random_range(0..num_classes),
                    score: r.random_range(0..=16) as f64 / 16.0,
                }
            };
            dl.push(d);
        }
        if r.random_bool(0.9) {
            gts.push(AnnotationSet { image_id: image_id.clone(), hois, rare_classes: None });
        }
        if r.random_bool(0.9) {
            dets.push(ImageDetections { image_id, detections: dl });
        }
    }
    (dets, gts)
}

fn clamp_box(b: BoundingBox) -> BoundingBox {
    let x0 = b.x_tl.max(0.0);
    let y0 = b.y_tl.max(0.0);
    BoundingBox::new(x0, y0, b.x_br.max(x0 + 1.0), b.y_br.max(y0 + 1.0)).unwrap()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.len(), y.len(), "column count");
        for (p, q) in x.iter().zip(y) {
            worst = worst.max((p - q).abs());
        }
    }
    worst
}

pub mod checks;
