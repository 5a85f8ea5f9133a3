//! Reusable checks shared by the regular test targets and the acceptance
//! suite. Each works on generated instances identified by a seed.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;

use sg2hoi::config::{EncoderCell, EvalSetting, Switches};
use sg2hoi::datamodel::{iou, BoundingBox, HoiDetection, ImageDetections, SceneGraph};
use sg2hoi::evalkit::{average_precision, map_role, match_detections, EvalReport};
use sg2hoi::hoihead::combine;
use sg2hoi::params::ParameterStore;
use sg2hoi::relmp::run_passing;
use sg2hoi::sgembed::{embed_scene_graph, trace_scene_graph};

use super::*;

// ------------------------------------------------------------ oracles

/// Largest deviation between the library embedding (every intermediate)
/// and the loop reference over `instances` random graphs.
pub fn embedding_deviation(instances: u64) -> f64 {
    let vocab = small_vocab();
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut r = rng(seed);
        let cell = if seed % 2 == 0 { EncoderCell::Gru } else { EncoderCell::Rnn };
        let arch = small_arch(Switches::FULL, cell);
        let store = ParameterStore::init(&arch, seed);
        let n = r.random_range(1..=8);
        let m = r.random_range(0..=16);
        let sg = random_graph(&mut r, &vocab, n, m);
        let lib = trace_scene_graph(&sg, &vocab, &store, &arch).unwrap();
        let oracle = embed_oracle(&sg, &vocab, &store, &arch);
        if lib.order != oracle.order {
            return f64::INFINITY;
        }
        worst = worst.max(max_abs_diff(&to_rows(&lib.context), &oracle.context));
        if !sg.edges.is_empty() {
            worst = worst.max(max_abs_diff(&to_rows(&lib.relations), &oracle.relations));
            worst = worst.max(max_abs_diff(&to_rows(&lib.correlation), &oracle.correlation));
            worst = worst.max(max_abs_diff(&to_rows(&lib.fused), &oracle.fused));
        }
        worst = worst.max(max_abs_diff(&[lib.embedding], &[oracle.embedding]));
    }
    worst
}

/// Largest deviation of refined features from the loop reference, half
/// the instances relation-aware and half plain.
pub fn passing_deviation(instances: u64) -> f64 {
    let vocab = small_vocab();
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut r = rng(1000 + seed);
        let switches = Switches::preset(if seed % 2 == 0 { "rel" } else { "no-rel" }).unwrap();
        let arch = small_arch(switches, EncoderCell::Gru);
        let store = ParameterStore::init(&arch, seed);
        let n = r.random_range(1..=8);
        let m = r.random_range(0..=16);
        let sg = random_graph(&mut r, &vocab, n, m);
        let fb = random_features(&mut r, &sg, arch.model.d_f);
        let rounds = r.random_range(0..=3);
        let lib = run_passing(&sg, &fb, &vocab, &store, &arch, rounds).unwrap();
        let oracle = passing_oracle(&sg, &fb, &vocab, &store, &arch, rounds);
        let rows: Vec<Vec<f64>> = sg
            .nodes
            .iter()
            .map(|n| lib.vector(n.node_id).unwrap().to_vec())
            .collect();
        worst = worst.max(max_abs_diff(&rows, &oracle));
    }
    worst
}

#[derive(Debug, Default)]
pub struct EvalAgreement {
    /// Instances where library and reference disagree.
    pub mismatches: usize,
    pub true_positives: usize,
    pub false_positives: usize,
}

/// Per-image matching against the selection-order reference.
pub fn matching_agreement(instances: u64) -> EvalAgreement {
    let mut out = EvalAgreement::default();
    for seed in 0..instances {
        let mut r = rng(2000 + seed);
        let (dets, gts) = random_eval_instance(&mut r, 1, 2);
        let d = dets.first().map(|d| d.detections.clone()).unwrap_or_default();
        let g = gts.first().map(|g| g.hois.clone()).unwrap_or_default();
        let lib = match_detections(&d, &g, 0.5).unwrap();
        let (order, tp, matched) = match_oracle(&d, &g, 0.5);
        if lib.order != order || lib.true_positive != tp || lib.matched_gt != matched {
            out.mismatches += 1;
        }
        out.true_positives += tp.iter().filter(|&&t| t).count();
        out.false_positives += tp.iter().filter(|&&t| !t).count();
    }
    out
}

/// AP of random ranked lists against the per-TP reference and the exact
/// rational value. AP is compared exactly against the float reference
/// (same arithmetic) and to 1e-12 against the rational one.
pub fn ap_mismatches(instances: u64) -> usize {
    let mut bad = 0;
    for seed in 0..instances {
        let mut r = rng(3000 + seed);
        let len = r.random_range(0..=20);
        let flags: Vec<bool> = (0..len).map(|_| r.random_bool(0.5)).collect();
        let tp = flags.iter().filter(|&&f| f).count();
        let num_gt = tp + r.random_range(0..=4);
        let ok = match (average_precision(&flags, num_gt), ap_oracle(&flags, num_gt)) {
            (None, None) => true,
            (Some(a), Some(b)) => {
                let (n, d) = ap_rational(&flags, num_gt);
                a == b && (a - n as f64 / d as f64).abs() <= 1e-12
            }
            _ => false,
        };
        bad += usize::from(!ok);
    }
    bad
}

/// Whole-report agreement with the brute-force evaluator in both settings.
pub fn map_mismatches(instances: u64) -> usize {
    let mut bad = 0;
    for seed in 0..instances {
        let mut r = rng(4000 + seed);
        let images = r.random_range(1..=5);
        let (dets, gts) = random_eval_instance(&mut r, images, 3);
        for setting in [EvalSetting::Default, EvalSetting::Known] {
            let lib = map_role(&dets, &gts, 3, setting, &Default::default(), None, 0.5).unwrap();
            let oracle = map_oracle(&dets, &gts, 3, setting, 0.5);
            let classes_ok = lib.classes.iter().zip(&oracle).all(|(c, o)| {
                c.num_gt == o.num_gt && c.num_detections == o.num_dets && c.ap == o.ap
            });
            let aps: Vec<f64> = oracle.iter().filter_map(|o| o.ap).collect();
            let mean = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
            if !classes_ok || (lib.full - mean).abs() > 1e-12 {
                bad += 1;
            }
        }
    }
    bad
}

// ------------------------------------------------------------ invariants

fn permuted(sg: &SceneGraph, seed: u64) -> SceneGraph {
    let mut out = sg.clone();
    out.nodes.shuffle(&mut rng(seed));
    out
}

/// Passing on a graph without edges returns the input features exactly.
pub fn edgeless_identity(seed: u64) -> bool {
    let vocab = small_vocab();
    let mut r = rng(seed);
    let switches = Switches::preset(if r.random_bool(0.5) { "rel" } else { "no-rel" }).unwrap();
    let arch = small_arch(switches, EncoderCell::Gru);
    let store = ParameterStore::init(&arch, seed);
    let n = r.random_range(1..=8);
    let rounds = r.random_range(0..=4);
    let sg = random_graph(&mut r, &vocab, n, 0);
    let fb = random_features(&mut r, &sg, arch.model.d_f);
    let out = run_passing(&sg, &fb, &vocab, &store, &arch, rounds).unwrap();
    sg.nodes
        .iter()
        .all(|n| out.vector(n.node_id).unwrap() == fb.vector(n.node_id).unwrap())
}

/// Shuffling the node list leaves the graph embedding bit-identical.
pub fn embedding_permutation(seed: u64) -> bool {
    let vocab = small_vocab();
    let mut r = rng(seed);
    let cell = if r.random_bool(0.5) { EncoderCell::Gru } else { EncoderCell::Rnn };
    let arch = small_arch(Switches::FULL, cell);
    let store = ParameterStore::init(&arch, seed);
    let n = r.random_range(1..=8);
    let m = r.random_range(0..=16);
    let sg = random_graph(&mut r, &vocab, n, m);
    let a = embed_scene_graph(&sg, &vocab, &store, &arch).unwrap();
    let b = embed_scene_graph(&permuted(&sg, seed ^ 1), &vocab, &store, &arch).unwrap();
    a == b
}

fn report(dets: &[ImageDetections], gts: &[sg2hoi::datamodel::AnnotationSet], setting: EvalSetting) -> EvalReport {
    map_role(dets, gts, 4, setting, &Default::default(), None, 0.5).unwrap()
}

/// Multiplying every score by `c > 0` leaves every AP unchanged.
pub fn score_scaling(seed: u64, c: f64) -> bool {
    let mut r = rng(seed);
    let (dets, gts) = random_eval_instance(&mut r, 3, 4);
    let setting = if r.random_bool(0.5) { EvalSetting::Known } else { EvalSetting::Default };
    let base = report(&dets, &gts, setting);
    let mut scaled = dets;
    for img in &mut scaled {
        for d in &mut img.detections {
            d.score *= c;
        }
    }
    let after = report(&scaled, &gts, setting);
    base.classes.iter().zip(&after.classes).all(|(a, b)| a.ap == b.ap) && base.full == after.full
}

/// Appending a detection below every score that matches nothing never
/// raises any AP.
pub fn trailing_false_positive(seed: u64) -> bool {
    let mut r = rng(seed);
    let (mut dets, gts) = random_eval_instance(&mut r, 3, 4);
    if dets.is_empty() {
        return true;
    }
    let class = r.random_range(0..4);
    let base = report(&dets, &gts, EvalSetting::Default);
    let far = BoundingBox::new(1000.0, 1000.0, 1010.0, 1010.0).unwrap();
    dets[0].detections.push(HoiDetection {
        human_box: far,
        object_box: far,
        object_category: 1,
        interaction_id: class,
        score: -1.0,
    });
    let after = report(&dets, &gts, EvalSetting::Default);
    base.classes.iter().zip(&after.classes).all(|(a, b)| match (a.ap, b.ap) {
        (Some(x), Some(y)) => y <= x,
        _ => true,
    })
}

/// Adding a top-ranked detection that exactly covers an unclaimed ground
/// truth never lowers its class AP. `None` when the instance has no
/// suitable ground truth (one no detection claimed and that no other
/// same-class ground truth overlaps, so the copy can only match it).
pub fn leading_true_positive(seed: u64) -> Option<bool> {
    let mut r = rng(seed);
    let (mut dets, gts) = random_eval_instance(&mut r, 3, 4);
    let base = report(&dets, &gts, EvalSetting::Default);
    let mut pick = None;
    'search: for a in &gts {
        let img_dets: Vec<HoiDetection> = dets
            .iter()
            .filter(|d| d.image_id == a.image_id)
            .flat_map(|d| d.detections.clone())
            .collect();
        for (j, g) in a.hois.iter().enumerate() {
            let class_dets: Vec<HoiDetection> = img_dets
                .iter()
                .filter(|d| d.interaction_id == g.interaction_id)
                .cloned()
                .collect();
            let class_gts: Vec<_> = a.hois.iter().filter(|h| h.interaction_id == g.interaction_id).cloned().collect();
            let res = match_detections(&class_dets, &class_gts, 0.5).unwrap();
            let pos = class_gts.iter().position(|h| h == g).unwrap();
            let lonely = a.hois.iter().enumerate().all(|(k, h)| {
                k == j || h.interaction_id != g.interaction_id || iou(&h.human_box, &g.human_box).unwrap() <= 0.5
            });
            if !res.covered[pos] && lonely {
                pick = Some((a.image_id.clone(), g.clone()));
                break 'search;
            }
        }
    }
    let (image_id, g) = pick?;
    let det = HoiDetection {
        human_box: g.human_box,
        object_box: g.object_box.unwrap_or(g.human_box),
        object_category: g.object_category.unwrap_or(1),
        interaction_id: g.interaction_id,
        score: 2.0,
    };
    match dets.iter_mut().find(|d| d.image_id == image_id) {
        Some(d) => d.detections.push(det),
        None => dets.push(ImageDetections { image_id, detections: vec![det] }),
    }
    let after = report(&dets, &gts, EvalSetting::Default);
    let k = g.interaction_id;
    Some(after.classes[k].ap? >= base.classes[k].ap? && after.classes[k].num_gt == base.classes[k].num_gt)
}

/// Fused scores stay in [0, 1] and never decrease as λ grows.
pub fn fused_range_and_monotone(seed: u64) -> bool {
    let mut r = rng(seed);
    let k = r.random_range(1..8);
    let pv: Vec<f64> = (0..k).map(|_| r.random_range(1e-9..1.0)).collect();
    let pm: Vec<f64> = (0..k).map(|_| r.random_range(1e-9..1.0)).collect();
    let mut lambdas: Vec<f64> = (0..4).map(|_| r.random_range(0.0..=1.0)).collect();
    lambdas.extend([0.0, 1.0]);
    lambdas.sort_by(f64::total_cmp);
    let mut prev: Option<Vec<f64>> = None;
    for l in lambdas {
        let p = combine(l, &pv, &pm).unwrap();
        if !p.iter().all(|x| (0.0..=1.0).contains(x)) {
            return false;
        }
        if let Some(q) = &prev {
            if p.iter().zip(q).any(|(a, b)| a < b) {
                return false;
            }
        }
        prev = Some(p);
    }
    true
}

/// Nodes within `hops` undirected edges of `start`.
pub fn neighbourhood(sg: &SceneGraph, start: u32, hops: usize) -> std::collections::BTreeSet<u32> {
    let mut seen = std::collections::BTreeSet::from([start]);
    let mut queue = VecDeque::from([(start, 0)]);
    while let Some((id, d)) = queue.pop_front() {
        if d == hops {
            continue;
        }
        for e in &sg.edges {
            for (a, b) in [(e.subject_id, e.object_id), (e.object_id, e.subject_id)] {
                if a == id && seen.insert(b) {
                    queue.push_back((b, d + 1));
                }
            }
        }
    }
    seen
}
