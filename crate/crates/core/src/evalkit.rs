//! Role mAP: greedy detection-to-ground-truth matching, all-point
//! interpolated average precision, Default / Known-Object pooling and
//! Full / Rare / Non-Rare summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::EvalSetting;
use crate::datamodel::{iou, AnnotationSet, GroundTruthHoi, HoiDetection, ImageDetections};
use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Outcome of matching one image's detections of one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Detection indices in processing order (descending score, ties by
    /// input position).
    pub order: Vec<usize>,
    /// Per detection (input order): true positive?
    pub true_positive: Vec<bool>,
    /// Per detection (input order): index of the matched ground truth.
    pub matched_gt: Vec<Option<usize>>,
    /// Per ground truth: claimed by some detection?
    pub covered: Vec<bool>,
}

impl MatchResult {
    /// TP flags in processing order.
    pub fn ranked_flags(&self) -> Vec<bool> {
        self.order.iter().map(|&i| self.true_positive[i]).collect()
    }
}

/// Indices sorted by descending score; equal scores keep input order.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy matching. A detection is a true positive when an unclaimed ground
/// truth of the same interaction has human IoU and (if it has an object)
/// object IoU strictly above the threshold; among those, the one with the
/// largest `min(iou_h, iou_o)` is claimed (first one on ties).
pub fn match_detections(
    dets: &[HoiDetection],
    gts: &[GroundTruthHoi],
    iou_threshold: f64,
) -> Result<MatchResult> {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let order = score_order(&scores);
    let mut covered = vec![false; gts.len()];
    let mut true_positive = vec![false; dets.len()];
    let mut matched_gt = vec![None; dets.len()];
    for &i in &order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if covered[j] || g.interaction_id != d.interaction_id {
                continue;
            }
            let ih = iou(&d.human_box, &g.human_box)?;
            if ih <= iou_threshold {
                continue;
            }
            let quality = match &g.object_box {
                Some(ob) => {
                    let io = iou(&d.object_box, ob)?;
                    if io <= iou_threshold {
                        continue;
                    }
                    ih.min(io)
                }
                None => ih,
            };
            if best.is_none_or(|(_, q)| quality > q) {
                best = Some((j, quality));
            }
        }
        if let Some((j, _)) = best {
            covered[j] = true;
            true_positive[i] = true;
            matched_gt[i] = Some(j);
        }
    }
    Ok(MatchResult {
        order,
        true_positive,
        matched_gt,
        covered,
    })
}

/// All-point interpolated AP of a ranked TP/FP list. `None` when the class
/// has neither ground truth nor detections.
pub fn average_precision(flags: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return if flags.is_empty() { None } else { Some(0.0) };
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..flags.len() {
        if recall[i] > prev_recall {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
    }
    Some(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class_id: usize,
    pub ap: Option<f64>,
    pub num_gt: usize,
    pub num_detections: usize,
    pub rare: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: EvalSetting,
    pub classes: Vec<ClassResult>,
    /// Mean AP over evaluated classes (0 when none is evaluated).
    pub full: f64,
    pub rare: Option<f64>,
    pub non_rare: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn per_class_ap(&self) -> Vec<Option<f64>> {
        self.classes.iter().map(|c| c.ap).collect()
    }

    /// Plain-text table: one summary row with Full / Rare / Non-Rare
    /// columns, followed by per-class rows.
    pub fn to_table(&self, class_names: Option<&[String]>) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let setting = match self.setting {
            EvalSetting::Default => "Default",
            EvalSetting::Known => "Known Object",
        };
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:>8} {:>8} {:>9}", "Setting", "Full", "Rare", "Non-Rare");
        let _ = writeln!(
            s,
            "{:<14} {:>8} {:>8} {:>9}",
            setting,
            fmt(Some(self.full)),
            fmt(self.rare),
            fmt(self.non_rare)
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<24} {:>8} {:>6} {:>6} {:>5}", "Class", "AP", "GT", "Dets", "Rare");
        for c in &self.classes {
            let name = class_names
                .and_then(|n| n.get(c.class_id).cloned())
                .unwrap_or_else(|| c.class_id.to_string());
            let _ = writeln!(
                s,
                "{:<24} {:>8} {:>6} {:>6} {:>5}",
                name,
                fmt(c.ap),
                c.num_gt,
                c.num_detections,
                if c.rare { "yes" } else { "" }
            );
        }
        s
    }
}

/// Object categories of each interaction class as seen in ground truth.
pub fn class_objects_from_gt(gts: &[AnnotationSet]) -> BTreeMap<usize, BTreeSet<usize>> {
    let mut map: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for a in gts {
        for h in &a.hois {
            if let Some(c) = h.object_category {
                map.entry(h.interaction_id).or_default().insert(c);
            }
        }
    }
    map
}

/// Role mAP over all images. Images are keyed by id; detections and
/// annotations sharing an id are merged in input order.
///
/// In the Known-Object setting, a class is evaluated only on images whose
/// ground truth contains one of the class's object categories (taken from
/// `class_objects` when given, otherwise derived from the ground truth).
pub fn map_role(
    dets_by_image: &[ImageDetections],
    gts_by_image: &[AnnotationSet],
    num_classes: usize,
    setting: EvalSetting,
    rare_ids: &BTreeSet<usize>,
    class_objects: Option<&BTreeMap<usize, BTreeSet<usize>>>,
    iou_threshold: f64,
) -> Result<EvalReport> {
    let mut dets: BTreeMap<&str, Vec<HoiDetection>> = BTreeMap::new();
    for img in dets_by_image {
        for d in &img.detections {
            if d.interaction_id >= num_classes {
                return Err(Error::Contract(format!(
                    "detection in '{}' has interaction {} but there are {num_classes} classes",
                    img.image_id, d.interaction_id
                )));
            }
        }
        dets.entry(&img.image_id)
            .or_default()
            .extend(img.detections.iter().cloned());
    }
    let mut gts: BTreeMap<&str, Vec<GroundTruthHoi>> = BTreeMap::new();
    for a in gts_by_image {
        a.check(num_classes)?;
        gts.entry(&a.image_id).or_default().extend(a.hois.iter().cloned());
    }
    if let Some(&r) = rare_ids.iter().find(|&&r| r >= num_classes) {
        return Err(Error::Contract(format!("rare class {r} outside {num_classes} classes")));
    }
    let derived;
    let class_objects = match class_objects {
        Some(m) => m,
        None => {
            derived = class_objects_from_gt(gts_by_image);
            &derived
        }
    };
    let images: BTreeSet<&str> = dets.keys().chain(gts.keys()).copied().collect();
    let empty_d: Vec<HoiDetection> = Vec::new();
    let empty_g: Vec<GroundTruthHoi> = Vec::new();

    let mut classes = Vec::with_capacity(num_classes);
    for k in 0..num_classes {
        let objects = class_objects.get(&k);
        // (score, image rank, detection index, tp)
        let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
        let mut num_gt = 0;
        for (rank, &img) in images.iter().enumerate() {
            let img_gts = gts.get(img).unwrap_or(&empty_g);
            if setting == EvalSetting::Known {
                let present = objects.is_some_and(|objs| {
                    img_gts
                        .iter()
                        .any(|g| g.object_category.is_some_and(|c| objs.contains(&c)))
                });
                if !present {
                    continue;
                }
            }
            let (idx, class_dets): (Vec<usize>, Vec<HoiDetection>) = dets
                .get(img)
                .unwrap_or(&empty_d)
                .iter()
                .enumerate()
                .filter(|(_, d)| d.interaction_id == k)
                .map(|(i, d)| (i, d.clone()))
                .unzip();
            let class_gts: Vec<GroundTruthHoi> =
                img_gts.iter().filter(|g| g.interaction_id == k).cloned().collect();
            num_gt += class_gts.len();
            let m = match_detections(&class_dets, &class_gts, iou_threshold)?;
            for (j, d) in class_dets.iter().enumerate() {
                ranked.push((d.score, rank, idx[j], m.true_positive[j]));
            }
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let flags: Vec<bool> = ranked.iter().map(|r| r.3).collect();
        classes.push(ClassResult {
            class_id: k,
            ap: average_precision(&flags, num_gt),
            num_gt,
            num_detections: flags.len(),
            rare: rare_ids.contains(&k),
        });
    }
    let full = mean(classes.iter().filter_map(|c| c.ap)).unwrap_or(0.0);
    let rare = mean(classes.iter().filter(|c| c.rare).filter_map(|c| c.ap));
    let non_rare = mean(classes.iter().filter(|c| !c.rare).filter_map(|c| c.ap));
    Ok(EvalReport {
        setting,
        classes,
        full,
        rare,
        non_rare,
    })
}
