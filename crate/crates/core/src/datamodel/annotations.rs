use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geometry::BoundingBox;
use super::io::{read_json, write_json_atomic};
use crate::error::{Error, Result};

/// Ground-truth interaction. Object-less actions leave the object fields empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthHoi {
    pub human_box: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_box: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_category: Option<usize>,
    #[serde(rename = "interaction")]
    pub interaction_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSet {
    pub image_id: String,
    pub hois: Vec<GroundTruthHoi>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rare_classes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoiDetection {
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    pub object_category: usize,
    #[serde(rename = "interaction")]
    pub interaction_id: usize,
    pub score: f64,
}

/// All detections for one image, as stored in `detections.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDetections {
    pub image_id: String,
    pub detections: Vec<HoiDetection>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    Many(Vec<T>),
    One(T),
}

impl<T> From<OneOrMany<T>> for Vec<T> {
    fn from(v: OneOrMany<T>) -> Self {
        match v {
            OneOrMany::Many(v) => v,
            OneOrMany::One(x) => vec![x],
        }
    }
}

impl AnnotationSet {
    pub fn check(&self, num_interactions: usize) -> Result<()> {
        for h in &self.hois {
            if h.interaction_id >= num_interactions {
                return Err(Error::Contract(format!(
                    "{}: interaction {} out of range (have {num_interactions})",
                    self.image_id, h.interaction_id
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }
}

/// Reads a file holding a single annotation object or an array of them.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationSet>> {
    let v: OneOrMany<AnnotationSet> = read_json(path)?;
    Ok(v.into())
}

/// Reads a detections file holding one image object or an array of them.
pub fn load_detections(path: &Path) -> Result<Vec<ImageDetections>> {
    let v: OneOrMany<ImageDetections> = read_json(path)?;
    let v: Vec<ImageDetections> = v.into();
    for img in &v {
        for d in &img.detections {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::Validation(format!(
                    "{}: detection score {} outside [0,1]",
                    img.image_id, d.score
                )));
            }
        }
    }
    Ok(v)
}

pub fn save_detections(path: &Path, dets: &[ImageDetections]) -> Result<()> {
    write_json_atomic(path, dets)
}
