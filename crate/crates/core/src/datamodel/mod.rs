//! Domain types, JSON file formats and box geometry.

pub mod annotations;
pub mod features;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod vocab;

pub use annotations::{
    load_annotations, load_detections, save_detections, AnnotationSet, GroundTruthHoi,
    HoiDetection, ImageDetections,
};
pub use features::FeatureBundle;
pub use geometry::{iou, BoundingBox};
pub use graph::{
    load_scene_graph, validate_scene_graph, NodeId, SceneGraph, SgEdge, SgNode, Violation,
    ViolationSite, DEFAULT_RELATION_THRESHOLD,
};
pub use vocab::{semantic_lookup, Vocabulary, WORD_DIM};
