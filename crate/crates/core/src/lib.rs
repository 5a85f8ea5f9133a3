//! Human–object interaction detection driven by scene graphs.
//!
//! Scene graphs and per-node appearance features go in; scored
//! `(human, interaction, object)` triples come out.

pub mod config;
pub mod datamodel;
pub mod error;
pub mod evalkit;
pub mod hoihead;
pub mod pairfeat;
pub mod params;
pub mod pipeline;
pub mod relmp;
pub mod sgembed;
pub mod synthworld;
pub mod tape;

pub use error::{Error, Result};
