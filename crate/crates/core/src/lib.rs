//! Multi-layer scene graphs for triangle-mesh industrial scenes, and
//! extraction of the functional graph between equipment units.

pub mod clustering;
pub mod config;
pub mod evaluation;
pub mod functional;
pub mod geometry;
pub mod grouping;
pub mod labeling;
pub mod math;
pub mod pipeline;
pub mod rendering;
pub mod scene_graph;
pub mod scene_io;
pub mod spatial_index;
pub mod synth;
