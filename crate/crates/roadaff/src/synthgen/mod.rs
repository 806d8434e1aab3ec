//! Synthetic world: road graphs, simulated drives, rendered frames, and
//! geometry-derived ground truth. Everything downstream of this module is
//! supposed to work without knowing it exists; the generator is only here so
//! the pipeline has something honest to run against.

pub mod drive;
pub mod render;
pub mod truth;
pub mod world;

pub use drive::{simulate_drive, DriveNoise, PathKind, SmoothedPath, TurnSpan, TURN_RADIUS};
pub use render::{render_frame, Image, JUNCTION_RADIUS};
pub use truth::{ground_truth_for_frames, ground_truth_frame};
pub use world::{generate_world, Edge, RoadGraph, WorldSpec};
