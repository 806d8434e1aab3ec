//! Road affordance inference from vehicle trajectories.
//!
//! The pipeline has two halves. The inference half turns raw multi-run
//! trajectories into per-frame partial labels: angular-speed statistics
//! ([`trajectory`]), nonparametric action segmentation ([`hdphmm`]), and
//! geometric projection of future poses into the camera frame
//! ([`annotation`]). The learning half trains a small fully-convolutional
//! multi-task net ([`net`]) on cropped views ([`sampler`]) of synthetic
//! imagery ([`synthgen`]) and scores it ([`eval`]). [`pipeline`] chains the
//! stages behind the `roadaff` binary.

pub mod annotation;
pub mod artifacts;
pub mod config;
pub mod error;
pub mod eval;
pub mod geom;
pub mod hdphmm;
pub mod net;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod synthgen;
pub mod trajectory;

pub use error::{Error, Result};
