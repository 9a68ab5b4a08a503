//! camforge builds post-hoc visual explanations for object detectors.
//!
//! The main entry point is [`pipeline::explain`], which produces a Crown-CAM
//! for one image given any [`detector::Detector`]. [`baselines`] offers
//! Score-CAM and Eigen-CAM for comparison, and [`metrics`] scores any CAM
//! against ground-truth boxes with foreground/background IoU.
//!
//! Two backends ship with the crate: a deterministic synthetic forest
//! ([`detector::SyntheticDetector`]) and a client for an out-of-process
//! bridge that speaks a directory-based protocol
//! ([`detector::ExternalDetector`]). Tensors cross that boundary as CCT1
//! files ([`cct`]).

pub mod baselines;
pub mod cct;
pub mod detector;
mod error;
pub mod imageio;
pub mod metrics;
pub mod pipeline;
pub mod tensor;

pub use error::{CamError, Result};
