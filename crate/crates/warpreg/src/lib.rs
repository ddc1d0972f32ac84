//! Registration by optimization over deformations.
//!
//! This crate implements parametric image registration as a computational
//! primitive for invariant visual processing:
//!
//! - [`img`]: dense images, cubic-convolution interpolation and its analytic
//!   Jacobian, sampled gaussian filters, support masks, NCC/ZNCC metrics.
//! - [`transform`]: parametric motion models (translation, SE(2), similarity,
//!   Aff(2)) as deformation fields, with the centered affine basis and its
//!   projection operator.
//! - [`objective`]: the registration objectives (basic, cost-smoothed,
//!   background-modeled, complementary-smoothed spike) and their analytic
//!   gradients.
//! - [`spike_model`]: the exact continuum multichannel-spike objective, the
//!   step-size/smoothing oracle, and an iterate-by-iterate contraction-bound
//!   verifier.
//! - [`solver`]: fixed-depth proximal-gradient solvers, multiscale schedules,
//!   and two-phase refinement.
//! - [`scene`]: deterministic synthetic data (textured templates, clutter,
//!   spike scenes, transform samplers).
//! - [`hierarchy`]: strided registration, occurrence maps, and the
//!   hierarchical template detector with extraction and calibration.

pub mod error;
pub mod hierarchy;
pub mod img;
pub mod objective;
pub mod scene;
pub mod solver;
pub mod spike_model;
pub mod transform;

pub use error::{Error, Result};
