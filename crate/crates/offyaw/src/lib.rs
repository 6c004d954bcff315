//! Lane-heading trajectory quality tooling: the off-yaw metric and its
//! differentiable loss, nearest-lane heading rasters ("secondary maps"),
//! and the standard multimodal trajectory-prediction metric suite.
//!
//! Modules:
//! - [`geometry`]: frame conventions and per-segment angle primitives
//! - [`scene`]: vector scenes, brute-force nearest-lane oracle, synthetic
//!   scene generator
//! - [`raster`]: 8-bit heading rasters, grid-bucketed nearest-lane index,
//!   PGM persistence
//! - [`metrics`]: off-yaw / off-road rates, minADE, minFDE, miss rate
//! - [`yawloss`]: loss value, analytic gradients, gradient checking,
//!   trajectory refinement

pub mod error;
pub mod geometry;
pub mod metrics;
pub mod raster;
pub mod scene;
pub mod yawloss;

pub use error::{Error, Result};
pub use geometry::{AngleDeg, Point2, Pose, Trajectory};
pub use metrics::{EvalConfig, EvalReport, PredictionSet};
pub use raster::{HeadingRaster, RasterQuery, RasterSpec};
pub use scene::{Scene, SyntheticSpec};
pub use yawloss::LossConfig;
