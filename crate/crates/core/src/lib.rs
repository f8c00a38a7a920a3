//! Monocular visual odometry with per-degree-of-freedom refinement networks.
//!
//! The crate is split along the three subsystems of the pipeline:
//!
//! * [`euroc`] turns absolute ground truth into per-frame-pair relative targets,
//! * [`frontend`] estimates frame-to-frame motion from sparse optical flow and
//!   epipolar geometry,
//! * [`refiner`] trains one small fully-connected network per degree of
//!   freedom and combines them,
//!
//! with [`se3`] providing the transform algebra, [`metrics`] the RPE/ATE
//! evaluation and [`pipeline`] the command-level orchestration.

pub mod euroc;
pub mod format;
pub mod image;
pub mod se3;
pub mod frontend;
pub mod synthetic;
pub mod refiner;
pub mod metrics;
pub mod pipeline;
