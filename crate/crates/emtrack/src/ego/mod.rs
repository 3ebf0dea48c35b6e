//! Egomotion estimation from cycle-consistent flow.
//!
//! 2D flow is upgraded to sparse 3D correspondences wherever both endpoints
//! have depth, a rigid motion is fit by RANSAC over Kabsch hypotheses, and
//! the forward/backward estimates certify each other by composing to
//! near-identity over the whole pointcloud. Accepted estimates yield the
//! egomotion-stabilized motion field downstream stages feed on.

mod kabsch;
mod lift;
mod motion;
mod ransac;

pub use kabsch::kabsch;
pub use lift::{lift_flow, Flow3D};
pub use motion::{check_egomotion_cycle, estimate_egomotion, motion_field, EgomotionEstimate, MotionField};
pub use ransac::{ransac_rigid, RansacConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EgoError {
    #[error("need at least 3 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("no RANSAC hypothesis reached 3 inliers")]
    NoConsensus,
    #[error("empty point cloud")]
    EmptyCloud,
}
