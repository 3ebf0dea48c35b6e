//! Shared geometric types and primitive operations.
//!
//! Conventions used throughout the crate: right-handed camera frame with
//! +z forward (camera look direction) and +y up; yaw is a rotation about
//! the vertical (+y) axis, measured in the ground (x-z) plane; all lengths
//! are in meters.

mod boxes;
mod camera;
mod grid;
pub(crate) mod transform;

pub use boxes::{fit_box, iou_2d, iou_3d, iou_bev, Box2D, Box3D};
pub use camera::{project, project_to_depth, unproject, DepthMap, Intrinsics};
pub use grid::{raycast_visibility, voxelize, GridSpec, VoxelGrid};
pub use transform::{apply_transform, PointCloud, RigidTransform};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("box fitting needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),
}
