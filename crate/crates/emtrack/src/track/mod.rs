//! Short-range association (Hungarian IoU, template correlation), the
//! trajectory library with cost-volume verification, and the long-range
//! tracker that bridges occlusions.

mod correlate;
mod hungarian;
mod library;
mod tracker;

pub use correlate::{correlate_template, extract_crop, CorrelateError};
pub use hungarian::{associate_iou, hungarian};
pub use library::{
    build_cost_volume, library_link, normalize_trajectory, orient_trajectory, verify_tracklet,
    CostVolume, TrajectoryLibrary, VerifyConfig,
};
pub use tracker::{chain_detections, track, StepSource, TrackConfig, TrackInputs, TrackStep, Tracklet};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("trajectory library is empty")]
    EmptyLibrary,
    #[error(transparent)]
    Correlate(#[from] CorrelateError),
}
