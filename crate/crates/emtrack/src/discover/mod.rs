//! From motion fields and detector heatmaps to object proposals,
//! pseudo-labels, and the supervision regions that train the detectors.

mod components;
mod fuse;
mod saliency;
mod supervision;

pub use components::{connected_components, Region};
pub use fuse::{complete_box_toward_view, fuse_ensemble, motion_proposals, Cue, FusionConfig, Proposal};
pub use saliency::{center_surround, SaliencyConfig};
pub use supervision::{
    bin_to_yaw, make_supervision_2d, make_supervision_3d, yaw_to_bin, LabelMap2D, PeakTarget,
    PixelClass, SupervisionTargets3D, YAW_BINS,
};

use serde::{Deserialize, Serialize};

use crate::geom::Box3D;

/// A machine-generated box annotation promoted to training ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub frame_id: usize,
    pub round: usize,
    pub box3d: Box3D,
    pub cues: Vec<Cue>,
    pub confidence: f64,
}
