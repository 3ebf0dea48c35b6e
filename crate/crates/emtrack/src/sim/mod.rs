//! Synthetic RGB-D sequence generator with exact ground truth.
//!
//! Scenes are colored analytic primitives (cuboids, cylinders, spheres) on a
//! textured ground plane. Depth comes from ray-primitive intersection, flow
//! from reprojecting each surface point under object + camera motion, so
//! every ground-truth channel is exact by construction.

mod corrupt;
mod render;
mod scene;

pub use corrupt::{corrupt_flow, FlowNoiseSpec};
pub use render::{generate, Frame, GtBox, Sequence};
pub use scene::{CameraMotion, MotionModel, SceneError, SceneSpec, Shape};
