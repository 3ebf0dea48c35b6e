//! Dense 2D optical flow and forward/backward cycle certification.
//!
//! Flow is estimated by coarse-to-fine block matching on grayscale
//! luminance. Reliability is certified per pixel by warping the backward
//! field with the forward field and thresholding the residual of their sum.

mod block_match;
mod cycle;
mod io;

pub use block_match::{estimate_flow, GrayImage};
pub use cycle::{check_cycle, warp_backward, ConsistencyMask, WarpedFlow};
pub use io::{read_flow_bin, write_flow_bin};

use serde::{Deserialize, Serialize};

/// Which way a flow field points in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowDirection {
    Forward,
    Backward,
}

/// Dense 2D motion field: per-pixel (du, dv) in pixels, row-major.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub width: u32,
    pub height: u32,
    /// Interleaved (du, dv) pairs, length 2·W·H.
    pub vectors: Vec<f32>,
    pub direction: FlowDirection,
    /// (source frame, target frame)
    pub frames: (usize, usize),
}

impl FlowField {
    pub fn zeros(width: u32, height: u32, direction: FlowDirection, frames: (usize, usize)) -> Self {
        Self {
            width,
            height,
            vectors: vec![0.0; (width * height * 2) as usize],
            direction,
            frames,
        }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> (f32, f32) {
        let i = 2 * (v * self.width + u) as usize;
        (self.vectors[i], self.vectors[i + 1])
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32, du: f32, dv: f32) {
        let i = 2 * (v * self.width + u) as usize;
        self.vectors[i] = du;
        self.vectors[i + 1] = dv;
    }

    pub fn pixel_count(&self) -> usize {
        (self.width * self.height) as usize
    }
}

/// Thresholds of the forward/backward consistency inequality.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowCheckConfig {
    /// Relative slack (unitless).
    pub alpha1: f64,
    /// Absolute slack (pixels).
    pub alpha2: f64,
}

impl Default for FlowCheckConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.01,
            alpha2: 0.1,
        }
    }
}
