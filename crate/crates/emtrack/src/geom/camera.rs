use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{GeomError, PointCloud};

/// Pinhole camera intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), GeomError> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeomError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 || self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(GeomError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Pixel coordinates of a camera-frame point with z > 0.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        Some((u, v, p.z))
    }

    /// Camera-frame point for pixel (u, v) at depth z.
    pub fn unproject_pixel(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// Per-pixel depth in meters with a validity mask. Invalid pixels carry 0.
#[derive(Debug, Clone)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new_invalid(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            values: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    #[inline]
    pub fn idx(&self, u: u32, v: u32) -> usize {
        (v * self.width + u) as usize
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> Option<f64> {
        let i = self.idx(u, v);
        if self.valid[i] {
            Some(self.values[i] as f64)
        } else {
            None
        }
    }

    pub fn set(&mut self, u: u32, v: u32, z: f32) {
        let i = self.idx(u, v);
        self.values[i] = z;
        self.valid[i] = true;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Projects camera-frame points to pixel coordinates. Points with z ≤ 0 are
/// dropped. Returns (u, v, z) triples in input order.
pub fn project(pc: &PointCloud, intr: &Intrinsics) -> Vec<(f64, f64, f64)> {
    pc.points
        .iter()
        .filter_map(|p| intr.project_point(p))
        .collect()
}

/// Rasterizes a point cloud into a sparse depth map. When several points land
/// on the same pixel the nearest one wins.
pub fn project_to_depth(pc: &PointCloud, intr: &Intrinsics) -> DepthMap {
    let mut depth = DepthMap::new_invalid(intr.width, intr.height);
    for p in &pc.points {
        if let Some((u, v, z)) = intr.project_point(p) {
            let (ui, vi) = (u.round(), v.round());
            if !intr.contains(ui, vi) {
                continue;
            }
            let (ui, vi) = (ui as u32, vi as u32);
            match depth.get(ui, vi) {
                Some(existing) if existing <= z => {}
                _ => depth.set(ui, vi, z as f32),
            }
        }
    }
    depth
}

/// Unprojects every valid depth pixel into a camera-frame point cloud,
/// tagging each point with its source pixel.
pub fn unproject(depth: &DepthMap, intr: &Intrinsics) -> PointCloud {
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            if let Some(z) = depth.get(u, v) {
                points.push(intr.unproject_pixel(u as f64, v as f64, z));
                pixels.push((u, v));
            }
        }
    }
    PointCloud::with_pixels(points, pixels)
}
