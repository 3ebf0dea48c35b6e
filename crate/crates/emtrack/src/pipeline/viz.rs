//! PNG renderings: perspective view with projected box wireframes next to
//! a bird's-eye view of the point cloud and box footprints.

use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::Vector3;

use super::estep::frame_context;
use super::PipelineError;
use crate::geom::{Box3D, GridSpec, Intrinsics};
use crate::sim::Frame;

const GT_COLOR: Rgb<u8> = Rgb([225, 205, 160]);
const BOX_COLOR: Rgb<u8> = Rgb([80, 120, 255]);

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.0 + (b.0 - a.0) * t;
        let y = a.1 + (b.1 - a.1) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn draw_box_3d(img: &mut RgbImage, b: &Box3D, intr: &Intrinsics, color: Rgb<u8>) {
    let corners = b.corners();
    let project = |p: &Vector3<f64>| intr.project_point(p).map(|(u, v, _)| (u, v));
    // Bottom ring, top ring, verticals.
    let edges: [(usize, usize); 12] = [
        (0, 1),
        (1, 2),
        (2, 3),
        (3, 0),
        (4, 5),
        (5, 6),
        (6, 7),
        (7, 4),
        (0, 4),
        (1, 5),
        (2, 6),
        (3, 7),
    ];
    for (i, j) in edges {
        if let (Some(a), Some(c)) = (project(&corners[i]), project(&corners[j])) {
            draw_line(img, a, c, color);
        }
    }
}

/// Renders one frame: left, the RGB image with ground-truth (beige) and
/// provided (blue) boxes; right, a BEV canvas with the cloud and footprints.
pub fn render_frame(frame: &Frame, boxes: &[Box3D], grid: GridSpec) -> RgbImage {
    let (w, h) = (frame.intrinsics.width, frame.intrinsics.height);
    let mut persp = RgbImage::new(w, h);
    for v in 0..h {
        for u in 0..w {
            let i = ((v * w + u) * 3) as usize;
            persp.put_pixel(u, v, Rgb([frame.rgb[i], frame.rgb[i + 1], frame.rgb[i + 2]]));
        }
    }
    for gt in &frame.boxes {
        draw_box_3d(&mut persp, &gt.box3d, &frame.intrinsics, GT_COLOR);
    }
    for b in boxes {
        draw_box_3d(&mut persp, b, &frame.intrinsics, BOX_COLOR);
    }
    // The +y-up projection puts the ground at low row indices; flip for
    // a natural ground-at-bottom view.
    image::imageops::flip_vertical_in_place(&mut persp);

    // BEV canvas: x right, z up; 3 px per voxel.
    let scale = 3u32;
    let bw = grid.dims[0] as u32 * scale;
    let bh = grid.dims[2] as u32 * scale;
    let mut bev = RgbImage::from_pixel(bw, bh, Rgb([24, 24, 28]));
    let to_px = |x: f64, z: f64| -> (f64, f64) {
        let fx = (x - grid.origin[0]) / grid.voxel_size[0] * scale as f64;
        let fz = (z - grid.origin[2]) / grid.voxel_size[2] * scale as f64;
        (fx, bh as f64 - 1.0 - fz)
    };
    let ctx = frame_context(frame);
    for p in &ctx.cloud.points {
        let (x, y) = to_px(p.x, p.z);
        if x >= 0.0 && y >= 0.0 && (x as u32) < bw && (y as u32) < bh {
            bev.put_pixel(x as u32, y as u32, Rgb([110, 110, 110]));
        }
    }
    let mut draw_bev_box = |b: &Box3D, color: Rgb<u8>| {
        let c = b.bev_corners();
        for i in 0..4 {
            let a = to_px(c[i].x, c[i].y);
            let d = to_px(c[(i + 1) % 4].x, c[(i + 1) % 4].y);
            draw_line(&mut bev, a, d, color);
        }
    };
    for gt in &frame.boxes {
        draw_bev_box(&gt.box3d, GT_COLOR);
    }
    for b in boxes {
        draw_bev_box(b, BOX_COLOR);
    }

    // Side-by-side composite.
    let out_h = persp.height().max(bev.height());
    let mut out = RgbImage::from_pixel(persp.width() + bev.width() + 4, out_h, Rgb([0, 0, 0]));
    image::imageops::overlay(&mut out, &persp, 0, 0);
    image::imageops::overlay(&mut out, &bev, persp.width() as i64 + 4, 0);
    out
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<(), PipelineError> {
    img.save(path)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}
