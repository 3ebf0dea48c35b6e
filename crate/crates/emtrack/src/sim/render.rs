use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::scene::{
    sample_objects, CameraMotion, SceneError, SceneObject, SceneSpec, Shape, CAMERA_HEIGHT,
    CAMERA_RADIUS, SCENE_HALF,
};
use crate::flow::{FlowDirection, FlowField};
use crate::geom::transform::yaw_matrix;
use crate::geom::{Box3D, DepthMap, GridSpec, Intrinsics, RigidTransform};

/// Ground-truth box in the frame's camera coordinates.
#[derive(Debug, Clone)]
pub struct GtBox {
    pub id: usize,
    pub box3d: Box3D,
    pub moving_type: bool,
    pub is_moving: bool,
    /// Rendered pixels belonging to this object (visibility measure).
    pub n_pixels: usize,
}

/// One rendered RGB-D frame with its ground truth.
#[derive(Debug, Clone)]
pub struct Frame {
    pub rgb: Vec<u8>,
    pub depth: DepthMap,
    pub intrinsics: Intrinsics,
    /// World→camera transform.
    pub pose: RigidTransform,
    pub boxes: Vec<GtBox>,
    /// Flow to the next frame; None on the last frame.
    pub flow_fw: Option<FlowField>,
    /// Flow to the previous frame; None on the first frame.
    pub flow_bw: Option<FlowField>,
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub spec: SceneSpec,
    pub grid: GridSpec,
    pub frames: Vec<Frame>,
}

/// Camera pose (world→camera) at frame t: a level camera, yaw-only.
fn camera_pose(spec: &SceneSpec, t: usize) -> RigidTransform {
    let (eye, yaw) = match spec.camera {
        CameraMotion::Static => (Vector3::new(0.0, CAMERA_HEIGHT, -CAMERA_RADIUS), 0.0),
        CameraMotion::Arc => {
            let phi = 0.035 * t as f64;
            (
                Vector3::new(CAMERA_RADIUS * phi.sin(), CAMERA_HEIGHT, -CAMERA_RADIUS * phi.cos()),
                -phi,
            )
        }
        CameraMotion::Forward => (
            Vector3::new(0.0, CAMERA_HEIGHT, -CAMERA_RADIUS - 1.0 + 0.16 * t as f64),
            0.0,
        ),
    };
    // Camera-to-world rotation is yaw_matrix(yaw); world→camera inverts it.
    let r_cw = yaw_matrix(yaw).transpose();
    RigidTransform::new(r_cw, -(r_cw * eye))
}

/// What a camera ray hit.
#[derive(Debug, Clone, Copy)]
enum Hit {
    Ground { world: Vector3<f64> },
    Object { idx: usize, local: Vector3<f64>, normal: Vector3<f64> },
}

struct RayHit {
    t: f64,
    hit: Hit,
}

/// Local-frame ray vs. axis-aligned cuboid of half-extents `he`.
fn intersect_cuboid(o: &Vector3<f64>, d: &Vector3<f64>, he: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut axis = 0usize;
    for a in 0..3 {
        if d[a].abs() < 1e-12 {
            if o[a].abs() > he[a] {
                return None;
            }
            continue;
        }
        let ta = (-he[a] - o[a]) / d[a];
        let tb = (he[a] - o[a]) / d[a];
        let (lo, hi) = (ta.min(tb), ta.max(tb));
        if lo > t0 {
            t0 = lo;
            axis = a;
        }
        t1 = t1.min(hi);
        if t0 > t1 {
            return None;
        }
    }
    if t0 <= 1e-9 {
        return None; // camera inside or behind
    }
    let p = o + d * t0;
    let mut n = Vector3::zeros();
    n[axis] = p[axis].signum();
    Some((t0, n))
}

fn intersect_cylinder(
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    radius: f64,
    half_h: f64,
) -> Option<(f64, Vector3<f64>)> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    // Side surface: x^2 + z^2 = r^2.
    let a = d.x * d.x + d.z * d.z;
    if a > 1e-12 {
        let b = 2.0 * (o.x * d.x + o.z * d.z);
        let c = o.x * o.x + o.z * o.z - radius * radius;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            for t in [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)] {
                if t > 1e-9 {
                    let p = o + d * t;
                    if p.y.abs() <= half_h {
                        let n = Vector3::new(p.x, 0.0, p.z).normalize();
                        if best.map_or(true, |(bt, _)| t < bt) {
                            best = Some((t, n));
                        }
                        break;
                    }
                }
            }
        }
    }
    // Caps.
    if d.y.abs() > 1e-12 {
        for y in [half_h, -half_h] {
            let t = (y - o.y) / d.y;
            if t > 1e-9 {
                let p = o + d * t;
                if p.x * p.x + p.z * p.z <= radius * radius && best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, Vector3::new(0.0, y.signum(), 0.0)));
                }
            }
        }
    }
    best
}

fn intersect_sphere(o: &Vector3<f64>, d: &Vector3<f64>, radius: f64) -> Option<(f64, Vector3<f64>)> {
    let a = d.dot(d);
    let b = 2.0 * o.dot(d);
    let c = o.dot(o) - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t = (-b - s) / (2.0 * a);
    if t <= 1e-9 {
        return None;
    }
    let p = o + d * t;
    Some((t, p.normalize()))
}

/// Deterministic per-cell noise in [-1, 1), attached to surface coordinates.
fn hash_noise(ix: i64, iy: i64, iz: i64, salt: u64) -> f64 {
    let mut h = salt
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(ix as u64)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9)
        .wrapping_add(iy as u64)
        .wrapping_mul(0x94D0_49BB_1331_11EB)
        .wrapping_add(iz as u64);
    h ^= h >> 31;
    h = h.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 32;
    (h as f64 / u64::MAX as f64) * 2.0 - 1.0
}

struct ObjectState {
    /// Object frame → world at this frame.
    to_world: RigidTransform,
    /// World → object frame.
    to_local: RigidTransform,
}

fn object_state(obj: &SceneObject, t: usize) -> ObjectState {
    let (pos, yaw) = obj.state_at(t);
    let to_world = RigidTransform::new(
        yaw_matrix(yaw),
        Vector3::new(pos.x, obj.size[1] / 2.0, pos.y),
    );
    ObjectState {
        to_local: to_world.inverse(),
        to_world,
    }
}

fn cast_ray(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    objects: &[SceneObject],
    states: &[ObjectState],
) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    // Ground plane y=0 within the scene square.
    if dir.y.abs() > 1e-12 {
        let t = -origin.y / dir.y;
        if t > 1e-9 {
            let p = origin + dir * t;
            if p.x.abs() <= SCENE_HALF + 0.5 && p.z.abs() <= SCENE_HALF + 0.5 {
                best = Some(RayHit { t, hit: Hit::Ground { world: p } });
            }
        }
    }
    for (idx, obj) in objects.iter().enumerate() {
        let st = &states[idx];
        let o_l = st.to_local.apply(origin);
        let d_l = st.to_local.rotation * dir;
        let res = match obj.shape {
            Shape::Cuboid => intersect_cuboid(
                &o_l,
                &d_l,
                &Vector3::new(obj.size[0] / 2.0, obj.size[1] / 2.0, obj.size[2] / 2.0),
            ),
            Shape::Cylinder => intersect_cylinder(&o_l, &d_l, obj.size[0] / 2.0, obj.size[1] / 2.0),
            Shape::Sphere => intersect_sphere(&o_l, &d_l, obj.size[0] / 2.0),
        };
        if let Some((t, n_local)) = res {
            if best.as_ref().map_or(true, |b| t < b.t) {
                best = Some(RayHit {
                    t,
                    hit: Hit::Object {
                        idx,
                        local: o_l + d_l * t,
                        normal: st.to_world.rotation * n_local,
                    },
                });
            }
        }
    }
    best
}

const LIGHT_DIR: Vector3<f64> = Vector3::new(0.35, 0.8, -0.49);
const SKY: [u8; 3] = [136, 152, 170];

fn shade(albedo: [u8; 3], normal: &Vector3<f64>, noise: f64) -> [u8; 3] {
    let l = LIGHT_DIR.normalize();
    let lambert = 0.72 + 0.28 * normal.dot(&l).max(0.0);
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = ((albedo[c] as f64) * lambert + noise).clamp(0.0, 255.0) as u8;
    }
    out
}

/// Renders the full sequence for `spec`.
pub fn generate(spec: &SceneSpec) -> Result<Sequence, SceneError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let objects = sample_objects(spec, &mut rng);
    let intr = spec.intrinsics();
    let (w, h) = (spec.width, spec.height);

    // Per-frame object states and camera poses.
    let poses: Vec<RigidTransform> = (0..spec.frames).map(|t| camera_pose(spec, t)).collect();
    let states: Vec<Vec<ObjectState>> = (0..spec.frames)
        .map(|t| objects.iter().map(|o| object_state(o, t)).collect())
        .collect();

    // Hit records of the current frame, reused for flow.
    let mut frames: Vec<Frame> = Vec::with_capacity(spec.frames);
    let mut all_hits: Vec<Vec<Option<RayHit>>> = Vec::with_capacity(spec.frames);

    for t in 0..spec.frames {
        let cam_inv = poses[t].inverse(); // camera→world
        let eye = cam_inv.translation;
        let mut rgb = vec![0u8; (w * h * 3) as usize];
        let mut depth = DepthMap::new_invalid(w, h);
        let mut hits: Vec<Option<RayHit>> = Vec::with_capacity((w * h) as usize);
        let mut pixel_counts = vec![0usize; objects.len()];

        for v in 0..h {
            for u in 0..w {
                // Direction with unit camera-z so the ray parameter is z-depth.
                let d_cam = Vector3::new(
                    (u as f64 - intr.cx) / intr.fx,
                    (v as f64 - intr.cy) / intr.fy,
                    1.0,
                );
                let d_world = cam_inv.rotation * d_cam;
                let hit = cast_ray(&eye, &d_world, &objects, &states[t]);
                let px = ((v * w + u) * 3) as usize;
                match &hit {
                    Some(rh) => {
                        depth.set(u, v, rh.t as f32);
                        match rh.hit {
                            Hit::Ground { world } => {
                                let checker = if ((world.x + 64.0).floor() as i64
                                    + (world.z + 64.0).floor() as i64)
                                    % 2
                                    == 0
                                {
                                    92
                                } else {
                                    148
                                };
                                let n = hash_noise(
                                    (world.x * 20.0).floor() as i64,
                                    0,
                                    (world.z * 20.0).floor() as i64,
                                    spec.seed ^ 0xA5A5,
                                ) * 14.0;
                                let val = (checker as f64 + n).clamp(0.0, 255.0) as u8;
                                rgb[px] = val;
                                rgb[px + 1] = val;
                                rgb[px + 2] = val;
                            }
                            Hit::Object { idx, local, normal } => {
                                pixel_counts[idx] += 1;
                                let noise = hash_noise(
                                    (local.x * 24.0).floor() as i64,
                                    (local.y * 24.0).floor() as i64,
                                    (local.z * 24.0).floor() as i64,
                                    spec.seed ^ (idx as u64 + 1),
                                ) * 10.0;
                                let c = shade(objects[idx].color, &normal, noise);
                                rgb[px] = c[0];
                                rgb[px + 1] = c[1];
                                rgb[px + 2] = c[2];
                            }
                        }
                    }
                    None => {
                        rgb[px] = SKY[0];
                        rgb[px + 1] = SKY[1];
                        rgb[px + 2] = SKY[2];
                    }
                }
                hits.push(hit);
            }
        }

        let boxes = objects
            .iter()
            .enumerate()
            .map(|(idx, obj)| {
                let (pos, yaw) = obj.state_at(t);
                let center_w = Vector3::new(pos.x, obj.size[1] / 2.0, pos.y);
                let center_c = poses[t].apply(&center_w);
                // Level camera: its rotation is yaw-only, so camera-frame yaw
                // is the object yaw shifted by the camera yaw.
                let cam_yaw = extract_yaw(&poses[t]);
                GtBox {
                    id: obj.id,
                    box3d: Box3D::new(
                        [center_c.x, center_c.y, center_c.z],
                        obj.size,
                        yaw + cam_yaw,
                        1.0,
                    ),
                    moving_type: obj.moving_type,
                    is_moving: obj.motion.is_moving(),
                    n_pixels: pixel_counts[idx],
                }
            })
            .collect();

        frames.push(Frame {
            rgb,
            depth,
            intrinsics: intr,
            pose: poses[t],
            boxes,
            flow_fw: None,
            flow_bw: None,
        });
        all_hits.push(hits);
    }

    // Flow: reproject each hit surface point under object + camera motion.
    for t in 0..spec.frames {
        if t + 1 < spec.frames {
            let fw = flow_between(spec, &objects, &all_hits[t], &states[t + 1], &poses[t + 1], t, t + 1);
            frames[t].flow_fw = Some(fw);
        }
        if t > 0 {
            let bw = flow_between(spec, &objects, &all_hits[t], &states[t - 1], &poses[t - 1], t, t - 1);
            frames[t].flow_bw = Some(bw);
        }
    }

    Ok(Sequence {
        spec: spec.clone(),
        grid: spec.grid_spec(),
        frames,
    })
}

/// Camera yaw of a level (yaw-only) world→camera pose.
fn extract_yaw(pose: &RigidTransform) -> f64 {
    // R_cw = yaw_matrix(yaw)^T; yaw_matrix(yaw)[(0,2)] = sin, [(0,0)] = cos.
    let r_wc = pose.rotation.transpose();
    r_wc[(0, 2)].atan2(r_wc[(0, 0)])
}

fn flow_between(
    spec: &SceneSpec,
    objects: &[SceneObject],
    hits: &[Option<RayHit>],
    dst_states: &[ObjectState],
    dst_pose: &RigidTransform,
    src_t: usize,
    dst_t: usize,
) -> FlowField {
    let (w, h) = (spec.width, spec.height);
    let intr = spec.intrinsics();
    let dir = if dst_t > src_t {
        FlowDirection::Forward
    } else {
        FlowDirection::Backward
    };
    let mut flow = FlowField::zeros(w, h, dir, (src_t, dst_t));
    for v in 0..h {
        for u in 0..w {
            let i = (v * w + u) as usize;
            let Some(rh) = &hits[i] else { continue };
            let world_dst = match rh.hit {
                Hit::Ground { world } => world,
                Hit::Object { idx, local, .. } => {
                    let _ = &objects[idx];
                    dst_states[idx].to_world.apply(&local)
                }
            };
            let cam_dst = dst_pose.apply(&world_dst);
            if let Some((u1, v1, _)) = intr.project_point(&cam_dst) {
                flow.set(u, v, (u1 - u as f64) as f32, (v1 - v as f64) as f32);
            }
        }
    }
    flow
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::unproject;

    fn base_spec() -> SceneSpec {
        SceneSpec {
            n_objects: 3,
            frames: 4,
            seed: 42,
            width: 96,
            height: 64,
            ..Default::default()
        }
    }

    #[test]
    fn static_scene_static_camera_has_zero_flow() {
        let spec = SceneSpec {
            n_objects: 1,
            stationary_fraction: 1.0,
            camera: CameraMotion::Static,
            ..base_spec()
        };
        let seq = generate(&spec).unwrap();
        let flow = seq.frames[0].flow_fw.as_ref().unwrap();
        let max = flow.vectors.iter().fold(0f32, |m, v| m.max(v.abs()));
        assert!(max < 1e-9, "max |flow| = {max}");
    }

    #[test]
    fn translating_camera_flow_matches_reprojection_oracle() {
        let spec = SceneSpec {
            n_objects: 2,
            stationary_fraction: 1.0,
            camera: CameraMotion::Forward,
            ..base_spec()
        };
        let seq = generate(&spec).unwrap();
        let f0 = &seq.frames[0];
        let f1 = &seq.frames[1];
        let flow = f0.flow_fw.as_ref().unwrap();
        // Oracle: unproject the depth map, carry each point world-side with
        // the pose ground truth, reproject with the next pose.
        let cloud = unproject(&f0.depth, &f0.intrinsics);
        let cam0_to_world = f0.pose.inverse();
        let pixels = cloud.pixels.as_ref().unwrap();
        let mut checked = 0;
        for (k, p) in cloud.points.iter().enumerate() {
            let world = cam0_to_world.apply(p);
            let cam1 = f1.pose.apply(&world);
            let (u, v) = pixels[k];
            if let Some((u1, v1, _)) = f0.intrinsics.project_point(&cam1) {
                let (du, dv) = flow.get(u, v);
                let err = ((u1 - u as f64 - du as f64).powi(2)
                    + (v1 - v as f64 - dv as f64).powi(2))
                .sqrt();
                assert!(err < 0.5, "flow error {err} at ({u},{v})");
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = base_spec();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.rgb, fb.rgb);
            assert_eq!(fa.depth.values, fb.depth.values);
            assert_eq!(
                fa.flow_fw.as_ref().map(|f| &f.vectors),
                fb.flow_fw.as_ref().map(|f| &f.vectors)
            );
        }
    }

    #[test]
    fn different_seed_changes_scene() {
        let a = generate(&base_spec()).unwrap();
        let spec_b = SceneSpec { seed: 43, ..base_spec() };
        let b = generate(&spec_b).unwrap();
        assert_ne!(a.frames[0].rgb, b.frames[0].rgb);
    }

    #[test]
    fn depth_positive_and_bounded() {
        let seq = generate(&base_spec()).unwrap();
        for f in &seq.frames {
            for (i, &val) in f.depth.values.iter().enumerate() {
                if f.depth.valid[i] {
                    assert!(val > 0.5 && val < 30.0, "depth {val}");
                }
            }
        }
    }

    #[test]
    fn moving_objects_marked_and_boxes_in_view() {
        let spec = SceneSpec {
            n_objects: 4,
            stationary_fraction: 0.5,
            ..base_spec()
        };
        let seq = generate(&spec).unwrap();
        let f = &seq.frames[0];
        let moving = f.boxes.iter().filter(|b| b.is_moving).count();
        let parked = f.boxes.iter().filter(|b| !b.is_moving).count();
        assert_eq!(moving, 2);
        assert_eq!(parked, 2);
        // All objects should render at least a few pixels from the standoff.
        for b in &f.boxes {
            assert!(b.n_pixels > 10, "object {} got {} pixels", b.id, b.n_pixels);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = base_spec();
        s.n_objects = 0;
        assert!(generate(&s).is_err());
        let mut s2 = base_spec();
        s2.frames = 1;
        assert!(generate(&s2).is_err());
    }

    #[test]
    fn occluder_scenario_hides_mover_for_several_frames() {
        let spec = SceneSpec {
            n_objects: 2,
            frames: 16,
            occluder_scenario: true,
            camera: CameraMotion::Static,
            seed: 7,
            ..base_spec()
        };
        let seq = generate(&spec).unwrap();
        let visible: Vec<bool> = seq
            .frames
            .iter()
            .map(|f| f.boxes.iter().find(|b| b.id == 1).unwrap().n_pixels > 0)
            .collect();
        let longest_gap = visible
            .split(|&v| v)
            .map(|run| run.len())
            .max()
            .unwrap_or(0);
        assert!(
            longest_gap >= 4,
            "longest full occlusion {longest_gap} frames: {visible:?}"
        );
        assert!(visible[0], "mover must start visible");
        assert!(*visible.last().unwrap(), "mover must end visible");
    }

    #[test]
    fn gt_boxes_align_with_rendered_depth() {
        // Unproject object pixels and verify they fall inside the gt box.
        let seq = generate(&base_spec()).unwrap();
        let f = &seq.frames[0];
        let cloud = unproject(&f.depth, &f.intrinsics);
        for b in &f.boxes {
            let grown = b.box3d.inflated(0.05);
            let inside = cloud
                .points
                .iter()
                .filter(|p| grown.contains(p))
                .count();
            assert!(
                inside + 8 >= b.n_pixels,
                "object {}: {} px rendered, {} points in box",
                b.id,
                b.n_pixels,
                inside
            );
        }
    }
}
