use nalgebra::Vector2;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{GridSpec, Intrinsics};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraMotion {
    Static,
    /// Orbit around the scene center, looking inward.
    Arc,
    /// Dolly toward the scene along +z.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Cuboid,
    Cylinder,
    Sphere,
}

/// Per-object motion over the sequence.
#[derive(Debug, Clone, Copy)]
pub enum MotionModel {
    Static,
    /// Constant ground-plane velocity (m/frame).
    Linear { velocity: Vector2<f64> },
    /// Constant speed with a constant heading/yaw rate (rad/frame).
    Turning { speed: f64, heading0: f64, rate: f64 },
}

impl MotionModel {
    pub fn is_moving(&self) -> bool {
        !matches!(self, MotionModel::Static)
    }
}

/// Scene generation parameters. Same seed, same bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub n_objects: usize,
    /// Horizontal object extent range (meters).
    pub size_range: (f64, f64),
    pub palette: Vec<[u8; 3]>,
    /// Per-frame displacement range for movers (m/frame).
    pub speed_range: (f64, f64),
    /// Fraction of moving-type objects that stay parked all sequence.
    pub stationary_fraction: f64,
    /// Fraction of movers that follow a turning path instead of a line.
    pub turning_fraction: f64,
    pub camera: CameraMotion,
    pub frames: usize,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Plant a large static occluder and route one mover fully behind it.
    pub occluder_scenario: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_objects: 4,
            size_range: (0.45, 0.95),
            palette: vec![
                [220, 60, 50],
                [60, 190, 80],
                [70, 90, 220],
                [230, 200, 50],
                [160, 70, 200],
                [60, 200, 200],
            ],
            speed_range: (0.28, 0.45),
            stationary_fraction: 0.0,
            turning_fraction: 0.3,
            camera: CameraMotion::Static,
            frames: 8,
            seed: 0,
            width: 160,
            height: 96,
            occluder_scenario: false,
        }
    }
}

/// Half-extent of the square ground region objects live on.
pub const SCENE_HALF: f64 = 4.0;
/// Object placement half-extent (keeps boxes inside the scene).
const PLACE_HALF: f64 = 2.9;
/// Camera orbit/standoff radius and eye height.
pub const CAMERA_RADIUS: f64 = 7.0;
pub const CAMERA_HEIGHT: f64 = 1.7;

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.n_objects == 0 || self.n_objects > 10 {
            return Err(SceneError::Invalid(format!(
                "n_objects must be in 1..=10, got {}",
                self.n_objects
            )));
        }
        if self.frames < 2 {
            return Err(SceneError::Invalid(format!("frames must be >= 2, got {}", self.frames)));
        }
        if self.size_range.0 <= 0.0 || self.size_range.1 < self.size_range.0 {
            return Err(SceneError::Invalid(format!("bad size range {:?}", self.size_range)));
        }
        if self.palette.is_empty() {
            return Err(SceneError::Invalid("empty palette".into()));
        }
        if !(0.0..=1.0).contains(&self.stationary_fraction) {
            return Err(SceneError::Invalid(format!(
                "stationary_fraction must be in [0,1], got {}",
                self.stationary_fraction
            )));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        // ~60 degree horizontal field of view; principal point raised so a
        // level camera sees mostly ground.
        Intrinsics {
            fx: self.width as f64 * 0.87,
            fy: self.width as f64 * 0.87,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 * 0.55,
            width: self.width,
            height: self.height,
        }
    }

    /// Camera-frame voxel grid covering the scene from the camera standoff.
    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            origin: [-SCENE_HALF, -2.2, CAMERA_RADIUS - SCENE_HALF],
            voxel_size: [
                2.0 * SCENE_HALF / 48.0,
                4.0 / 12.0,
                2.0 * SCENE_HALF / 48.0,
            ],
            dims: [48, 12, 48],
        }
    }
}

/// One object in the scene, with its motion schedule.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub id: usize,
    pub shape: Shape,
    /// (l, h, w) in the object's own frame.
    pub size: [f64; 3],
    pub color: [u8; 3],
    pub motion: MotionModel,
    pub start: Vector2<f64>,
    pub start_yaw: f64,
    pub moving_type: bool,
}

impl SceneObject {
    /// Ground-plane position and yaw at frame t.
    pub fn state_at(&self, t: usize) -> (Vector2<f64>, f64) {
        match self.motion {
            MotionModel::Static => (self.start, self.start_yaw),
            MotionModel::Linear { velocity } => (self.start + velocity * t as f64, self.start_yaw),
            MotionModel::Turning { speed, heading0, rate } => {
                let mut pos = self.start;
                for k in 0..t {
                    let h = heading0 + rate * k as f64;
                    pos += Vector2::new(h.cos(), h.sin()) * speed;
                }
                (pos, self.start_yaw + rate * t as f64)
            }
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        0.5 * (self.size[0].powi(2) + self.size[2].powi(2)).sqrt()
    }
}

/// Samples scene content. Placement is rejection-sampled so object paths
/// never interpenetrate in 3D (image-space crossings still occur freely).
pub fn sample_objects(spec: &SceneSpec, rng: &mut ChaCha12Rng) -> Vec<SceneObject> {
    let mut objects: Vec<SceneObject> = Vec::new();
    let n_station = (spec.stationary_fraction * spec.n_objects as f64).round() as usize;

    if spec.occluder_scenario {
        // A wide static wall between camera and scene, plus one mover that
        // passes fully behind it.
        objects.push(SceneObject {
            id: 0,
            shape: Shape::Cuboid,
            size: [2.6, 1.5, 0.3],
            color: [125, 105, 90],
            motion: MotionModel::Static,
            start: Vector2::new(0.0, -1.2),
            start_yaw: 0.0,
            moving_type: false,
        });
        let speed = rng.gen_range(spec.speed_range.0..=spec.speed_range.1);
        let going_right = rng.gen_bool(0.5);
        let x0 = if going_right { -2.7 } else { 2.7 };
        let vx = if going_right { speed } else { -speed };
        objects.push(SceneObject {
            id: 1,
            shape: Shape::Cuboid,
            size: [
                rng.gen_range(0.5..0.7),
                rng.gen_range(0.5..0.8),
                rng.gen_range(0.5..0.7),
            ],
            color: spec.palette[rng.gen_range(0..spec.palette.len())],
            motion: MotionModel::Linear { velocity: Vector2::new(vx, 0.0) },
            start: Vector2::new(x0, -0.2),
            start_yaw: rng.gen_range(-0.4..0.4),
            moving_type: true,
        });
    }

    let base = objects.len();
    'outer: for i in 0..spec.n_objects {
        let id = base + i;
        for _attempt in 0..200 {
            let shape = match rng.gen_range(0..3) {
                0 => Shape::Cuboid,
                1 => Shape::Cylinder,
                _ => Shape::Sphere,
            };
            let l = rng.gen_range(spec.size_range.0..=spec.size_range.1);
            let size = match shape {
                Shape::Cuboid => [
                    l,
                    rng.gen_range(spec.size_range.0 * 0.7..=spec.size_range.1 * 0.9),
                    rng.gen_range(spec.size_range.0..=spec.size_range.1),
                ],
                Shape::Cylinder => [l, rng.gen_range(spec.size_range.0 * 0.8..=spec.size_range.1), l],
                Shape::Sphere => [l, l, l],
            };
            let mut color = spec.palette[rng.gen_range(0..spec.palette.len())];
            for c in color.iter_mut() {
                *c = (*c as i32 + rng.gen_range(-18..=18)).clamp(0, 255) as u8;
            }
            let stationary = i < n_station;
            let motion = if stationary {
                MotionModel::Static
            } else {
                let speed = rng.gen_range(spec.speed_range.0..=spec.speed_range.1);
                if rng.gen_bool(spec.turning_fraction) {
                    MotionModel::Turning {
                        speed,
                        heading0: rng.gen_range(0.0..std::f64::consts::TAU),
                        rate: rng.gen_range(-0.22..0.22),
                    }
                } else {
                    let h = rng.gen_range(0.0..std::f64::consts::TAU);
                    MotionModel::Linear { velocity: Vector2::new(h.cos(), h.sin()) * speed }
                }
            };
            let cand = SceneObject {
                id,
                shape,
                size,
                color,
                motion,
                start: Vector2::new(
                    rng.gen_range(-PLACE_HALF..PLACE_HALF),
                    rng.gen_range(-PLACE_HALF..PLACE_HALF),
                ),
                start_yaw: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                moving_type: true,
            };
            if path_ok(&cand, &objects, spec.frames) {
                objects.push(cand);
                continue 'outer;
            }
        }
        // Placement failed repeatedly; park a small object near the edge.
        objects.push(SceneObject {
            id,
            shape: Shape::Cuboid,
            size: [0.4, 0.4, 0.4],
            color: spec.palette[id % spec.palette.len()],
            motion: MotionModel::Static,
            start: Vector2::new(-PLACE_HALF + 0.4 * id as f64, PLACE_HALF),
            start_yaw: 0.0,
            moving_type: true,
        });
    }
    objects
}

fn path_ok(cand: &SceneObject, placed: &[SceneObject], frames: usize) -> bool {
    for t in 0..frames {
        let (p, _) = cand.state_at(t);
        if p.x.abs() > PLACE_HALF + 0.2 || p.y.abs() > PLACE_HALF + 0.2 {
            return false;
        }
        for other in placed {
            let (q, _) = other.state_at(t);
            let min_sep = cand.bounding_radius() + other.bounding_radius() + 0.15;
            if (p - q).norm() < min_sep {
                return false;
            }
        }
    }
    true
}
