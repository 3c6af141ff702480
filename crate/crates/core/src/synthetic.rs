//! Ray-cast synthetic scenes with exact poses and depth maps: a textured
//! back wall, a floor, a box face and a slanted panel seen by a pinhole
//! camera on a smooth trajectory.

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::correlation::{FeatureMap, GroundTruth};
use crate::error::{Error, Result};
use crate::eval::Trajectory;
use crate::geometry::{Intrinsics, Pose};
use crate::image::Image;
use crate::seed::{derive_seed, mix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    /// Sideways and forward drift with gentle rotation.
    Standard,
    /// Every frame at the origin.
    Static,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub focal: f64,
    pub texture_seed: u64,
    pub motion: Motion,
    /// Supersampling factor per axis for the rendered intensities.
    pub supersample: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 160,
            height: 120,
            frames: 30,
            focal: 150.0,
            texture_seed: 7,
            motion: Motion::Standard,
            supersample: 2,
        }
    }
}

#[derive(Clone, Debug)]
struct Plane {
    normal: Vector3<f64>,
    offset: f64,
    origin: Vector3<f64>,
    /// In-plane axes spanning the texture coordinates.
    axes: [Vector3<f64>; 2],
    /// Half extents along `axes`; infinite when unbounded.
    extent: [f64; 2],
    seed: u64,
}

impl Plane {
    fn new(origin: Vector3<f64>, normal: Vector3<f64>, up: Vector3<f64>, extent: [f64; 2], seed: u64) -> Self {
        let normal = normal.normalize();
        let a = up.cross(&normal).normalize();
        let b = normal.cross(&a);
        Plane {
            offset: normal.dot(&origin),
            normal,
            origin,
            axes: [a, b],
            extent,
            seed,
        }
    }

    /// Ray parameter and texture coordinates of the hit, if any.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, [f64; 2])> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.offset - self.normal.dot(origin)) / denom;
        if t <= 1e-9 {
            return None;
        }
        let rel = origin + dir * t - self.origin;
        let uv = [rel.dot(&self.axes[0]), rel.dot(&self.axes[1])];
        (uv[0].abs() <= self.extent[0] && uv[1].abs() <= self.extent[1]).then_some((t, uv))
    }
}

fn lattice(seed: u64, i: i64, j: i64) -> f64 {
    (derive_seed(seed, &[i as u64, j as u64]) >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1)`.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (xf, yf) = (x.floor(), y.floor());
    let (i, j) = (xf as i64, yf as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (smooth(x - xf), smooth(y - yf));
    let a = lattice(seed, i, j) * (1.0 - sx) + lattice(seed, i + 1, j) * sx;
    let b = lattice(seed, i, j + 1) * (1.0 - sx) + lattice(seed, i + 1, j + 1) * sx;
    a * (1.0 - sy) + b * sy
}

fn texture(seed: u64, uv: [f64; 2]) -> f64 {
    let octave = |k: u64, f: f64| value_noise(mix(seed ^ k), uv[0] * f, uv[1] * f);
    40.0 + 170.0 * (0.5 * octave(1, 6.0) + 0.3 * octave(2, 14.0) + 0.2 * octave(3, 30.0))
}

fn scene_planes(seed: u64) -> Vec<Plane> {
    let up = Vector3::new(0.0, -1.0, 0.0);
    let inf = f64::INFINITY;
    vec![
        // back wall
        Plane::new(Vector3::new(0.0, 0.0, 3.0), Vector3::new(0.0, 0.0, -1.0), up, [inf, inf], mix(seed ^ 11)),
        // floor, camera y axis points down
        Plane::new(
            Vector3::new(0.0, 0.6, 1.5),
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            [inf, 1.5],
            mix(seed ^ 12),
        ),
        // box face
        Plane::new(Vector3::new(-0.45, -0.05, 1.8), Vector3::new(0.0, 0.0, -1.0), up, [0.25, 0.38], mix(seed ^ 13)),
        // slanted panel
        Plane::new(Vector3::new(0.5, -0.2, 2.2), Vector3::new(-0.4, 0.0, -1.0), up, [0.35, 0.35], mix(seed ^ 14)),
    ]
}

fn camera_pose(motion: Motion, t: usize, frames: usize) -> Pose {
    match motion {
        Motion::Static => Pose::identity(),
        Motion::Standard => {
            let s = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
            let pi = std::f64::consts::PI;
            let c = Vector3::new(0.5 * s - 0.1 * s * s, -0.05 * (pi * s).sin(), 0.25 * s);
            let yaw = 0.12 * (pi * s).sin();
            let pitch = 0.04 * (2.0 * pi * s).sin();
            let roll = 0.02 * s;
            Pose::new(UnitQuaternion::from_euler_angles(pitch, yaw, roll), c)
        }
    }
}

/// Rendered frames with their exact poses and z-depth maps.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub images: Vec<Image>,
    /// Metric z-depth per pixel, one channel.
    pub depths: Vec<FeatureMap>,
    pub poses: Vec<Pose>,
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            intrinsics: self.intrinsics,
            width: self.width,
            height: self.height,
            poses: self.poses.clone(),
            depths: self.depths.clone(),
        }
    }

    /// Ground-truth trajectory with frame indices as timestamps.
    pub fn trajectory(&self) -> Trajectory {
        Trajectory::from_entries(self.poses.iter().enumerate().map(|(i, p)| (i as f64, *p)).collect())
            .expect("indices increase")
    }
}

pub fn render_sequence(config: &SceneConfig) -> Result<SyntheticSequence> {
    if config.width < 16 || config.height < 16 || config.frames == 0 || config.supersample == 0 {
        return Err(Error::Config(
            "scene needs at least 16x16 pixels, one frame and supersample >= 1".into(),
        ));
    }
    let (w, h) = (config.width, config.height);
    let k = Intrinsics::new(config.focal, config.focal, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0)?;
    let planes = scene_planes(config.texture_seed);
    let mut seq = SyntheticSequence {
        intrinsics: k,
        width: w,
        height: h,
        images: Vec::with_capacity(config.frames),
        depths: Vec::with_capacity(config.frames),
        poses: Vec::with_capacity(config.frames),
    };
    let cast = |pose: &Pose, px: f64, py: f64| -> Option<(f64, f64)> {
        // camera ray with unit z, so the hit parameter is the z-depth
        let dir_c = k.unproject(&Vector2::new(px, py));
        let dir = pose.rotation() * dir_c;
        let origin = pose.translation();
        planes
            .iter()
            .filter_map(|p| p.intersect(origin, &dir).map(|(t, uv)| (t, texture(p.seed, uv))))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    };
    let ss = config.supersample;
    for t in 0..config.frames {
        let pose = camera_pose(config.motion, t, config.frames);
        let depth = FeatureMap::from_fn(h, w, 1, |r, c, _| {
            cast(&pose, c as f64, r as f64).map_or(0.0, |(z, _)| z as f32)
        });
        let image = Image::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            for sy in 0..ss {
                for sx in 0..ss {
                    let ox = (sx as f64 + 0.5) / ss as f64 - 0.5;
                    let oy = (sy as f64 + 0.5) / ss as f64 - 0.5;
                    acc += cast(&pose, x as f64 + ox, y as f64 + oy).map_or(0.0, |(_, v)| v);
                }
            }
            (acc / (ss * ss) as f64) as f32
        });
        seq.images.push(image);
        seq.depths.push(depth);
        seq.poses.push(pose);
    }
    Ok(seq)
}

/// The 30-frame sequence used by the end-to-end checks.
pub fn bundled_sequence() -> SyntheticSequence {
    render_sequence(&SceneConfig::default()).expect("default scene is valid")
}
