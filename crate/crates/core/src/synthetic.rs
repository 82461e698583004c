//! Analytic scenes and a radar-equation simulator for generating posed
//! point-cloud datasets with known geometry.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, PointCloudFrame, Pose, Vec3};
use crate::io::{self, IoError};
use crate::mesh::SdfQuery;
use crate::field::FieldError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("scene file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] IoError),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidScene(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    /// Infinite plane; the side `normal` points to is positive.
    Plane { point: Vec3, normal: Vec3 },
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box.
    Box { center: Vec3, half_size: Vec3 },
    /// Cube of edge `size` whose echo spikes when the sensor is inside the
    /// aperture cone around `boresight`.
    CornerReflector { center: Vec3, boresight: Vec3, size: f64 },
}

impl Shape {
    pub fn sdf(&self, x: &Vec3) -> f64 {
        match self {
            Shape::Plane { point, normal } => normal.dot(&(x - point)),
            Shape::Sphere { center, radius } => (x - center).norm() - radius,
            Shape::Box { center, half_size } => box_sdf(x - center, half_size),
            Shape::CornerReflector { center, size, .. } => box_sdf(x - center, &Vec3::repeat(0.5 * size)),
        }
    }

    /// Unit outward normal (gradient of the SDF).
    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        match self {
            Shape::Plane { normal, .. } => *normal,
            Shape::Sphere { center, .. } => (x - center).try_normalize(0.0).unwrap_or_else(Vec3::z),
            Shape::Box { center, half_size } => box_gradient(x - center, half_size),
            Shape::CornerReflector { center, size, .. } => box_gradient(x - center, &Vec3::repeat(0.5 * size)),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let finite = |v: &Vec3| v.iter().all(|c| c.is_finite());
        match self {
            Shape::Plane { point, normal } => {
                if !finite(point) || ((normal.norm() - 1.0).abs() > 1e-9) {
                    return Err(invalid("plane normal must be unit length"));
                }
            }
            Shape::Sphere { center, radius } => {
                if !finite(center) || !(*radius > 0.0) {
                    return Err(invalid("sphere radius must be positive"));
                }
            }
            Shape::Box { center, half_size } => {
                if !finite(center) || !half_size.iter().all(|h| *h > 0.0) {
                    return Err(invalid("box half sizes must be positive"));
                }
            }
            Shape::CornerReflector { center, boresight, size } => {
                if !finite(center) || !(*size > 0.0) || (boresight.norm() - 1.0).abs() > 1e-9 {
                    return Err(invalid("corner reflector needs positive size and unit boresight"));
                }
            }
        }
        Ok(())
    }
}

fn box_sdf(p: Vec3, h: &Vec3) -> f64 {
    let q = p.abs() - h;
    let outside = q.map(|c| c.max(0.0)).norm();
    outside + q.max().min(0.0)
}

fn box_gradient(p: Vec3, h: &Vec3) -> Vec3 {
    let q = p.abs() - h;
    let sign = p.map(|c| if c < 0.0 { -1.0 } else { 1.0 });
    let pos = q.map(|c| c.max(0.0));
    let n = pos.norm();
    if n > 0.0 {
        return sign.component_mul(&pos) / n;
    }
    let a = q.imax();
    let mut g = Vec3::zeros();
    g[a] = sign[a];
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    /// Material reflectivity ρ in (0, 1].
    pub reflectivity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub aabb: Aabb,
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.primitives.is_empty() {
            return Err(invalid("scene has no primitives"));
        }
        for p in &self.primitives {
            p.shape.validate()?;
            if !(p.reflectivity > 0.0 && p.reflectivity <= 1.0) {
                return Err(invalid("reflectivity must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    /// Union of all primitives with the index of the closest one.
    pub fn sdf_with_index(&self, x: &Vec3) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.primitives.iter().enumerate() {
            let d = p.shape.sdf(x);
            if d < best.0 {
                best = (d, i);
            }
        }
        best
    }

    pub fn sdf(&self, x: &Vec3) -> f64 {
        self.sdf_with_index(x).0
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        let (_, i) = self.sdf_with_index(x);
        self.primitives[i].shape.gradient(x)
    }

    /// Sphere tracing. Returns the hit distance and primitive index; `None`
    /// when nothing is hit within `max_range` or the origin is inside.
    pub fn trace(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<(f64, usize)> {
        let mut t = 0.0;
        for _ in 0..100_000 {
            let (d, i) = self.sdf_with_index(&(origin + dir * t));
            if d.abs() < TRACE_TOLERANCE {
                return Some((t, i));
            }
            if d < 0.0 {
                return None;
            }
            t += d;
            if t > max_range {
                return None;
            }
        }
        None
    }
}

pub const TRACE_TOLERANCE: f64 = 1e-6;

impl SdfQuery for AnalyticScene {
    fn values(&self, xs: &[Vec3]) -> Result<Vec<f64>, FieldError> {
        Ok(xs.iter().map(|x| self.sdf(x)).collect())
    }

    fn gradients(&self, xs: &[Vec3]) -> Result<Vec<Vec3>, FieldError> {
        Ok(xs.iter().map(|x| self.gradient(x)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadarModel {
    pub transmit_power: f64,
    pub antenna_gain: f64,
    pub effective_area: f64,
    pub noise_sigma_range: f64,
    pub noise_sigma_intensity: f64,
    pub max_range: f64,
    pub azimuth_half_fov: f64,
    pub elevation_half_fov: f64,
    pub azimuth_rays: usize,
    pub elevation_rays: usize,
    /// Returns with received power below this are dropped.
    pub detection_floor: f64,
    /// raw = raw_offset + raw_per_db · 10·log10(P_r), then rounded and clamped.
    pub raw_offset: f64,
    pub raw_per_db: f64,
    pub raw_min: f64,
    pub raw_max: f64,
}

impl Default for RadarModel {
    fn default() -> Self {
        Self {
            transmit_power: 1.0,
            antenna_gain: 1.0,
            effective_area: 1.0,
            noise_sigma_range: 0.01,
            noise_sigma_intensity: 1.0,
            max_range: 12.0,
            azimuth_half_fov: 60f64.to_radians(),
            elevation_half_fov: 15f64.to_radians(),
            azimuth_rays: 100,
            elevation_rays: 20,
            detection_floor: 1e-9,
            raw_offset: 172.0,
            raw_per_db: 1.2,
            raw_min: 64.0,
            raw_max: 118.0,
        }
    }
}

impl RadarModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            self.transmit_power,
            self.antenna_gain,
            self.effective_area,
            self.max_range,
            self.azimuth_half_fov,
            self.elevation_half_fov,
            self.detection_floor,
            self.raw_per_db,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("radar constants must be positive"));
        }
        if self.noise_sigma_range < 0.0 || self.noise_sigma_intensity < 0.0 {
            return Err(invalid("noise levels must be non-negative"));
        }
        if self.azimuth_rays == 0 || self.elevation_rays == 0 {
            return Err(invalid("ray counts must be positive"));
        }
        if !(self.raw_min < self.raw_max) {
            return Err(invalid("raw_min must be below raw_max"));
        }
        Ok(())
    }

    pub fn received_power(&self, sigma: f64, range: f64) -> f64 {
        self.transmit_power * self.antenna_gain * self.effective_area * sigma / ((4.0 * PI).powi(2) * range.powi(4))
    }

    /// Unquantized raw value for a received power.
    pub fn raw_value(&self, received_power: f64) -> f64 {
        self.raw_offset + self.raw_per_db * 10.0 * received_power.log10()
    }

    pub fn quantize(&self, raw: f64) -> f64 {
        raw.round().clamp(self.raw_min, self.raw_max)
    }

    /// Sensor-frame ray directions, azimuth-major order.
    pub fn ray_directions(&self, azimuth_rays: usize, elevation_rays: usize) -> Vec<Vec3> {
        let step = |half: f64, n: usize, i: usize| -half + (i as f64 + 0.5) * 2.0 * half / n as f64;
        let mut out = Vec::with_capacity(azimuth_rays * elevation_rays);
        for a in 0..azimuth_rays {
            let az = step(self.azimuth_half_fov, azimuth_rays, a);
            for e in 0..elevation_rays {
                let el = step(self.elevation_half_fov, elevation_rays, e);
                out.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossSectionModel {
    /// Exponent p in cosᵖθ.
    pub exponent: f64,
    /// Area represented by one return (m²).
    pub patch_area: f64,
    /// Added to cosᵖθ on corner reflectors inside the aperture cone.
    pub spike_gain: f64,
    pub spike_half_angle: f64,
}

impl Default for CrossSectionModel {
    fn default() -> Self {
        Self {
            exponent: 1.0,
            patch_area: 1.0,
            spike_gain: 30.0,
            spike_half_angle: 45f64.to_radians(),
        }
    }
}

impl CrossSectionModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.exponent >= 0.0 && self.patch_area > 0.0 && self.spike_gain >= 0.0 && self.spike_half_angle > 0.0) {
            return Err(invalid("cross-section parameters out of range"));
        }
        Ok(())
    }

    /// σ = ρ·(cosᵖθ + spike)·A_patch.
    pub fn sigma(&self, reflectivity: f64, cos_theta: f64, spike: bool) -> f64 {
        let base = cos_theta.max(0.0).powf(self.exponent);
        let s = if spike { self.spike_gain } else { 0.0 };
        reflectivity * (base + s) * self.patch_area
    }

    /// Whether a return from `shape` seen along `dir` gets the spike.
    pub fn in_aperture(&self, shape: &Shape, dir: &Vec3) -> bool {
        match shape {
            Shape::CornerReflector { boresight, .. } => (-dir).dot(boresight) >= self.spike_half_angle.cos(),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcSpec {
    /// Circle center; its z is the sensor height.
    pub center: Vec3,
    pub radius: f64,
    pub start_deg: f64,
    pub end_deg: f64,
    pub target: Vec3,
    /// Full circles leave out the end angle so frames do not repeat.
    #[serde(default)]
    pub closed: bool,
}

impl ArcSpec {
    fn pose(&self, k: usize, n: usize) -> Pose {
        let frac = if self.closed {
            k as f64 / n as f64
        } else if n > 1 {
            k as f64 / (n - 1) as f64
        } else {
            0.0
        };
        let phi = (self.start_deg + (self.end_deg - self.start_deg) * frac).to_radians();
        let eye = self.center + Vec3::new(phi.cos(), phi.sin(), 0.0) * self.radius;
        Pose::looking_at(eye, self.target)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Trajectory {
    Arc(ArcSpec),
    /// Frames alternate between the rings.
    Rings { rings: Vec<ArcSpec> },
    /// `[tx, ty, tz, qx, qy, qz, qw]` per frame, repeated cyclically.
    Explicit { poses: Vec<[f64; 7]> },
}

impl Trajectory {
    pub fn poses(&self, n: usize) -> Vec<Pose> {
        match self {
            Trajectory::Arc(a) => (0..n).map(|k| a.pose(k, n)).collect(),
            Trajectory::Rings { rings } => {
                let m = rings.len();
                (0..n)
                    .map(|i| {
                        let r = i % m;
                        let count = (n - r).div_ceil(m);
                        rings[r].pose(i / m, count)
                    })
                    .collect()
            }
            Trajectory::Explicit { poses } => (0..n)
                .map(|i| {
                    let p = poses[i % poses.len()];
                    Pose::from_tum([p[0], p[1], p[2]], [p[3], p[4], p[5], p[6]])
                })
                .collect(),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        match self {
            Trajectory::Arc(a) if a.radius < 0.0 => Err(invalid("arc radius must be non-negative")),
            Trajectory::Rings { rings } if rings.is_empty() || rings.iter().any(|a| a.radius < 0.0) => {
                Err(invalid("rings must be non-empty with non-negative radii"))
            }
            Trajectory::Explicit { poses } if poses.is_empty() => Err(invalid("explicit trajectory has no poses")),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundTruthConfig {
    pub azimuth_rays: usize,
    pub elevation_rays: usize,
    /// Voxel size of the downsampling grid (first point per voxel kept).
    pub voxel: f64,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        Self {
            azimuth_rays: 300,
            elevation_rays: 60,
            voxel: 0.05,
        }
    }
}

/// Everything needed to generate a dataset; the scene file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub name: String,
    pub seed: u64,
    pub n_frames: usize,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    pub scene: AnalyticScene,
    #[serde(default)]
    pub radar: RadarModel,
    #[serde(default)]
    pub cross_section: CrossSectionModel,
    pub trajectory: Trajectory,
    #[serde(default)]
    pub ground_truth: GroundTruthConfig,
}

fn default_frame_rate() -> f64 {
    10.0
}

impl SceneFile {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: SceneFile = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scene serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.scene.validate()?;
        self.radar.validate()?;
        self.cross_section.validate()?;
        self.trajectory.validate()?;
        if !(self.frame_rate > 0.0) {
            return Err(invalid("frame_rate must be positive"));
        }
        if self.ground_truth.azimuth_rays == 0 || self.ground_truth.elevation_rays == 0 || !(self.ground_truth.voxel > 0.0) {
            return Err(invalid("ground-truth ray counts and voxel must be positive"));
        }
        Ok(())
    }
}

/// Noise-free record of one simulated return.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HitRecord {
    pub ray_index: u32,
    pub primitive: u32,
    pub world_point: Vec3,
    pub normal: Vec3,
    /// World-frame unit ray direction.
    pub direction: Vec3,
    pub range: f64,
    pub cos_theta: f64,
    pub spike: bool,
    pub sigma: f64,
    pub received_power: f64,
    /// Raw value before noise and quantization.
    pub clean_raw: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedFrame {
    pub frame: PointCloudFrame,
    /// One record per emitted point, same order.
    pub hits: Vec<HitRecord>,
}

fn trace_hit(
    scene: &AnalyticScene,
    radar: &RadarModel,
    xsec: &CrossSectionModel,
    pose: &Pose,
    ray_index: usize,
    dir_s: &Vec3,
) -> Option<HitRecord> {
    let dir = pose.transform_vector(dir_s);
    let (t, i) = scene.trace(&pose.translation, &dir, radar.max_range)?;
    let prim = &scene.primitives[i];
    let x = pose.translation + dir * t;
    let n = prim.shape.gradient(&x);
    let cos_theta = (-dir.dot(&n)).max(0.0);
    let spike = xsec.in_aperture(&prim.shape, &dir);
    let sigma = xsec.sigma(prim.reflectivity, cos_theta, spike);
    let p = radar.received_power(sigma, t);
    Some(HitRecord {
        ray_index: ray_index as u32,
        primitive: i as u32,
        world_point: x,
        normal: n,
        direction: dir,
        range: t,
        cos_theta,
        spike,
        sigma,
        received_power: p,
        clean_raw: radar.raw_value(p),
    })
}

/// Casts the radar's ray grid from `pose`, applying range and intensity
/// noise drawn from `rng` in ray order.
pub fn simulate_frame(
    scene: &AnalyticScene,
    radar: &RadarModel,
    xsec: &CrossSectionModel,
    pose: &Pose,
    timestamp: f64,
    rng: &mut ChaCha8Rng,
) -> SimulatedFrame {
    let dirs = radar.ray_directions(radar.azimuth_rays, radar.elevation_rays);
    let hits: Vec<HitRecord> = dirs
        .par_iter()
        .enumerate()
        .filter_map(|(k, d)| trace_hit(scene, radar, xsec, pose, k, d))
        .filter(|h| h.received_power >= radar.detection_floor)
        .collect();
    let range_noise = Normal::new(0.0, radar.noise_sigma_range).unwrap();
    let int_noise = Normal::new(0.0, radar.noise_sigma_intensity).unwrap();
    let mut points = Vec::with_capacity(hits.len());
    let mut intensities = Vec::with_capacity(hits.len());
    for h in &hits {
        let r = h.range + range_noise.sample(rng);
        points.push(dirs[h.ray_index as usize] * r);
        intensities.push(radar.quantize(h.clean_raw + int_noise.sample(rng)));
    }
    SimulatedFrame {
        frame: PointCloudFrame::new(timestamp, *pose, points, intensities),
        hits,
    }
}

/// Noise-free dense surface samples from every pose, voxel-downsampled.
pub fn ground_truth_points(scene: &AnalyticScene, radar: &RadarModel, poses: &[Pose], cfg: &GroundTruthConfig) -> Vec<Vec3> {
    let dirs = radar.ray_directions(cfg.azimuth_rays, cfg.elevation_rays);
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for pose in poses {
        let pts: Vec<Option<Vec3>> = dirs
            .par_iter()
            .map(|d| {
                let dir = pose.transform_vector(d);
                scene
                    .trace(&pose.translation, &dir, radar.max_range)
                    .map(|(t, _)| pose.translation + dir * t)
                    .filter(|p| scene.aabb.contains(p))
            })
            .collect();
        for p in pts.into_iter().flatten() {
            let key = ((p.x / cfg.voxel).floor() as i64, (p.y / cfg.voxel).floor() as i64, (p.z / cfg.voxel).floor() as i64);
            if seen.insert(key, ()).is_none() {
                out.push(p);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frames: Vec<SimulatedFrame>,
    pub ground_truth: Vec<Vec3>,
}

impl Dataset {
    pub fn point_frames(&self) -> Vec<PointCloudFrame> {
        self.frames.iter().map(|f| f.frame.clone()).collect()
    }
}

/// Simulates `spec.n_frames` frames along the trajectory. Frame `i` draws
/// noise from ChaCha8(seed) on stream `i`.
pub fn generate_dataset(spec: &SceneFile) -> Result<Dataset, SimError> {
    spec.validate()?;
    let poses = spec.trajectory.poses(spec.n_frames);
    for p in &poses {
        if !spec.scene.aabb.contains(&p.translation) {
            return Err(invalid(format!("sensor position {:?} lies outside the scene box", p.translation.as_slice())));
        }
        if spec.scene.sdf(&p.translation) <= 0.0 {
            return Err(invalid("sensor position lies inside geometry"));
        }
    }
    let frames = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            simulate_frame(&spec.scene, &spec.radar, &spec.cross_section, pose, i as f64 / spec.frame_rate, &mut rng)
        })
        .collect();
    let ground_truth = ground_truth_points(&spec.scene, &spec.radar, &poses, &spec.ground_truth);
    Ok(Dataset { frames, ground_truth })
}

pub const SCENE_FILE: &str = "scene.toml";
pub const HITS_DIR: &str = "hits";

/// Writes frames and poses, the ground-truth cloud, the scene file and a
/// per-frame hit sidecar (`hits/<timestamp>.ply`, world frame).
pub fn write_dataset(dir: &Path, spec: &SceneFile, data: &Dataset) -> Result<(), SimError> {
    io::write_dataset(dir, &data.point_frames())?;
    io::write_ply_points(&dir.join(io::GROUND_TRUTH_FILE), &data.ground_truth, None, &[])?;
    io::write_file(&dir.join(SCENE_FILE), spec.to_toml().as_bytes())?;
    for f in &data.frames {
        let h = &f.hits;
        let col = |g: &dyn Fn(&HitRecord) -> f64| h.iter().map(g).collect::<Vec<f64>>();
        let pts: Vec<Vec3> = h.iter().map(|r| r.world_point).collect();
        let clean = col(&|r| r.clean_raw);
        let cols = [
            ("nx", col(&|r| r.normal.x)),
            ("ny", col(&|r| r.normal.y)),
            ("nz", col(&|r| r.normal.z)),
            ("range", col(&|r| r.range)),
            ("cos_theta", col(&|r| r.cos_theta)),
            ("sigma", col(&|r| r.sigma)),
            ("received_power", col(&|r| r.received_power)),
            ("primitive", col(&|r| r.primitive as f64)),
            ("ray_index", col(&|r| r.ray_index as f64)),
        ];
        let extra: Vec<(&str, &[f64])> = cols.iter().map(|(n, v)| (*n, v.as_slice())).collect();
        io::write_ply_points(&dir.join(HITS_DIR).join(format!("{}.ply", f.frame.timestamp)), &pts, Some(&clean), &extra)?;
    }
    Ok(())
}

/// Built-in scenes.
pub mod presets {
    use super::*;

    fn aabb(min: [f64; 3], max: [f64; 3]) -> Aabb {
        Aabb::new(Vec3::from(min), Vec3::from(max)).unwrap()
    }

    /// Ground plane with a sphere floating above it, seen from a ring.
    pub fn plane_sphere() -> SceneFile {
        SceneFile {
            name: "plane_sphere".into(),
            seed: 7,
            n_frames: 20,
            frame_rate: 10.0,
            scene: AnalyticScene {
                primitives: vec![
                    Primitive {
                        shape: Shape::Plane {
                            point: Vec3::zeros(),
                            normal: Vec3::z(),
                        },
                        reflectivity: 0.6,
                    },
                    Primitive {
                        shape: Shape::Sphere {
                            center: Vec3::new(0.0, 0.0, 1.5),
                            radius: 1.0,
                        },
                        reflectivity: 0.9,
                    },
                ],
                aabb: aabb([-8.0, -8.0, -1.0], [8.0, 8.0, 7.0]),
            },
            radar: RadarModel::default(),
            cross_section: CrossSectionModel::default(),
            trajectory: Trajectory::Arc(ArcSpec {
                center: Vec3::new(0.0, 0.0, 6.0),
                radius: 3.0,
                start_deg: 0.0,
                end_deg: 360.0,
                target: Vec3::new(0.0, 0.0, 0.5),
                closed: true,
            }),
            ground_truth: GroundTruthConfig::default(),
        }
    }

    /// A floating sphere observed from three rings (below, level, above).
    pub fn sphere() -> SceneFile {
        let ring = |z: f64, offset: f64| ArcSpec {
            center: Vec3::new(0.0, 0.0, z),
            radius: 4.0,
            start_deg: offset,
            end_deg: offset + 360.0,
            target: Vec3::zeros(),
            closed: true,
        };
        SceneFile {
            name: "sphere".into(),
            seed: 11,
            n_frames: 30,
            frame_rate: 10.0,
            scene: AnalyticScene {
                primitives: vec![Primitive {
                    shape: Shape::Sphere {
                        center: Vec3::zeros(),
                        radius: 1.0,
                    },
                    reflectivity: 0.9,
                }],
                aabb: aabb([-5.0, -5.0, -5.0], [5.0, 5.0, 5.0]),
            },
            radar: RadarModel {
                azimuth_half_fov: 30f64.to_radians(),
                elevation_half_fov: 30f64.to_radians(),
                azimuth_rays: 45,
                elevation_rays: 45,
                max_range: 8.0,
                ..RadarModel::default()
            },
            cross_section: CrossSectionModel::default(),
            trajectory: Trajectory::Rings {
                rings: vec![ring(-3.0, 0.0), ring(0.0, 12.0), ring(3.0, 24.0)],
            },
            ground_truth: GroundTruthConfig {
                azimuth_rays: 150,
                elevation_rays: 150,
                voxel: 0.03,
            },
        }
    }

    /// A wall with a corner reflector; the sensor moves on a semicircle at
    /// constant range from the reflector.
    pub fn corner_reflector_wall() -> SceneFile {
        SceneFile {
            name: "corner_reflector_wall".into(),
            seed: 3,
            n_frames: 40,
            frame_rate: 10.0,
            scene: AnalyticScene {
                primitives: vec![
                    Primitive {
                        shape: Shape::Box {
                            center: Vec3::new(-0.25, 0.0, 1.5),
                            half_size: Vec3::new(0.25, 6.0, 1.5),
                        },
                        reflectivity: 0.7,
                    },
                    Primitive {
                        shape: Shape::CornerReflector {
                            center: Vec3::new(0.15, 0.0, 1.5),
                            boresight: Vec3::x(),
                            size: 0.3,
                        },
                        reflectivity: 1.0,
                    },
                ],
                aabb: aabb([-1.0, -7.0, -1.0], [7.0, 7.0, 4.0]),
            },
            radar: RadarModel {
                azimuth_half_fov: 50f64.to_radians(),
                elevation_half_fov: 12f64.to_radians(),
                azimuth_rays: 120,
                elevation_rays: 16,
                max_range: 10.0,
                ..RadarModel::default()
            },
            cross_section: CrossSectionModel::default(),
            trajectory: Trajectory::Arc(ArcSpec {
                center: Vec3::new(0.15, 0.0, 1.5),
                radius: 4.0,
                start_deg: -80.0,
                end_deg: 80.0,
                target: Vec3::new(0.15, 0.0, 1.5),
                closed: false,
            }),
            ground_truth: GroundTruthConfig {
                azimuth_rays: 300,
                elevation_rays: 40,
                voxel: 0.05,
            },
        }
    }

    pub fn by_name(name: &str) -> Option<SceneFile> {
        match name {
            "plane_sphere" => Some(plane_sphere()),
            "sphere" => Some(sphere()),
            "corner_reflector_wall" => Some(corner_reflector_wall()),
            _ => None,
        }
    }

    pub const NAMES: [&str; 3] = ["plane_sphere", "sphere", "corner_reflector_wall"];
}
