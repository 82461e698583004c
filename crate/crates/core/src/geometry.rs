//! Geometric primitives and frame preprocessing.
//!
//! Frames come off the sensor in the sensor coordinate system. Every point
//! carries the position of the sensor that emitted it (its ray origin), so
//! frames can be moved to the world frame and merged without losing the
//! information needed to build free-space samples along each ray.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("frame at t={timestamp}: {count} non-finite point(s), first at index {first}")]
    NonFinitePoints {
        timestamp: f64,
        count: usize,
        first: usize,
        indices: Vec<usize>,
    },
    #[error("frame at t={timestamp}: {points} points but {intensities} intensities")]
    LengthMismatch {
        timestamp: f64,
        points: usize,
        intensities: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Rigid transform taking sensor coordinates to world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from TUM-ordered components (`qx qy qz qw`). The
    /// quaternion is renormalized.
    pub fn from_tum(translation: [f64; 3], quat_xyzw: [f64; 4]) -> Self {
        let [qx, qy, qz, qw] = quat_xyzw;
        let q = nalgebra::Quaternion::new(qw, qx, qy, qz);
        Self {
            // Already-unit quaternions are kept bit-exact so files round-trip.
            rotation: if (q.norm_squared() - 1.0).abs() < 1e-12 {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::from_quaternion(q)
            },
            translation: Vec3::from(translation),
        }
    }

    /// `[qx, qy, qz, qw]`
    pub fn quat_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    /// Sensor whose +x axis looks from `eye` toward `target`, with +z as
    /// close to world up as possible.
    pub fn looking_at(eye: Vec3, target: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let up = Vec3::z();
        let left = {
            let l = up.cross(&forward);
            if l.norm() < 1e-9 {
                Vec3::y()
            } else {
                l.normalize()
            }
        };
        let new_up = forward.cross(&left);
        let m = nalgebra::Matrix3::from_columns(&[forward, left, new_up]);
        let rot = nalgebra::Rotation3::from_matrix_unchecked(m);
        Self {
            rotation: UnitQuaternion::from_rotation_matrix(&rot),
            translation: eye,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rinv = self.rotation.inverse();
        Self {
            rotation: rinv,
            translation: -(rinv * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.translation == Vec3::zeros() && self.rotation == UnitQuaternion::identity()
    }
}

/// One radar sweep.
///
/// `origins[i]` is the emitting sensor position of `points[i]`, expressed in
/// the same coordinate frame as the points. Freshly read frames are in the
/// sensor frame, so their origins are all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudFrame {
    pub timestamp: f64,
    pub sensor_pose: Pose,
    pub points: Vec<Vec3>,
    pub intensities: Vec<f64>,
    pub origins: Vec<Vec3>,
}

impl PointCloudFrame {
    /// A sensor-frame sweep: all ray origins at the sensor.
    pub fn new(timestamp: f64, sensor_pose: Pose, points: Vec<Vec3>, intensities: Vec<f64>) -> Self {
        let origins = vec![Vec3::zeros(); points.len()];
        Self {
            timestamp,
            sensor_pose,
            points,
            intensities,
            origins,
        }
    }

    pub fn empty(timestamp: f64, sensor_pose: Pose) -> Self {
        Self::new(timestamp, sensor_pose, Vec::new(), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.points.len() != self.intensities.len() || self.points.len() != self.origins.len() {
            return Err(GeometryError::LengthMismatch {
                timestamp: self.timestamp,
                points: self.points.len(),
                intensities: self.intensities.len(),
            });
        }
        Ok(())
    }

    /// Range of each point from its own ray origin.
    pub fn ranges(&self) -> impl Iterator<Item = f64> + '_ {
        self.points
            .iter()
            .zip(&self.origins)
            .map(|(p, o)| (p - o).norm())
    }

    fn retain_by(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut out = Self {
            timestamp: self.timestamp,
            sensor_pose: self.sensor_pose,
            points: Vec::new(),
            intensities: Vec::new(),
            origins: Vec::new(),
        };
        for i in 0..self.points.len() {
            if keep(i) {
                out.points.push(self.points[i]);
                out.intensities.push(self.intensities[i]);
                out.origins.push(self.origins[i]);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, GeometryError> {
        if (0..3).any(|a| !(min[a] <= max[a])) {
            return Err(GeometryError::InvalidParameter(format!(
                "aabb min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    /// Smallest box containing all points; `None` for an empty set.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Self {
            min: first,
            max: first,
        };
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        p.sup(&self.min).inf(&self.max)
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Self {
            min: self.min.add_scalar(-margin),
            max: self.max.add_scalar(margin),
        }
    }

    pub fn union(&self, other: &Aabb) -> Self {
        Self {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }
}

/// Moves a frame into world coordinates. The returned frame has an identity
/// sensor pose; each point keeps its sensor position in `origins`.
pub fn transform_to_world(frame: &PointCloudFrame) -> Result<PointCloudFrame, GeometryError> {
    frame.validate()?;
    let bad: Vec<usize> = frame
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.iter().all(|c| c.is_finite()))
        .map(|(i, _)| i)
        .collect();
    if let Some(&first) = bad.first() {
        return Err(GeometryError::NonFinitePoints {
            timestamp: frame.timestamp,
            count: bad.len(),
            first,
            indices: bad,
        });
    }
    let pose = &frame.sensor_pose;
    Ok(PointCloudFrame {
        timestamp: frame.timestamp,
        sensor_pose: Pose::identity(),
        points: frame.points.iter().map(|p| pose.transform_point(p)).collect(),
        intensities: frame.intensities.clone(),
        origins: frame.origins.iter().map(|o| pose.transform_point(o)).collect(),
    })
}

/// Drops every point whose range from its ray origin is `<= radius`.
pub fn near_field_filter(frame: &PointCloudFrame, radius: f64) -> Result<PointCloudFrame, GeometryError> {
    if !(radius > 0.0) {
        return Err(GeometryError::InvalidParameter(format!(
            "near-field radius must be positive, got {radius}"
        )));
    }
    frame.validate()?;
    let ranges: Vec<f64> = frame.ranges().collect();
    Ok(frame.retain_by(|i| ranges[i] > radius))
}

/// Merges groups of `k` consecutive frames into single world-frame frames.
///
/// Without `overlap` the groups are disjoint and a trailing partial group is
/// kept; with `overlap` a window of `k` frames starts at every frame index
/// until a window reaches the last frame.
pub fn accumulate_frames(
    frames: &[PointCloudFrame],
    k: usize,
    overlap: bool,
) -> Result<Vec<PointCloudFrame>, GeometryError> {
    if k == 0 {
        return Err(GeometryError::InvalidParameter("accumulation window must be >= 1".into()));
    }
    let world: Vec<PointCloudFrame> = frames.iter().map(transform_to_world).collect::<Result<_, _>>()?;
    if k == 1 {
        return Ok(world);
    }
    let stride = if overlap { 1 } else { k };
    let mut out = Vec::new();
    let mut start = 0;
    while start < world.len() {
        let end = (start + k).min(world.len());
        let group = &world[start..end];
        let mut merged = PointCloudFrame::empty(group[0].timestamp, Pose::identity());
        for f in group {
            merged.points.extend_from_slice(&f.points);
            merged.intensities.extend_from_slice(&f.intensities);
            merged.origins.extend_from_slice(&f.origins);
        }
        out.push(merged);
        if overlap && end == world.len() && start + k >= world.len() {
            break;
        }
        start += stride;
    }
    Ok(out)
}

/// Affine map from raw sensor intensity units to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityNormalization {
    pub min: f64,
    pub max: f64,
}

impl IntensityNormalization {
    pub fn new(min: f64, max: f64) -> Result<Self, GeometryError> {
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(GeometryError::InvalidParameter(format!(
                "intensity range requires min < max, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    /// Dataset-wide range rounded outward to integers.
    pub fn from_frames(frames: &[PointCloudFrame]) -> Result<Self, GeometryError> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in frames.iter().flat_map(|f| f.intensities.iter()) {
            lo = lo.min(*i);
            hi = hi.max(*i);
        }
        let (lo, hi) = (lo.floor(), hi.ceil());
        if lo == hi {
            return Self::new(lo, lo + 1.0);
        }
        Self::new(lo, hi)
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        ((raw - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, unit: f64) -> f64 {
        self.min + unit * (self.max - self.min)
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

pub fn normalize_intensities(frames: &[PointCloudFrame], norm: &IntensityNormalization) -> Vec<PointCloudFrame> {
    frames
        .iter()
        .map(|f| PointCloudFrame {
            intensities: f.intensities.iter().map(|&i| norm.normalize(i)).collect(),
            ..f.clone()
        })
        .collect()
}
