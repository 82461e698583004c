//! Turns radar detections into labeled training samples along each sensor ray.
//!
//! Sign convention, used consistently by the loss and mesh extraction:
//! positive SDF is the sensor (free-space) side, negative is behind the
//! surface. A sample at range `t` on a ray that hit at range `r` gets the
//! label `r - t`.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, PointCloudFrame, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingSample {
    pub position: Vec3,
    /// Unit direction from the sensor to the generating detection.
    pub view_dir: Vec3,
    pub sdf_label: f64,
    pub intensity_label: f64,
    pub is_free_space: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(rename = "N_s")]
    pub near_surface: usize,
    #[serde(rename = "N_f")]
    pub free_space: usize,
    pub truncation: f64,
    pub free_space_margin: f64,
    /// Free-space samples start this far from the sensor.
    pub near_clip: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            near_surface: 6,
            free_space: 6,
            truncation: 0.3,
            free_space_margin: 0.3,
            near_clip: 2.5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.truncation > 0.0) || !(self.free_space_margin >= 0.0) || !(self.near_clip >= 0.0) {
            return Err(GeometryError::InvalidParameter(format!(
                "sampler needs truncation > 0, margin >= 0, near_clip >= 0 (got {}, {}, {})",
                self.truncation, self.free_space_margin, self.near_clip
            )));
        }
        Ok(())
    }
}

/// Samples for one detection at `x` seen from `origin`. `intensity` is
/// already normalized to `[0, 1]`.
pub fn sample_point<R: Rng>(origin: &Vec3, x: &Vec3, intensity: f64, cfg: &SamplerConfig, rng: &mut R) -> Vec<TrainingSample> {
    let ray = x - origin;
    let r = ray.norm();
    if !(r > 0.0) || !r.is_finite() {
        warn!("skipping degenerate ray from {origin:?} to {x:?}");
        return Vec::new();
    }
    let dir = ray / r;
    let mut out = Vec::with_capacity(cfg.near_surface + cfg.free_space);
    for _ in 0..cfg.near_surface {
        let delta = rng.random_range(-cfg.truncation..=cfg.truncation);
        out.push(TrainingSample {
            position: x + dir * delta,
            view_dir: dir,
            sdf_label: -delta,
            intensity_label: intensity,
            is_free_space: false,
        });
    }
    let far = r - cfg.truncation - cfg.free_space_margin;
    if far > cfg.near_clip {
        for _ in 0..cfg.free_space {
            let t = rng.random_range(cfg.near_clip..far);
            out.push(TrainingSample {
                position: origin + dir * t,
                view_dir: dir,
                sdf_label: r - t,
                intensity_label: 0.0,
                is_free_space: true,
            });
        }
    } else if cfg.free_space > 0 {
        debug!("ray of length {r:.3} m too short for free-space samples");
    }
    out
}

/// Label actually used by the SDF loss: free-space labels are clamped to
/// the truncation band.
pub fn loss_label(sample: &TrainingSample, truncation: f64) -> f64 {
    if sample.is_free_space {
        sample.sdf_label.min(truncation)
    } else {
        sample.sdf_label
    }
}

/// Sample pool over all frames (world coordinates, normalized intensities).
/// Each frame draws from its own stream so the pool does not depend on
/// thread scheduling.
pub fn build_pool(frames: &[PointCloudFrame], cfg: &SamplerConfig, seed: u64) -> Vec<TrainingSample> {
    let per_frame: Vec<Vec<TrainingSample>> = frames
        .par_iter()
        .enumerate()
        .map(|(fi, f)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(fi as u64 + 1);
            let mut out = Vec::with_capacity(f.len() * (cfg.near_surface + cfg.free_space));
            for ((p, o), i) in f.points.iter().zip(&f.origins).zip(&f.intensities) {
                out.extend(sample_point(o, p, *i, cfg, &mut rng));
            }
            out
        })
        .collect();
    per_frame.concat()
}
