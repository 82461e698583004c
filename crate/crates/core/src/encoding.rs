//! Fixed input encodings: Fourier features for positions, real spherical
//! harmonics for viewing directions.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("viewing direction has norm {0}, expected 1")]
    NonUnitDirection(f64),
    #[error("invalid encoding config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierEncodingConfig {
    #[serde(rename = "L")]
    pub num_frequencies: usize,
    pub base_frequency: f64,
    pub include_input: bool,
}

impl Default for FourierEncodingConfig {
    fn default() -> Self {
        Self {
            num_frequencies: 6,
            base_frequency: 1.0,
            include_input: true,
        }
    }
}

impl FourierEncodingConfig {
    pub fn validate(&self) -> Result<(), EncodingError> {
        if self.num_frequencies == 0 {
            return Err(EncodingError::InvalidConfig("fourier L must be >= 1".into()));
        }
        if !(self.base_frequency > 0.0) {
            return Err(EncodingError::InvalidConfig("fourier base frequency must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        6 * self.num_frequencies + if self.include_input { 3 } else { 0 }
    }

    fn offset(&self) -> usize {
        if self.include_input {
            3
        } else {
            0
        }
    }

    fn omega(&self, j: usize) -> f64 {
        (1u64 << j) as f64 * PI * self.base_frequency
    }

    /// Layout: `[x, y, z]` (when `include_input`), then for each axis and
    /// each frequency `j`, the pair `sin(2^j π b x_a), cos(2^j π b x_a)`.
    pub fn encode_into(&self, x: &Vec3, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        if self.include_input {
            out[..3].copy_from_slice(x.as_slice());
        }
        let mut k = self.offset();
        for a in 0..3 {
            for j in 0..self.num_frequencies {
                let (s, c) = (self.omega(j) * x[a]).sin_cos();
                out[k] = s;
                out[k + 1] = c;
                k += 2;
            }
        }
    }

    pub fn encode(&self, x: &Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.encode_into(x, &mut out);
        out
    }

    /// Writes `∂encode/∂x_a` into `jac[a]` for each axis.
    pub fn jacobian_into(&self, x: &Vec3, jac: [&mut [f64]; 3]) {
        let off = self.offset();
        let per_axis = 2 * self.num_frequencies;
        for (a, d) in jac.into_iter().enumerate() {
            debug_assert_eq!(d.len(), self.dim());
            d.fill(0.0);
            if self.include_input {
                d[a] = 1.0;
            }
            let base = off + a * per_axis;
            for j in 0..self.num_frequencies {
                let w = self.omega(j);
                let (s, c) = (w * x[a]).sin_cos();
                d[base + 2 * j] = w * c;
                d[base + 2 * j + 1] = -w * s;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphericalHarmonicsConfig {
    /// Number of bands; the encoding has `degree²` entries.
    pub degree: usize,
}

impl Default for SphericalHarmonicsConfig {
    fn default() -> Self {
        Self { degree: 4 }
    }
}

pub const MAX_SH_DEGREE: usize = 4;

// Orthonormal real SH, no Condon-Shortley phase: band 1 is C1 * (y, z, x).
const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2_0: f64 = 1.092_548_430_592_079_2;
const C2_1: f64 = 0.315_391_565_252_520_05;
const C2_2: f64 = 0.546_274_215_296_039_6;
const C3_0: f64 = 0.590_043_589_926_643_5;
const C3_1: f64 = 2.890_611_442_640_554;
const C3_2: f64 = 0.457_045_799_464_465_8;
const C3_3: f64 = 0.373_176_332_590_115_4;
const C3_4: f64 = 1.445_305_721_320_277;

impl SphericalHarmonicsConfig {
    pub fn validate(&self) -> Result<(), EncodingError> {
        if self.degree == 0 || self.degree > MAX_SH_DEGREE {
            return Err(EncodingError::InvalidConfig(format!(
                "sh degree must be in 1..={MAX_SH_DEGREE}, got {}",
                self.degree
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.degree * self.degree
    }

    pub fn encode_into(&self, v: &Vec3, out: &mut [f64]) -> Result<(), EncodingError> {
        debug_assert_eq!(out.len(), self.dim());
        let norm = v.norm();
        if !((norm - 1.0).abs() <= 1e-3) {
            return Err(EncodingError::NonUnitDirection(norm));
        }
        let (x, y, z) = (v.x / norm, v.y / norm, v.z / norm);
        out[0] = C0;
        if self.degree > 1 {
            out[1] = C1 * y;
            out[2] = C1 * z;
            out[3] = C1 * x;
        }
        if self.degree > 2 {
            let (x2, y2, z2) = (x * x, y * y, z * z);
            out[4] = C2_0 * x * y;
            out[5] = C2_0 * y * z;
            out[6] = C2_1 * (3.0 * z2 - 1.0);
            out[7] = C2_0 * x * z;
            out[8] = C2_2 * (x2 - y2);
            if self.degree > 3 {
                out[9] = C3_0 * y * (3.0 * x2 - y2);
                out[10] = C3_1 * x * y * z;
                out[11] = C3_2 * y * (5.0 * z2 - 1.0);
                out[12] = C3_3 * z * (5.0 * z2 - 3.0);
                out[13] = C3_2 * x * (5.0 * z2 - 1.0);
                out[14] = C3_4 * z * (x2 - y2);
                out[15] = C3_0 * x * (x2 - 3.0 * y2);
            }
        }
        Ok(())
    }

    pub fn encode(&self, v: &Vec3) -> Result<Vec<f64>, EncodingError> {
        let mut out = vec![0.0; self.dim()];
        self.encode_into(v, &mut out)?;
        Ok(out)
    }
}

pub fn fourier_encode(x: &Vec3, cfg: &FourierEncodingConfig) -> Vec<f64> {
    cfg.encode(x)
}

pub fn sh_encode(v: &Vec3, cfg: &SphericalHarmonicsConfig) -> Result<Vec<f64>, EncodingError> {
    cfg.encode(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Rotation3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fourier_zero_input() {
        let cfg = FourierEncodingConfig {
            num_frequencies: 2,
            base_frequency: 1.0,
            include_input: false,
        };
        let e = cfg.encode(&Vec3::zeros());
        for pair in e.chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
    }

    #[test]
    fn fourier_dims() {
        let cfg = FourierEncodingConfig {
            num_frequencies: 6,
            base_frequency: 1.0,
            include_input: false,
        };
        assert_eq!(cfg.encode(&Vec3::zeros()).len(), 36);
        assert_eq!(FourierEncodingConfig::default().dim(), 39);
    }

    #[test]
    fn fourier_half_on_x_axis() {
        let cfg = FourierEncodingConfig {
            num_frequencies: 1,
            base_frequency: 1.0,
            include_input: false,
        };
        let e = cfg.encode(&Vec3::new(0.5, 0.0, 0.0));
        assert!((e[0] - 1.0).abs() < 1e-15);
        assert!(e[1].abs() < 1e-15);
        assert_eq!(&e[2..], &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn fourier_jacobian_matches_finite_differences() {
        let cfg = FourierEncodingConfig::default();
        let x = Vec3::new(0.3, -0.7, 0.11);
        let n = cfg.dim();
        let (mut jx, mut jy, mut jz) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        cfg.jacobian_into(&x, [&mut jx, &mut jy, &mut jz]);
        let h = 1e-6;
        for (a, jac) in [&jx, &jy, &jz].into_iter().enumerate() {
            let mut e = Vec3::zeros();
            e[a] = h;
            let fp = cfg.encode(&(x + e));
            let fm = cfg.encode(&(x - e));
            for i in 0..n {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - jac[i]).abs() < 1e-6 * (1.0 + jac[i].abs()), "axis {a} entry {i}");
            }
        }
    }

    #[test]
    fn fourier_injective_on_random_pairs() {
        let cfg = FourierEncodingConfig {
            num_frequencies: 1,
            base_frequency: 1.0,
            include_input: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let x = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let mut y = x;
            let a = rng.random_range(0..3);
            y[a] = rng.random_range(-1.0..1.0);
            if (y[a] - x[a]).abs() < 1e-6 {
                continue;
            }
            assert_ne!(cfg.encode(&x), cfg.encode(&y));
            for v in cfg.encode(&x) {
                assert!(v.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn sh_constant_band() {
        let cfg = SphericalHarmonicsConfig { degree: 1 };
        let e = cfg.encode(&Vec3::new(0.6, 0.0, 0.8)).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e[0] - 0.5 * (1.0 / PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sh_band_one_pattern() {
        let cfg = SphericalHarmonicsConfig { degree: 2 };
        let e = cfg.encode(&Vec3::z()).unwrap();
        assert_eq!(e[1], 0.0);
        assert!((e[2] - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
        assert_eq!(e[3], 0.0);
        assert_eq!(SphericalHarmonicsConfig::default().encode(&Vec3::x()).unwrap().len(), 16);
    }

    #[test]
    fn sh_rejects_or_normalizes() {
        let cfg = SphericalHarmonicsConfig::default();
        let near = cfg.encode(&Vec3::new(0.0, 0.0, 1.0005)).unwrap();
        let exact = cfg.encode(&Vec3::z()).unwrap();
        for (a, b) in near.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(cfg.encode(&Vec3::new(0.0, 0.0, 2.0)), Err(EncodingError::NonUnitDirection(_))));
        assert!(SphericalHarmonicsConfig { degree: 5 }.validate().is_err());
    }

    /// Fibonacci-sphere quadrature of Y_i·Y_j.
    #[test]
    fn sh_basis_is_orthonormal() {
        let cfg = SphericalHarmonicsConfig::default();
        let n = 200_000;
        let golden = PI * (3.0 - 5f64.sqrt());
        let mut gram = vec![0.0; 256];
        for k in 0..n {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            let e = cfg.encode(&Vec3::new(r * phi.cos(), r * phi.sin(), z)).unwrap();
            for i in 0..16 {
                for j in 0..16 {
                    gram[i * 16 + j] += e[i] * e[j];
                }
            }
        }
        let w = 4.0 * PI / n as f64;
        for i in 0..16 {
            for j in 0..16 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i * 16 + j] * w - expect).abs() < 1e-3, "({i},{j})");
            }
        }
    }

    #[test]
    fn sh_band_one_rotation_equivariance() {
        // Band 1 is C1·P·v with P the (x,y,z) -> (y,z,x) permutation, so its
        // Wigner block is P R Pᵀ.
        let cfg = SphericalHarmonicsConfig { degree: 2 };
        let p = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let r = Rotation3::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0));
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let e = cfg.encode(&v).unwrap();
            let er = cfg.encode(&(r * v)).unwrap();
            let band = Vec3::new(e[1], e[2], e[3]);
            let rotated = p * r.matrix() * p.transpose() * band;
            assert!((rotated - Vec3::new(er[1], er[2], er[3])).norm() < 1e-6);
            assert!((er[0] - e[0]).abs() < 1e-15);
        }
    }
}
