//! Reconstruction and intensity metrics.

use std::io::Write;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, RadarField};
use crate::geometry::{Aabb, IntensityNormalization, PointCloudFrame, Vec3};
use crate::mesh::TriangleMesh;
use crate::spatial::{brute_force_nearest, PointIndex};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot sample an empty mesh")]
    EmptyMesh,
    #[error("no ground-truth points inside the evaluation box")]
    EmptyGroundTruth,
    #[error("no mesh samples inside the evaluation box")]
    EmptySamples,
    #[error("gamma fit needs at least 10 angles, got {0}")]
    TooFewAngles(usize),
    #[error("all angles are identical; the gamma fit is degenerate")]
    DegenerateAngles,
    #[error("no held-out points to evaluate intensities on")]
    NoHeldOut,
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Distance below which an error counts as a hit (accuracy, completion, F-score).
    pub threshold: f64,
    /// Accuracy distances above this are discarded as outliers.
    pub accuracy_discard: f64,
    /// Completion distances are capped here before averaging.
    pub completion_truncation: f64,
    pub mesh_samples: usize,
    pub seed: u64,
    pub histogram_bins: usize,
    /// Use the O(N·M) search instead of the spatial index.
    pub brute_force: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 0.2,
            accuracy_discard: 0.4,
            completion_truncation: 2.0,
            mesh_samples: 100_000,
            seed: 0,
            histogram_bins: 90,
            brute_force: false,
        }
    }
}

/// Area-weighted uniform samples on a mesh surface.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>, EvalError> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(EvalError::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random_range(0.0..total);
        let t = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let [a, b, c] = mesh.triangle(t);
        let (r1, r2): (f64, f64) = (rng.random(), rng.random());
        let s = r1.sqrt();
        out.push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
    }
    Ok(out)
}

/// Nearest-neighbour distances from `queries` to `targets`, `None` beyond `cap`.
fn capped_distances(queries: &[Vec3], targets: &[Vec3], cap: f64, brute_force: bool) -> Vec<Option<f64>> {
    if brute_force {
        return queries
            .par_iter()
            .map(|q| brute_force_nearest(targets, q).map(|(_, d)| d).filter(|d| *d <= cap))
            .collect();
    }
    let cell = (cap.min(1.0)).max(0.05);
    let index = PointIndex::new(targets.to_vec(), cell);
    queries.par_iter().map(|q| index.nearest_within(q, cap).map(|(_, d)| d)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMetrics {
    pub acc_error: f64,
    pub acc_ratio: f64,
    pub acc_outlier_ratio: f64,
}

/// Mesh samples → ground truth. The ratio denominators include outliers.
/// With every sample discarded, `acc_error` reports the discard distance.
pub fn accuracy_metrics(samples: &[Vec3], gt: &[Vec3], cfg: &EvalConfig) -> Result<AccuracyMetrics, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    if samples.is_empty() {
        return Err(EvalError::EmptySamples);
    }
    let d = capped_distances(samples, gt, cfg.accuracy_discard, cfg.brute_force);
    let (mut sum, mut kept, mut hits) = (0.0, 0usize, 0usize);
    for x in d.iter().flatten() {
        sum += x;
        kept += 1;
        if *x <= cfg.threshold {
            hits += 1;
        }
    }
    let n = samples.len() as f64;
    Ok(AccuracyMetrics {
        acc_error: if kept > 0 { sum / kept as f64 } else { cfg.accuracy_discard },
        acc_ratio: 100.0 * hits as f64 / n,
        acc_outlier_ratio: 100.0 * (samples.len() - kept) as f64 / n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionMetrics {
    pub comp_error: f64,
    pub comp_ratio: f64,
}

/// Ground truth → mesh samples, distances capped at the truncation.
pub fn completion_metrics(gt: &[Vec3], samples: &[Vec3], cfg: &EvalConfig) -> Result<CompletionMetrics, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    if samples.is_empty() {
        return Err(EvalError::EmptySamples);
    }
    let d = capped_distances(gt, samples, cfg.completion_truncation, cfg.brute_force);
    let (mut sum, mut hits) = (0.0, 0usize);
    for x in &d {
        let x = x.unwrap_or(cfg.completion_truncation);
        sum += x;
        if x <= cfg.threshold {
            hits += 1;
        }
    }
    let n = gt.len() as f64;
    Ok(CompletionMetrics {
        comp_error: sum / n,
        comp_ratio: 100.0 * hits as f64 / n,
    })
}

/// Harmonic mean of the two ratios.
pub fn f_score(acc_ratio: f64, comp_ratio: f64) -> f64 {
    if acc_ratio + comp_ratio <= 0.0 {
        0.0
    } else {
        2.0 * acc_ratio * comp_ratio / (acc_ratio + comp_ratio)
    }
}

/// Angle between the face normals across every edge shared by exactly two
/// triangles.
pub fn adjacent_angles(mesh: &TriangleMesh) -> Vec<f64> {
    let mut edges: Vec<((u32, u32), u32)> = Vec::with_capacity(mesh.triangles.len() * 3);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            edges.push(((a.min(b), a.max(b)), t as u32));
        }
    }
    edges.sort_unstable();
    let mut out = Vec::new();
    let mut i = 0;
    while i < edges.len() {
        let mut j = i;
        while j < edges.len() && edges[j].0 == edges[i].0 {
            j += 1;
        }
        if j - i == 2 {
            let n1 = mesh.face_normal(edges[i].1 as usize);
            let n2 = mesh.face_normal(edges[i + 1].1 as usize);
            out.push(n1.cross(&n2).norm().atan2(n1.dot(&n2)));
        }
        i = j;
    }
    out
}

/// Histogram over `[0, π]` as `(lower_edge, upper_edge, count)` rows.
pub fn angle_histogram(angles: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let bins = bins.max(1);
    let w = std::f64::consts::PI / bins as f64;
    let mut counts = vec![0usize; bins];
    for a in angles {
        counts[((a / w) as usize).min(bins - 1)] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (i as f64 * w, (i + 1) as f64 * w, c)).collect()
}

pub fn write_histogram_csv<W: Write>(hist: &[(f64, f64, usize)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "bin_lower,bin_upper,count")?;
    for (lo, hi, c) in hist {
        writeln!(w, "{lo},{hi},{c}")?;
    }
    Ok(())
}

/// Digamma ψ(x) for x > 0: recurrence up to x ≥ 12, then the asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let f = 1.0 / (x * x);
    acc + x.ln() - 0.5 / x
        - f * (1.0 / 12.0 - f * (1.0 / 120.0 - f * (1.0 / 252.0 - f * (1.0 / 240.0 - f * (1.0 / 132.0)))))
}

/// Trigamma ψ'(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let f = 1.0 / (x * x);
    acc + 1.0 / x + f / 2.0 + f / x * (1.0 / 6.0 - f * (1.0 / 30.0 - f * (1.0 / 42.0 - f * (1.0 / 30.0))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMethod {
    MaximumLikelihood,
    Moments,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub shape: f64,
    pub scale: f64,
    pub mean: f64,
    pub variance: f64,
    pub method: GammaMethod,
    /// `ln k − ψ(k) − (ln mean − mean ln x)` at the returned shape.
    pub stationarity_residual: f64,
}

pub const ZERO_ANGLE_FLOOR: f64 = 1e-9;

/// Maximum-likelihood Gamma(k, θ) fit by Newton's method on
/// `ln k − ψ(k) = ln mean(x) − mean(ln x)`, starting from Minka's
/// closed-form approximation. Zeros are raised to [`ZERO_ANGLE_FLOOR`].
pub fn gamma_fit(values: &[f64]) -> Result<GammaFit, EvalError> {
    if values.len() < 10 {
        return Err(EvalError::TooFewAngles(values.len()));
    }
    let n = values.len() as f64;
    let xs: Vec<f64> = values.iter().map(|v| v.max(ZERO_ANGLE_FLOOR)).collect();
    let mean = xs.iter().sum::<f64>() / n;
    let mean_ln = xs.iter().map(|x| x.ln()).sum::<f64>() / n;
    let s = mean.ln() - mean_ln;
    if !(s > 0.0) {
        return Err(EvalError::DegenerateAngles);
    }
    let residual = |k: f64| k.ln() - digamma(k) - s;
    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    let mut converged = false;
    for _ in 0..100 {
        let f = residual(k);
        let df = 1.0 / k - trigamma(k);
        let mut next = k - f / df;
        if !(next > 0.0) || !next.is_finite() {
            next = k / 2.0;
        }
        let done = (next - k).abs() <= 1e-14 * k;
        k = next;
        if done {
            converged = true;
            break;
        }
    }
    if converged && residual(k).abs() < 1e-8 {
        let scale = mean / k;
        return Ok(GammaFit {
            shape: k,
            scale,
            mean,
            variance: k * scale * scale,
            method: GammaMethod::MaximumLikelihood,
            stationarity_residual: residual(k),
        });
    }
    warn!("gamma MLE did not converge; falling back to moments");
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let k = mean * mean / var;
    Ok(GammaFit {
        shape: k,
        scale: var / mean,
        mean,
        variance: var,
        method: GammaMethod::Moments,
        stationarity_residual: residual(k),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityMetrics {
    pub mae: f64,
    pub medae: f64,
    pub count: usize,
}

/// Mean and median absolute error; the median of an even count averages
/// the two middle values.
pub fn intensity_errors(pred: &[f64], truth: &[f64]) -> Result<IntensityMetrics, EvalError> {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return Err(EvalError::NoHeldOut);
    }
    let mut e: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    let mae = e.iter().sum::<f64>() / e.len() as f64;
    e.sort_by(f64::total_cmp);
    let m = e.len() / 2;
    let medae = if e.len() % 2 == 1 { e[m] } else { 0.5 * (e[m - 1] + e[m]) };
    Ok(IntensityMetrics {
        mae,
        medae,
        count: e.len(),
    })
}

/// Predicts every point of the (world-frame, raw-intensity) held-out frames
/// from its own sensor origin and compares in raw units.
pub fn held_out_intensity_errors(
    field: &RadarField,
    frames: &[PointCloudFrame],
    norm: &IntensityNormalization,
) -> Result<IntensityMetrics, EvalError> {
    let mut xs = Vec::new();
    let mut dirs = Vec::new();
    let mut truth = Vec::new();
    for f in frames {
        for ((p, o), i) in f.points.iter().zip(&f.origins).zip(&f.intensities) {
            let v = p - o;
            if v.norm() == 0.0 {
                continue;
            }
            xs.push(*p);
            dirs.push(v.normalize());
            truth.push(*i);
        }
    }
    let pred: Vec<f64> = field.predict_intensities(&xs, &dirs)?.into_iter().map(|u| norm.denormalize(u)).collect();
    intensity_errors(&pred, &truth)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetrics {
    pub acc_error: f64,
    pub acc_ratio: f64,
    pub acc_outlier_ratio: f64,
    pub comp_error: f64,
    pub comp_ratio: f64,
    pub f_score: f64,
    pub gamma_shape: Option<f64>,
    pub gamma_mean: Option<f64>,
    pub gamma_variance: Option<f64>,
    pub map_size_bytes: Option<usize>,
    pub mesh_samples: usize,
    pub gt_points: usize,
    /// Ratios count discarded accuracy outliers as misses.
    pub acc_ratio_includes_outliers: bool,
}

impl ReconstructionMetrics {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            w,
            "acc_error,acc_ratio,acc_outlier_ratio,comp_error,comp_ratio,f_score,gamma_shape,gamma_mean,gamma_variance,map_size_bytes"
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            self.acc_error,
            self.acc_ratio,
            self.acc_outlier_ratio,
            self.comp_error,
            self.comp_ratio,
            self.f_score,
            opt(self.gamma_shape),
            opt(self.gamma_mean),
            opt(self.gamma_variance),
            self.map_size_bytes.map(|v| v.to_string()).unwrap_or_default()
        )
    }
}

/// Full geometric metric suite of `mesh` against ground-truth points,
/// restricted to `eval_box`.
pub fn evaluate_mesh(
    mesh: &TriangleMesh,
    gt: &[Vec3],
    eval_box: &Aabb,
    cfg: &EvalConfig,
    map_size_bytes: Option<usize>,
) -> Result<ReconstructionMetrics, EvalError> {
    let samples: Vec<Vec3> = sample_mesh(mesh, cfg.mesh_samples, cfg.seed)?
        .into_iter()
        .filter(|p| eval_box.contains(p))
        .collect();
    let gt: Vec<Vec3> = gt.iter().filter(|p| eval_box.contains(p)).copied().collect();
    let acc = accuracy_metrics(&samples, &gt, cfg)?;
    let comp = completion_metrics(&gt, &samples, cfg)?;
    let gamma = match gamma_fit(&adjacent_angles(mesh)) {
        Ok(g) => Some(g),
        Err(e) => {
            warn!("skipping gamma fit: {e}");
            None
        }
    };
    Ok(ReconstructionMetrics {
        acc_error: acc.acc_error,
        acc_ratio: acc.acc_ratio,
        acc_outlier_ratio: acc.acc_outlier_ratio,
        comp_error: comp.comp_error,
        comp_ratio: comp.comp_ratio,
        f_score: f_score(acc.acc_ratio, comp.comp_ratio),
        gamma_shape: gamma.map(|g| g.shape),
        gamma_mean: gamma.map(|g| g.mean),
        gamma_variance: gamma.map(|g| g.variance),
        map_size_bytes,
        mesh_samples: samples.len(),
        gt_points: gt.len(),
        acc_ratio_includes_outliers: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Gamma};
    use statrs::function::gamma as sg;

    fn square() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            normals: None,
            intensities: None,
        }
    }

    #[test]
    fn samples_inside_single_triangle() {
        let mut m = square();
        m.triangles.truncate(1);
        for p in sample_mesh(&m, 2000, 1).unwrap() {
            assert!(p.y >= 0.0 && p.y <= p.x && p.x <= 1.0 && p.z == 0.0);
        }
    }

    #[test]
    fn samples_follow_area() {
        let m = TriangleMesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(3.0, 0.0, 1.0), Vec3::new(4.0, 0.0, 1.0), Vec3::new(3.0, 3.0, 1.0)],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
            normals: None,
            intensities: None,
        };
        let n = 40_000;
        let s = sample_mesh(&m, n, 2).unwrap();
        let first = s.iter().filter(|p| p.z == 0.0).count() as f64;
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        assert!((first - 0.25 * n as f64).abs() < 3.0 * sd, "{first}");
    }

    #[test]
    fn unit_square_mean() {
        let s = sample_mesh(&square(), 1_000_000, 3).unwrap();
        let m = s.iter().sum::<Vec3>() / s.len() as f64;
        assert!((m.x - 0.5).abs() < 0.002 && (m.y - 0.5).abs() < 0.002);
    }

    #[test]
    fn empty_mesh_errors() {
        assert!(matches!(sample_mesh(&TriangleMesh::default(), 10, 0), Err(EvalError::EmptyMesh)));
    }

    #[test]
    fn accuracy_hand_example() {
        let gt = vec![Vec3::zeros()];
        let samples = vec![Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0)];
        for brute_force in [false, true] {
            let cfg = EvalConfig {
                brute_force,
                ..Default::default()
            };
            let a = accuracy_metrics(&samples, &gt, &cfg).unwrap();
            assert!((a.acc_error - 0.1).abs() < 1e-15);
            assert_eq!(a.acc_outlier_ratio, 50.0);
            assert_eq!(a.acc_ratio, 50.0);
        }
    }

    #[test]
    fn identical_sets_are_perfect() {
        let pts: Vec<Vec3> = (0..100).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let cfg = EvalConfig::default();
        let a = accuracy_metrics(&pts, &pts, &cfg).unwrap();
        let c = completion_metrics(&pts, &pts, &cfg).unwrap();
        assert_eq!((a.acc_error, a.acc_ratio, a.acc_outlier_ratio), (0.0, 100.0, 0.0));
        assert_eq!((c.comp_error, c.comp_ratio), (0.0, 100.0));
    }

    #[test]
    fn completion_truncates() {
        let c = completion_metrics(&[Vec3::new(5.0, 0.0, 0.0)], &[Vec3::zeros()], &EvalConfig::default()).unwrap();
        assert_eq!(c.comp_error, 2.0);
        assert_eq!(c.comp_ratio, 0.0);
    }

    #[test]
    fn f_score_values() {
        assert_eq!(f_score(100.0, 100.0), 100.0);
        assert_eq!(f_score(0.0, 50.0), 0.0);
        assert_eq!(f_score(0.0, 0.0), 0.0);
        assert!((f_score(73.6180, 66.2283) - 69.7279).abs() < 0.01);
        assert_eq!(f_score(30.0, 70.0), f_score(70.0, 30.0));
    }

    #[test]
    fn flat_quad_single_zero_angle() {
        assert_eq!(adjacent_angles(&square()), vec![0.0]);
    }

    #[test]
    fn cube_angles() {
        let v: Vec<Vec3> = (0..8).map(|i| Vec3::new((i & 1) as f64, (i >> 1 & 1) as f64, (i >> 2 & 1) as f64)).collect();
        let t = vec![
            [0, 2, 3], [0, 3, 1], [4, 5, 7], [4, 7, 6], [0, 1, 5], [0, 5, 4],
            [2, 6, 7], [2, 7, 3], [0, 4, 6], [0, 6, 2], [1, 3, 7], [1, 7, 5],
        ];
        let m = TriangleMesh {
            vertices: v,
            triangles: t,
            normals: None,
            intensities: None,
        };
        assert_eq!(m.boundary_edge_count(), 0);
        let a = adjacent_angles(&m);
        assert_eq!(a.len(), 18);
        for x in a {
            assert!(x.abs() < 1e-12 || (x - std::f64::consts::FRAC_PI_2).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn special_functions_match_statrs() {
        for x in [1e-3, 0.1, 0.5, 1.0, 2.5, 7.0, 30.0, 1e3] {
            assert!((digamma(x) - sg::digamma(x)).abs() < 1e-10 * digamma(x).abs().max(1.0), "psi({x})");
            let h = 1e-5 * x;
            let fd = (sg::digamma(x + h) - sg::digamma(x - h)) / (2.0 * h);
            assert!((trigamma(x) - fd).abs() < 1e-5 * trigamma(x), "psi1({x})");
        }
        // ψ'(1) = π²/6
        assert!((trigamma(1.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_recovers_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (k, theta) in [(2.0, 0.5), (1.0, 0.5), (0.7239, 0.3103 / 0.7239)] {
            let d = Gamma::new(k, theta).unwrap();
            let xs: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
            let g = gamma_fit(&xs).unwrap();
            assert_eq!(g.method, GammaMethod::MaximumLikelihood);
            assert!((g.shape / k - 1.0).abs() < 0.05, "{} vs {k}", g.shape);
            assert!((g.scale / theta - 1.0).abs() < 0.05);
            assert!((g.mean - g.shape * g.scale).abs() < 1e-12);
            assert!((g.variance - g.shape * g.scale * g.scale).abs() < 1e-12);
            assert!(g.stationarity_residual.abs() < 1e-8);
        }
    }

    #[test]
    fn gamma_fit_errors() {
        assert!(matches!(gamma_fit(&[0.1; 5]), Err(EvalError::TooFewAngles(5))));
        assert!(matches!(gamma_fit(&[0.1; 20]), Err(EvalError::DegenerateAngles)));
        // Exact zeros are floored rather than rejected.
        let mut v = vec![0.0; 3];
        v.extend((1..30).map(|i| i as f64 * 0.01));
        assert!(gamma_fit(&v).is_ok());
    }

    #[test]
    fn intensity_error_arithmetic() {
        let m = intensity_errors(&[1.0, 2.0, 9.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((m.mae, m.medae), (4.0, 2.0));
        let p = intensity_errors(&[3.0, 4.0], &[3.0, 4.0]).unwrap();
        assert_eq!((p.mae, p.medae), (0.0, 0.0));
        assert!(intensity_errors(&[], &[]).is_err());
    }

    #[test]
    fn histogram_counts_everything() {
        let h = angle_histogram(&[0.0, 0.1, 3.2, std::f64::consts::PI], 10);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 4);
        assert_eq!(h[0].2, 2);
        assert_eq!(h[9].2, 2);
    }
}
