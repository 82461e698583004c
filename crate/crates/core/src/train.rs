//! Joint optimization of the SDF and intensity networks.

use std::io::Write;
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, GridUpstream, RadarField};
use crate::geometry::Vec3;
use crate::nets::{sigmoid, MlpGradients};
use crate::optim::Adam;
use crate::sampling::{loss_label, TrainingSample};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training needs a nonempty sample pool")]
    EmptyPool,
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at iteration {iteration}; model rolled back to iteration {restored}")]
    NonFiniteLoss { iteration: usize, restored: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub freeze_sdf_after: usize,
    pub sigmoid_scale: f64,
    pub intensity_loss_weight: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            learning_rate: 1e-3,
            freeze_sdf_after: 1000,
            sigmoid_scale: 0.05,
            intensity_loss_weight: 1.0,
            batch_size: 4096,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.freeze_sdf_after > self.iterations {
            return bad("freeze_sdf_after must not exceed iterations");
        }
        if !(self.sigmoid_scale > 0.0) {
            return bad("sigmoid_scale must be positive");
        }
        if !(self.intensity_loss_weight >= 0.0) {
            return bad("intensity_loss_weight must be nonnegative");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

const P_CLAMP: f64 = 1e-7;

/// Binary cross-entropy between `sigmoid(d_pred/σ)` and `sigmoid(d_label/σ)`.
pub fn sdf_loss(d_pred: f64, d_label: f64, sigma: f64) -> f64 {
    let p = sigmoid(d_pred / sigma).clamp(P_CLAMP, 1.0 - P_CLAMP);
    let q = sigmoid(d_label / sigma);
    -(q * p.ln() + (1.0 - q) * (1.0 - p).ln())
}

/// `∂ sdf_loss / ∂ d_pred = (p − q) / σ`.
pub fn sdf_loss_grad(d_pred: f64, d_label: f64, sigma: f64) -> f64 {
    (sigmoid(d_pred / sigma) - sigmoid(d_label / sigma)) / sigma
}

pub fn intensity_loss(pred: f64, label: f64) -> f64 {
    (pred - label).abs()
}

pub fn intensity_loss_grad(pred: f64, label: f64) -> f64 {
    if pred > label {
        1.0
    } else if pred < label {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub total_loss: f64,
    pub sdf_loss: f64,
    pub intensity_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub iterations: Vec<IterationLog>,
    pub num_samples: usize,
    pub grid_vertices: usize,
    pub map_size_bytes: usize,
    /// Not deterministic; kept apart from everything else.
    pub wall_time_secs: f64,
}

impl TrainingReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,total_loss,sdf_loss,intensity_loss")?;
        for l in &self.iterations {
            writeln!(w, "{},{},{},{}", l.iteration, l.total_loss, l.sdf_loss, l.intensity_loss)?;
        }
        Ok(())
    }

    pub fn final_loss(&self) -> Option<&IterationLog> {
        self.iterations.last()
    }
}

/// Batch losses (means) and where gradients went.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    pub sdf: f64,
    pub intensity: f64,
}

struct ChunkResult {
    sdf_grads: Option<MlpGradients>,
    int_grads: MlpGradients,
    grid: Option<GridUpstream>,
    sdf_loss: f64,
    int_loss: f64,
}

/// Per-sample SDF outputs kept once the SDF network is frozen.
struct FrozenCache {
    d: Vec<f64>,
    geometry: Vec<f64>,
    width: usize,
}

const CHUNK: usize = 256;
const SNAPSHOT_EVERY: usize = 250;
const CACHE_LIMIT_FLOATS: usize = 64 << 20;

struct Ctx<'a> {
    cfg: &'a TrainerConfig,
    truncation: f64,
    /// SDF network and grid receive gradients.
    sdf_active: bool,
    /// Divides every per-sample loss to form the batch mean.
    batch_len: f64,
}

fn compute_chunk(
    field: &RadarField,
    samples: &[&TrainingSample],
    cached: Option<(&[f64], &[f64])>,
    ctx: &Ctx,
) -> Result<ChunkResult, FieldError> {
    let n = samples.len();
    let xs: Vec<Vec3> = samples.iter().map(|s| s.position).collect();
    let dirs: Vec<Vec3> = samples.iter().map(|s| s.view_dir).collect();
    let sigma = ctx.cfg.sigmoid_scale;
    let lambda = ctx.cfg.intensity_loss_weight;

    let (mut sdf_batch, d, geometry) = match cached {
        Some((d, g)) => (None, d.to_vec(), g.to_vec()),
        None => {
            let b = field.sdf_forward_batch(&xs, field.needs_normals())?;
            let d: Vec<f64> = (0..n).map(|i| b.d(i)).collect();
            let g = field.geometry_inputs(&b);
            (Some(b), d, g)
        }
    };

    let mut sdf_loss_sum = 0.0;
    let mut d_adj = vec![0.0; n];
    for (i, s) in samples.iter().enumerate() {
        let label = loss_label(s, ctx.truncation);
        sdf_loss_sum += sdf_loss(d[i], label, sigma);
        d_adj[i] = sdf_loss_grad(d[i], label, sigma) / ctx.batch_len;
    }

    let mut int_tape = field.intensity_forward_batch(&xs, &dirs, &geometry)?;
    let pred = int_tape.output().to_vec();
    let mut int_loss_sum = 0.0;
    let mut out_adj = vec![0.0; n];
    for (i, s) in samples.iter().enumerate() {
        int_loss_sum += intensity_loss(pred[i], s.intensity_label);
        out_adj[i] = lambda * intensity_loss_grad(pred[i], s.intensity_label) / ctx.batch_len;
    }
    let mut int_grads = field.intensity_net.zero_gradients();
    let (in_adj, _) = field.intensity_net.backward(&mut int_tape, &out_adj, None, &mut int_grads)?;

    let (mut sdf_grads, mut grid) = (None, None);
    if ctx.sdf_active {
        let batch = sdf_batch.as_mut().expect("SDF pass recorded while training it");
        let (mut g_adj, mut n_adj) = (None, None);
        if field.config.network.intensity_grad_to_sdf && field.config.geometry_width() > 0 {
            let (dd, gg, nn) = field.split_geometry_adjoint(&in_adj, n);
            for (a, b) in d_adj.iter_mut().zip(&dd) {
                *a += b;
            }
            g_adj = gg;
            n_adj = nn;
        }
        let mut grads = field.sdf_net.zero_gradients();
        grid = Some(field.sdf_backward(batch, &d_adj, g_adj.as_deref(), n_adj.as_deref(), &mut grads)?);
        sdf_grads = Some(grads);
    }
    Ok(ChunkResult {
        sdf_grads,
        int_grads,
        grid,
        sdf_loss: sdf_loss_sum,
        int_loss: int_loss_sum,
    })
}

/// Forward and backward over one batch. Gradient buffers of both networks
/// and the grid are overwritten; with `sdf_frozen` the SDF network and grid
/// get none. Every vertex the batch touches must already be allocated.
pub fn batch_gradients(
    field: &mut RadarField,
    batch: &[TrainingSample],
    cfg: &TrainerConfig,
    truncation: f64,
    sdf_frozen: bool,
) -> Result<BatchLoss, FieldError> {
    let refs: Vec<&TrainingSample> = batch.iter().collect();
    let ctx = Ctx {
        cfg,
        truncation,
        sdf_active: !sdf_frozen,
        batch_len: batch.len() as f64,
    };
    field.sdf_net.zero_grad();
    field.intensity_net.zero_grad();
    field.grid.zero_grad();
    let chunks = run_chunks(field, &refs, None, &ctx)?;
    Ok(reduce_chunks(field, chunks, batch.len())?)
}

/// Mean total loss `sdf + λ·intensity` over `batch`, forward only.
pub fn batch_loss(field: &RadarField, batch: &[TrainingSample], cfg: &TrainerConfig, truncation: f64) -> Result<f64, FieldError> {
    let xs: Vec<Vec3> = batch.iter().map(|s| s.position).collect();
    let dirs: Vec<Vec3> = batch.iter().map(|s| s.view_dir).collect();
    let b = field.sdf_forward_batch(&xs, field.needs_normals())?;
    let geo = field.geometry_inputs(&b);
    let pred = field.intensity_forward_batch(&xs, &dirs, &geo)?;
    let mut total = 0.0;
    for (i, s) in batch.iter().enumerate() {
        total += sdf_loss(b.d(i), loss_label(s, truncation), cfg.sigmoid_scale)
            + cfg.intensity_loss_weight * intensity_loss(pred.output()[i], s.intensity_label);
    }
    Ok(total / batch.len() as f64)
}

fn run_chunks(
    field: &RadarField,
    refs: &[&TrainingSample],
    cache: Option<(&FrozenCache, &[usize])>,
    ctx: &Ctx,
) -> Result<Vec<ChunkResult>, FieldError> {
    refs.par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| match cache {
            Some((c, idx)) => {
                let idx = &idx[ci * CHUNK..ci * CHUNK + chunk.len()];
                let d: Vec<f64> = idx.iter().map(|&i| c.d[i]).collect();
                let mut g = Vec::with_capacity(idx.len() * c.width);
                for &i in idx {
                    g.extend_from_slice(&c.geometry[i * c.width..(i + 1) * c.width]);
                }
                compute_chunk(field, chunk, Some((&d, &g)), ctx)
            }
            None => compute_chunk(field, chunk, None, ctx),
        })
        .collect()
}

/// Sums chunk gradients in chunk order so the result is independent of
/// scheduling.
fn reduce_chunks(field: &mut RadarField, chunks: Vec<ChunkResult>, batch_len: usize) -> Result<BatchLoss, FieldError> {
    let (mut sdf, mut int) = (0.0, 0.0);
    for c in chunks {
        sdf += c.sdf_loss;
        int += c.int_loss;
        field.intensity_net.grads.add_assign(&c.int_grads);
        if let Some(g) = &c.sdf_grads {
            field.sdf_net.grads.add_assign(g);
        }
        if let Some(up) = &c.grid {
            up.apply(&mut field.grid)?;
        }
    }
    Ok(BatchLoss {
        sdf: sdf / batch_len as f64,
        intensity: int / batch_len as f64,
    })
}

fn build_cache(field: &RadarField, pool: &[TrainingSample]) -> Result<FrozenCache, FieldError> {
    let width = field.config.geometry_width();
    let normals = field.needs_normals();
    let parts: Vec<(Vec<f64>, Vec<f64>)> = pool
        .par_chunks(512)
        .map(|c| {
            let xs: Vec<Vec3> = c.iter().map(|s| s.position).collect();
            let b = field.sdf_forward_batch(&xs, normals)?;
            Ok(((0..c.len()).map(|i| b.d(i)).collect(), field.geometry_inputs(&b)))
        })
        .collect::<Result<_, FieldError>>()?;
    let mut d = Vec::with_capacity(pool.len());
    let mut geometry = Vec::with_capacity(pool.len() * width);
    for (a, b) in parts {
        d.extend(a);
        geometry.extend(b);
    }
    Ok(FrozenCache { d, geometry, width })
}

/// Runs the full schedule on `field`. On a non-finite loss the field is
/// restored to the last snapshot and an error is returned.
pub fn train(
    field: &mut RadarField,
    pool: &[TrainingSample],
    cfg: &TrainerConfig,
    truncation: f64,
) -> Result<TrainingReport, TrainError> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(TrainError::EmptyPool);
    }
    let start = Instant::now();
    for s in pool {
        field.grid.allocate_for(&s.position);
    }
    info!(
        "training on {} samples, {} grid vertices, {} iterations",
        pool.len(),
        field.grid.num_vertices(),
        cfg.iterations
    );
    let adam = Adam::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut snapshot = (0, field.clone());
    let mut cache: Option<FrozenCache> = None;
    let cache_fits = pool.len() * (field.config.geometry_width() + 1) <= CACHE_LIMIT_FLOATS;
    let frozen_iters = cfg.iterations - cfg.freeze_sdf_after;
    let cache_worth_it = pool.len() <= frozen_iters.saturating_mul(cfg.batch_size);

    for it in 0..cfg.iterations {
        let frozen = it >= cfg.freeze_sdf_after;
        if frozen && cache.is_none() && cache_fits && cache_worth_it {
            cache = Some(build_cache(field, pool)?);
        }
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..pool.len())).collect();
        let refs: Vec<&TrainingSample> = idx.iter().map(|&i| &pool[i]).collect();
        let ctx = Ctx {
            cfg,
            truncation,
            sdf_active: !frozen,
            batch_len: cfg.batch_size as f64,
        };
        field.sdf_net.zero_grad();
        field.intensity_net.zero_grad();
        field.grid.zero_grad();
        let chunks = run_chunks(field, &refs, cache.as_ref().map(|c| (c, idx.as_slice())), &ctx);
        let loss = match chunks.and_then(|c| reduce_chunks(field, c, cfg.batch_size)) {
            Ok(l) => l,
            Err(FieldError::Net(e)) => {
                warn!("iteration {it}: {e}");
                *field = snapshot.1;
                return Err(TrainError::NonFiniteLoss {
                    iteration: it,
                    restored: snapshot.0,
                });
            }
            Err(e) => return Err(e.into()),
        };
        let total = loss.sdf + cfg.intensity_loss_weight * loss.intensity;
        if !total.is_finite() || !field.intensity_net.grads.is_finite() || !field.sdf_net.grads.is_finite() {
            warn!("iteration {it}: non-finite loss or gradient");
            *field = snapshot.1;
            return Err(TrainError::NonFiniteLoss {
                iteration: it,
                restored: snapshot.0,
            });
        }
        let t = it as u64 + 1;
        if !frozen {
            field.sdf_net.adam_step(&adam, t);
            field.grid.adam_step(&adam, t);
        }
        if cfg.intensity_loss_weight > 0.0 {
            field.intensity_net.adam_step(&adam, t);
        }
        log.push(IterationLog {
            iteration: it,
            total_loss: total,
            sdf_loss: loss.sdf,
            intensity_loss: loss.intensity,
        });
        if (it + 1) % SNAPSHOT_EVERY == 0 {
            snapshot = (it + 1, field.clone());
        }
        if (it + 1) % 500 == 0 {
            info!("iteration {}: sdf {:.5} intensity {:.5}", it + 1, loss.sdf, loss.intensity);
        }
    }
    Ok(TrainingReport {
        iterations: log,
        num_samples: pool.len(),
        grid_vertices: field.grid.num_vertices(),
        map_size_bytes: field.map_size_bytes(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
