//! Run configuration and the end-to-end stages: prepare frames, train,
//! mesh, evaluate, and the files each stage writes.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, EvalConfig, EvalError, IntensityMetrics, ReconstructionMetrics};
use crate::field::{Ablation, EncodingConfig, FieldConfig, FieldError, NetworkConfig, RadarField};
use crate::geometry::{self, Aabb, GeometryError, IntensityNormalization, PointCloudFrame, Vec3};
use crate::grid::GridConfig;
use crate::io::{self, IoError};
use crate::mesh::{self, MeshError, TriangleMesh, ViewDirPolicy, VoxelGridSpec};
use crate::sampling::{self, SamplerConfig};
use crate::spatial::PointIndex;
use crate::synthetic::SimError;
use crate::train::{self, TrainError, TrainerConfig, TrainingReport};

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl Error {
    /// Errors caused by bad input or configuration rather than by the run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Io(IoError::File { .. })
                | Error::Sim(SimError::InvalidScene(_) | SimError::Parse(_) | SimError::Io(IoError::File { .. }))
                | Error::Train(TrainError::InvalidConfig(_))
                | Error::Field(FieldError::InvalidConfig(_))
        )
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub max_pose_skew: f64,
    /// Every `holdout`-th frame (1-based) is kept out of training; 0 disables.
    pub holdout: usize,
    /// Train on every `stride`-th remaining frame.
    pub stride: usize,
    pub near_field_radius: f64,
    pub accumulate: usize,
    pub accumulate_overlap: bool,
    /// Raw intensity range for normalization; taken from the training
    /// frames when absent.
    pub intensity_range: Option<[f64; 2]>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            output: PathBuf::from("out"),
            max_pose_skew: 0.05,
            holdout: 10,
            stride: 1,
            near_field_radius: 2.5,
            accumulate: 5,
            accumulate_overlap: false,
            intensity_range: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MesherConfig {
    pub voxel_size: f64,
    pub mask_radius: f64,
    pub view: ViewDirPolicy,
    pub color_by_normals: bool,
}

impl Default for MesherConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            mask_radius: 0.5,
            view: ViewDirPolicy::AgainstNormal,
            color_by_normals: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub ablation: Ablation,
    pub data: DataConfig,
    pub encoding: EncodingConfig,
    pub grid: GridConfig,
    pub network: NetworkConfig,
    pub sampler: SamplerConfig,
    pub trainer: TrainerConfig,
    pub mesher: MesherConfig,
    pub eval: EvalConfig,
}

/// Environment variables `RADMAP__SECTION__KEY=value` override config keys.
pub const ENV_PREFIX: &str = "RADMAP__";

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `RADMAP__A__B=value` pairs. Path segments match keys
    /// case-insensitively; values are parsed as TOML, falling back to a
    /// plain string.
    pub fn with_overrides<I, K, V>(self, vars: I) -> Result<Self, Error>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut root: toml::Table = toml::from_str(&self.to_toml()).map_err(config_err)?;
        let mut touched = false;
        for (k, v) in vars {
            let Some(path) = k.as_ref().strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let segs: Vec<&str> = path.split("__").collect();
            set_path(&mut root, &segs, parse_value(v.as_ref())).map_err(|m| Error::Config(format!("{}: {m}", k.as_ref())))?;
            touched = true;
        }
        if !touched {
            return Ok(self);
        }
        toml::Value::Table(root).try_into().map_err(config_err)
    }

    pub fn from_env(self) -> Result<Self, Error> {
        self.with_overrides(std::env::vars())
    }

    /// Field configuration with the ablation applied.
    pub fn field_config(&self) -> FieldConfig {
        let mut network = self.network.clone();
        self.ablation.apply(&mut network);
        FieldConfig {
            encoding: self.encoding,
            grid: self.grid,
            network,
        }
    }

    /// Trainer configuration seeded from the run seed.
    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            seed: self.seed,
            ..self.trainer
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.field_config().validate().map_err(config_err)?;
        self.sampler.validate().map_err(config_err)?;
        self.trainer_config().validate().map_err(config_err)?;
        let d = &self.data;
        if d.stride == 0 || d.accumulate == 0 {
            return Err(Error::Config("data.stride and data.accumulate must be >= 1".into()));
        }
        if !(d.near_field_radius > 0.0) || !(d.max_pose_skew >= 0.0) {
            return Err(Error::Config("data.near_field_radius must be positive".into()));
        }
        if let Some([lo, hi]) = d.intensity_range {
            IntensityNormalization::new(lo, hi)?;
        }
        let m = &self.mesher;
        if !(m.voxel_size > 0.0 && m.mask_radius > 0.0) {
            return Err(Error::Config("mesher.voxel_size and mesher.mask_radius must be positive".into()));
        }
        let e = &self.eval;
        if !(e.threshold > 0.0 && e.accuracy_discard > 0.0 && e.completion_truncation > 0.0) || e.mesh_samples == 0 {
            return Err(Error::Config("eval thresholds and mesh_samples must be positive".into()));
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, segs: &[&str], value: toml::Value) -> Result<(), String> {
    let (head, rest) = segs.split_first().ok_or("empty key")?;
    let key = table
        .keys()
        .find(|k| k.eq_ignore_ascii_case(head))
        .cloned()
        .unwrap_or_else(|| head.to_ascii_lowercase());
    if rest.is_empty() {
        table.insert(key, value);
        return Ok(());
    }
    match table.entry(key).or_insert_with(|| toml::Value::Table(toml::Table::new())) {
        toml::Value::Table(t) => set_path(t, rest, value),
        _ => Err(format!("'{head}' is not a section")),
    }
}

/// Frames split for training and held-out evaluation.
#[derive(Clone, Debug)]
pub struct PreparedData {
    /// World frame, near-field filtered, accumulated, normalized intensities.
    pub train: Vec<PointCloudFrame>,
    /// World frame, near-field filtered, raw intensities.
    pub held_out: Vec<PointCloudFrame>,
    pub normalization: IntensityNormalization,
    /// Bounds of the training points and sensor origins.
    pub bounds: Aabb,
}

impl PreparedData {
    pub fn train_points(&self) -> Vec<Vec3> {
        self.train.iter().flat_map(|f| f.points.iter().copied()).collect()
    }
}

/// Indices of held-out frames and of the frames used for training.
pub fn split_frames(n: usize, holdout: usize, stride: usize) -> (Vec<usize>, Vec<usize>) {
    let (held, rest): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| holdout > 0 && (i + 1) % holdout == 0);
    let train = rest.into_iter().enumerate().filter(|(k, _)| k % stride.max(1) == 0).map(|(_, i)| i).collect();
    (held, train)
}

pub fn prepare(frames: &[PointCloudFrame], cfg: &RunConfig) -> Result<PreparedData, Error> {
    let d = &cfg.data;
    let (held_idx, train_idx) = split_frames(frames.len(), d.holdout, d.stride);
    let world = |f: &PointCloudFrame| -> Result<PointCloudFrame, Error> {
        let f = geometry::near_field_filter(f, d.near_field_radius)?;
        Ok(geometry::transform_to_world(&f)?)
    };
    let train_raw: Vec<PointCloudFrame> = train_idx.iter().map(|&i| world(&frames[i])).collect::<Result<_, _>>()?;
    let held_out: Vec<PointCloudFrame> = held_idx.iter().map(|&i| world(&frames[i])).collect::<Result<_, _>>()?;
    if train_raw.iter().all(|f| f.is_empty()) {
        return Err(Error::Config("no training points after filtering".into()));
    }
    let normalization = match d.intensity_range {
        Some([lo, hi]) => IntensityNormalization::new(lo, hi)?,
        None => IntensityNormalization::from_frames(&train_raw)?,
    };
    let accumulated = geometry::accumulate_frames(&train_raw, d.accumulate, d.accumulate_overlap)?;
    let train = geometry::normalize_intensities(&accumulated, &normalization);
    let bounds = Aabb::from_points(train.iter().flat_map(|f| f.points.iter().chain(&f.origins))).expect("non-empty");
    info!(
        "{} training frames ({} after accumulation), {} held out",
        train_idx.len(),
        train.len(),
        held_out.len()
    );
    Ok(PreparedData {
        train,
        held_out,
        normalization,
        bounds,
    })
}

/// Trains a fresh field on the prepared frames.
pub fn train_field(cfg: &RunConfig, data: &PreparedData) -> Result<(RadarField, TrainingReport), Error> {
    cfg.validate()?;
    let pool = sampling::build_pool(&data.train, &cfg.sampler, cfg.seed);
    let aabb = data.bounds.expanded(cfg.sampler.truncation + cfg.mesher.voxel_size);
    let mut field = RadarField::new(cfg.field_config(), aabb, cfg.seed)?;
    let report = train::train(&mut field, &pool, &cfg.trainer_config(), cfg.sampler.truncation)?;
    Ok((field, report))
}

/// Marching cubes over the field's box, masked to the training points,
/// with de-normalized vertex intensities.
pub fn mesh_field(
    field: &RadarField,
    mesher: &MesherConfig,
    mask_points: Vec<Vec3>,
    normalization: &IntensityNormalization,
) -> Result<TriangleMesh, Error> {
    let index = PointIndex::new(mask_points, mesher.mask_radius.max(mesher.voxel_size));
    let spec = VoxelGridSpec {
        aabb: field.aabb(),
        voxel_size: mesher.voxel_size,
        mask_radius: mesher.mask_radius,
    };
    let mut m = mesh::extract_mesh(field, &spec, Some(&index))?;
    if m.is_empty() {
        warn!("the extracted mesh is empty");
        return Ok(m);
    }
    mesh::attach_intensity(&mut m, mesher.view, |xs, dirs| {
        Ok(field.predict_intensities(xs, dirs)?.into_iter().map(|u| normalization.denormalize(u)).collect())
    })?;
    Ok(m)
}

/// Everything the `eval` stage reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub reconstruction: ReconstructionMetrics,
    pub intensity: Option<IntensityMetrics>,
    pub fourier_frequencies: usize,
    pub sh_degree: usize,
}

pub fn evaluate(
    mesh: &TriangleMesh,
    gt: &[Vec3],
    eval_box: &Aabb,
    cfg: &RunConfig,
    field: Option<(&RadarField, &[PointCloudFrame], &IntensityNormalization)>,
) -> Result<EvalReport, Error> {
    let reconstruction = eval::evaluate_mesh(mesh, gt, eval_box, &cfg.eval, field.map(|f| f.0.map_size_bytes()))?;
    let intensity = match field {
        Some((f, held, norm)) if held.iter().any(|h| !h.is_empty()) => Some(eval::held_out_intensity_errors(f, held, norm)?),
        _ => None,
    };
    Ok(EvalReport {
        reconstruction,
        intensity,
        fourier_frequencies: cfg.encoding.fourier.num_frequencies,
        sh_degree: cfg.encoding.sh.degree,
    })
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MAP_FILE: &str = "map.bin";
pub const CONFIG_FILE: &str = "run_config.toml";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TRAIN_REPORT_FILE: &str = "report.json";
pub const MASK_FILE: &str = "mask_points.ply";
pub const MESH_FILE: &str = "mesh.ply";
pub const METRICS_FILE: &str = "metrics.json";

/// Summary written next to the checkpoint; `wall_time_secs` is the only
/// field that differs between identical runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub normalization: IntensityNormalization,
    pub num_samples: usize,
    pub grid_vertices: usize,
    pub map_size_bytes: usize,
    pub final_total_loss: Option<f64>,
    pub train_frames: usize,
    pub held_out_frames: usize,
    pub wall_time_secs: f64,
}

/// Writes checkpoint, map, config snapshot, loss log, summary and the
/// training points used as mesh mask.
pub fn write_training_outputs(
    dir: &Path,
    cfg: &RunConfig,
    field: &RadarField,
    report: &TrainingReport,
    data: &PreparedData,
) -> Result<TrainSummary, Error> {
    io::write_file(&dir.join(CHECKPOINT_FILE), &field.checkpoint_bytes())?;
    io::write_file(&dir.join(MAP_FILE), &field.grid.serialize())?;
    io::write_file(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).expect("writing to memory");
    io::write_file(&dir.join(TRAIN_LOG_FILE), &csv)?;
    io::write_ply_points(&dir.join(MASK_FILE), &data.train_points(), None, &[])?;
    let summary = TrainSummary {
        normalization: data.normalization,
        num_samples: report.num_samples,
        grid_vertices: report.grid_vertices,
        map_size_bytes: field.map_size_bytes(),
        final_total_loss: report.final_loss().map(|l| l.total_loss),
        train_frames: data.train.len(),
        held_out_frames: data.held_out.len(),
        wall_time_secs: report.wall_time_secs,
    };
    write_json(&dir.join(TRAIN_REPORT_FILE), &summary)?;
    Ok(summary)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    Ok(io::write_file(path, s.as_bytes())?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Io(IoError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Error> {
    fs::read(path).map_err(|source| {
        Error::Io(IoError::File {
            path: path.to_path_buf(),
            source,
        })
    })
}

/// Loads the field from `model.ckpt` and `map.bin` in `dir`.
pub fn load_field(dir: &Path) -> Result<RadarField, Error> {
    Ok(RadarField::from_bytes(&read_bytes(&dir.join(CHECKPOINT_FILE))?, &read_bytes(&dir.join(MAP_FILE))?)?)
}

pub fn write_mesh(path: &Path, mesh: &TriangleMesh, color_by_normals: bool) -> Result<(), Error> {
    let mut buf = Vec::new();
    mesh::write_ply(mesh, &mut buf, color_by_normals).expect("writing to memory");
    Ok(io::write_file(path, &buf)?)
}

/// Reads a triangle mesh PLY (normals and intensities are not restored).
pub fn read_mesh(path: &Path) -> Result<TriangleMesh, Error> {
    let ply = io::read_ply_points(path)?;
    Ok(TriangleMesh {
        vertices: ply.points,
        triangles: ply.triangles,
        normals: None,
        intensities: None,
    })
}

/// Results of [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineOutputs {
    pub field: RadarField,
    pub mesh: TriangleMesh,
    pub report: EvalReport,
    pub summary: TrainSummary,
    pub data: PreparedData,
}

/// Train, reload from the stored files, mesh and evaluate; everything is
/// written under `out`.
pub fn run_pipeline(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<PipelineOutputs, Error> {
    cfg.validate()?;
    let frames = io::read_dataset(dataset, cfg.data.max_pose_skew)?;
    let data = prepare(&frames, cfg)?;
    let (field, report) = train_field(cfg, &data)?;
    let summary = write_training_outputs(out, cfg, &field, &report, &data)?;
    let field = load_field(out)?;
    let mesh = mesh_field(&field, &cfg.mesher, data.train_points(), &data.normalization)?;
    write_mesh(&out.join(MESH_FILE), &mesh, cfg.mesher.color_by_normals)?;
    let gt_path = dataset.join(io::GROUND_TRUTH_FILE);
    let report = if gt_path.exists() && !mesh.is_empty() {
        let gt = io::read_ply_points(&gt_path)?.points;
        let eval_box = data.bounds.expanded(cfg.mesher.mask_radius);
        let r = evaluate(&mesh, &gt, &eval_box, cfg, Some((&field, &data.held_out, &data.normalization)))?;
        write_json(&out.join(METRICS_FILE), &r)?;
        Some(r)
    } else {
        warn!("skipping evaluation: no ground truth or empty mesh");
        None
    };
    Ok(PipelineOutputs {
        report: report.ok_or_else(|| Error::Config("pipeline produced no evaluation".into()))?,
        field,
        mesh,
        summary,
        data,
    })
}
