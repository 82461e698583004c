use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};

use radmap::field::Ablation;
use radmap::geometry::{Aabb, IntensityNormalization, Vec3};
use radmap::io;
use radmap::pipeline::{self, Error, RunConfig, TrainSummary};
use radmap::synthetic::{self, SceneFile, SimError};

#[derive(Parser, Debug)]
#[command(name = "radmap", version, about = "Neural implicit radar mapping")]
struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from a scene file.
    Simulate {
        /// Scene TOML file, or a built-in preset name.
        scene: String,
        #[arg(long, short)]
        out: PathBuf,
        /// Override the scene's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a map on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Extract a mesh from a trained map.
    Mesh {
        /// Directory written by `train`.
        model: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        voxel: Option<f64>,
        #[arg(long)]
        mask_radius: Option<f64>,
        #[arg(long, value_enum)]
        color: Option<Coloring>,
    },
    /// Evaluate a mesh against ground-truth points.
    Eval {
        mesh: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Evaluation box `minx,miny,minz,maxx,maxy,maxz` (default: gt bounds).
        #[arg(long, value_parser = parse_box)]
        r#box: Option<Aabb>,
        #[arg(long, short)]
        out: PathBuf,
        /// Model directory, for map size and held-out intensity errors.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset the model was trained on, for held-out intensity errors.
        #[arg(long, requires = "model")]
        data: Option<PathBuf>,
        #[arg(long)]
        brute_force: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Simulate (optionally), train, mesh and evaluate.
    Pipeline {
        /// Existing dataset directory.
        #[arg(long, conflicts_with = "scene")]
        data: Option<PathBuf>,
        /// Scene file or preset to simulate first into `<out>/dataset`.
        #[arg(long)]
        scene: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_enum)]
        color: Option<Coloring>,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Args, Debug)]
struct RunOpts {
    /// Run configuration TOML; `RADMAP__SECTION__KEY` variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Hold out every N-th frame (0 keeps all).
    #[arg(long)]
    holdout: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Coloring {
    Normals,
}

fn parse_box(s: &str) -> Result<Aabb, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect::<Result<_, _>>()?;
    if v.len() != 6 {
        return Err("expected six comma-separated numbers".into());
    }
    Aabb::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])).map_err(|e| e.to_string())
}

fn load_config(opts: &RunOpts) -> Result<RunConfig, Error> {
    let base = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.from_env()?;
    if let Some(a) = opts.ablation {
        cfg.ablation = a;
    }
    if let Some(h) = opts.holdout {
        cfg.data.holdout = h;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(n) = opts.iterations {
        cfg.trainer.iterations = n;
        cfg.trainer.freeze_sdf_after = cfg.trainer.freeze_sdf_after.min(n);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_scene(scene: &str) -> Result<SceneFile, Error> {
    let path = Path::new(scene);
    if !path.exists() {
        if let Some(s) = synthetic::presets::by_name(scene) {
            return Ok(s);
        }
    }
    Ok(SceneFile::load(path)?)
}

fn simulate(scene: &str, out: &Path, seed: Option<u64>) -> Result<(), Error> {
    let mut spec = load_scene(scene)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = synthetic::generate_dataset(&spec)?;
    synthetic::write_dataset(out, &spec, &data)?;
    info!(
        "wrote {} frames and {} ground-truth points to {}",
        data.frames.len(),
        data.ground_truth.len(),
        out.display()
    );
    Ok(())
}

fn train(data: &Path, out: &Path, opts: &RunOpts) -> Result<(), Error> {
    let mut cfg = load_config(opts)?;
    cfg.data.dataset = data.to_path_buf();
    cfg.data.output = out.to_path_buf();
    let frames = io::read_dataset(data, cfg.data.max_pose_skew)?;
    let prepared = pipeline::prepare(&frames, &cfg)?;
    let (field, report) = pipeline::train_field(&cfg, &prepared)?;
    let s = pipeline::write_training_outputs(out, &cfg, &field, &report, &prepared)?;
    info!("map size {} bytes, final loss {:?}", s.map_size_bytes, s.final_total_loss);
    Ok(())
}

fn mesh(model: &Path, out: &Path, voxel: Option<f64>, mask_radius: Option<f64>, color: Option<Coloring>) -> Result<(), Error> {
    let mut cfg = RunConfig::load(&model.join(pipeline::CONFIG_FILE))?.from_env()?;
    if let Some(v) = voxel {
        cfg.mesher.voxel_size = v;
    }
    if let Some(r) = mask_radius {
        cfg.mesher.mask_radius = r;
    }
    if color.is_some() {
        cfg.mesher.color_by_normals = true;
    }
    cfg.validate()?;
    let field = pipeline::load_field(model)?;
    let summary: TrainSummary = pipeline::read_json(&model.join(pipeline::TRAIN_REPORT_FILE))?;
    let mask = io::read_ply_points(&model.join(pipeline::MASK_FILE))?.points;
    let m = pipeline::mesh_field(&field, &cfg.mesher, mask, &summary.normalization)?;
    pipeline::write_mesh(out, &m, cfg.mesher.color_by_normals)?;
    info!("{} vertices, {} triangles", m.vertices.len(), m.triangles.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    mesh_path: &Path,
    gt: &Path,
    eval_box: Option<Aabb>,
    out: &Path,
    model: Option<&Path>,
    data: Option<&Path>,
    brute_force: bool,
    config: Option<&Path>,
) -> Result<(), Error> {
    let mut cfg = match (config, model) {
        (Some(c), _) => RunConfig::load(c)?,
        (None, Some(m)) => RunConfig::load(&m.join(pipeline::CONFIG_FILE))?,
        (None, None) => RunConfig::default(),
    }
    .from_env()?;
    cfg.eval.brute_force |= brute_force;
    let m = pipeline::read_mesh(mesh_path)?;
    let gt = io::read_ply_points(gt)?.points;
    let eval_box = match eval_box {
        Some(b) => b,
        None => Aabb::from_points(&gt).ok_or_else(|| Error::Config("ground truth is empty".into()))?,
    };
    let field = model.map(pipeline::load_field).transpose()?;
    let report = match (&field, model, data) {
        (Some(f), Some(mdir), Some(d)) => {
            let summary: TrainSummary = pipeline::read_json(&mdir.join(pipeline::TRAIN_REPORT_FILE))?;
            let frames = io::read_dataset(d, cfg.data.max_pose_skew)?;
            let prepared = pipeline::prepare(&frames, &cfg)?;
            let norm: IntensityNormalization = summary.normalization;
            pipeline::evaluate(&m, &gt, &eval_box, &cfg, Some((f, &prepared.held_out, &norm)))?
        }
        (Some(f), _, _) => {
            let mut r = pipeline::evaluate(&m, &gt, &eval_box, &cfg, None)?;
            r.reconstruction.map_size_bytes = Some(f.map_size_bytes());
            r
        }
        _ => pipeline::evaluate(&m, &gt, &eval_box, &cfg, None)?,
    };
    pipeline::write_json(out, &report)?;
    let r = &report.reconstruction;
    println!(
        "acc {:.4} m ({:.2}%), comp {:.4} m ({:.2}%), F {:.2}%",
        r.acc_error, r.acc_ratio, r.comp_error, r.comp_ratio, r.f_score
    );
    Ok(())
}

fn run_pipeline(data: Option<&Path>, scene: Option<&str>, out: &Path, color: Option<Coloring>, opts: &RunOpts) -> Result<(), Error> {
    let mut cfg = load_config(opts)?;
    if color.is_some() {
        cfg.mesher.color_by_normals = true;
    }
    let dataset = match (data, scene) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(s)) => {
            let d = out.join("dataset");
            simulate(s, &d, None)?;
            d
        }
        (None, None) => cfg.data.dataset.clone(),
    };
    cfg.data.dataset = dataset.clone();
    cfg.data.output = out.to_path_buf();
    let o = pipeline::run_pipeline(&cfg, &dataset, out)?;
    let r = &o.report.reconstruction;
    println!(
        "acc {:.4} m, comp {:.4} m, F {:.2}%, map {} bytes",
        r.acc_error,
        r.comp_error,
        r.f_score,
        o.summary.map_size_bytes
    );
    if let Some(i) = &o.report.intensity {
        println!("held-out intensity MAE {:.3}, MedAE {:.3} ({} points)", i.mae, i.medae, i.count);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(dir) = &cli.workdir {
        std::env::set_current_dir(dir).map_err(|e| Error::Config(format!("workdir {}: {e}", dir.display())))?;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not size the thread pool: {e}");
        }
    }
    match &cli.command {
        Command::Simulate { scene, out, seed } => simulate(scene, out, *seed),
        Command::Train { data, out, opts } => train(data, out, opts),
        Command::Mesh {
            model,
            out,
            voxel,
            mask_radius,
            color,
        } => mesh(model, out, *voxel, *mask_radius, *color),
        Command::Eval {
            mesh,
            gt,
            r#box,
            out,
            model,
            data,
            brute_force,
            config,
        } => eval(mesh, gt, *r#box, out, model.as_deref(), data.as_deref(), *brute_force, config.as_deref()),
        Command::Pipeline {
            data,
            scene,
            out,
            color,
            opts,
        } => run_pipeline(data.as_deref(), scene.as_deref(), out, *color, opts),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            if e.is_usage() || matches!(e, Error::Sim(SimError::InvalidScene(_))) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
