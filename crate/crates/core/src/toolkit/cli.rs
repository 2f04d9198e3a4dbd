//! `gtex` subcommands. Exit status 0 on success, 2 on usage errors, 1 on
//! runtime failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::extraction::{colorize, export_mesh, extract_instance, GridSpec, MeshFormat};
use crate::synth::{generate_family, write_dataset, BoxcarParams};
use crate::training::{initialize, load_checkpoint, loss_csv, save_checkpoint, train_with, Checkpoint, TrainConfig};

use super::{
    interpolate_codes, load_any, prepare_dataset, template_surface, texture_transfer, EvalOptions, InstanceCodes,
    ToolkitError,
};

#[derive(Parser, Debug)]
#[command(name = "gtex", version, about = "Implicit shape templates with disentangled texture")]
struct Cli {
    /// Worker threads; 1 gives the reproducible single-worker mode.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CodeChoice {
    Shape,
    Tex,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Geometry {
    /// Shape code of the `--from` instance.
    Instance,
    /// The template surface, unwarped.
    Template,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Obj,
    Ply,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a procedural boxcar family.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Mesh tessellation level.
        #[arg(long, default_value_t = 2)]
        resolution: usize,
    },
    /// Sample SDF and surface caches for every mesh of a dataset.
    Prepare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training config supplying sample counts and seed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the model; writes a checkpoint and a loss CSV next to it.
    Train {
        /// Prepared directory or raw dataset.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Reconstruct one instance as a colored mesh.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        instance: String,
        #[arg(long, default_value_t = 128)]
        res: usize,
        /// `.obj` or `.ply`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Shape of one instance with the texture of another.
    Transfer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        shape_of: String,
        #[arg(long)]
        texture_of: String,
        #[arg(long, default_value_t = 128)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Meshes along a straight line between two codes.
    Interp {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, value_enum)]
        kind: CodeChoice,
        /// Number of frames, endpoints included.
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// Geometry for texture interpolation.
        #[arg(long, value_enum, default_value_t = Geometry::Instance)]
        geometry: Geometry,
        #[arg(long, value_enum, default_value_t = Format::Ply)]
        format: Format,
        #[arg(long, default_value_t = 128)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction metrics against held-out samples.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        res: usize,
        #[arg(long, default_value_t = 20_000)]
        chamfer_samples: usize,
    },
}

enum Failure {
    Usage(String),
    Runtime(ToolkitError),
}

impl From<ToolkitError> for Failure {
    fn from(e: ToolkitError) -> Self {
        Self::Runtime(e)
    }
}

fn runtime<E: Into<ToolkitError>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return 2;
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("worker pool already initialized; --workers {n} ignored");
        }
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn grid(res: usize) -> Result<GridSpec, Failure> {
    let grid = GridSpec::with_resolution(res);
    grid.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(grid)
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, Failure> {
    match path {
        Some(p) => TrainConfig::load(p).map_err(runtime),
        None => Ok(TrainConfig::default()),
    }
}

fn format_of(path: &Path) -> Result<MeshFormat, Failure> {
    MeshFormat::from_path(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn write_mesh(mesh: &crate::geometry::Mesh, path: &Path, format: MeshFormat) -> Result<(), Failure> {
    export_mesh(mesh, path, format).map_err(runtime)?;
    log::info!(
        "wrote {} ({} vertices, {} triangles)",
        path.display(),
        mesh.vertices.len(),
        mesh.triangles.len()
    );
    Ok(())
}

fn codes(ckpt: &Checkpoint, id: &str) -> Result<InstanceCodes, Failure> {
    Ok(InstanceCodes::from_checkpoint(ckpt, id)?)
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth {
            seed,
            count,
            out,
            resolution,
        } => {
            if count == 0 || resolution == 0 {
                return Err(Failure::Usage("--count and --resolution must be positive".into()));
            }
            let dataset = generate_family(seed, count, &BoxcarParams::default(), resolution).map_err(runtime)?;
            write_dataset(&dataset, &out).map_err(runtime)?;
            log::info!("wrote {} instances to {}", count, out.display());
        }
        Command::Prepare {
            data,
            out,
            config,
            seed,
        } => {
            let config = load_config(config.as_deref())?;
            let seed = seed.unwrap_or(config.seed);
            let set = prepare_dataset(&data, &out, &config.samples, seed)?;
            log::info!("prepared {} instances in {}", set.instances.len(), out.display());
        }
        Command::Train {
            data,
            config,
            out,
            steps,
            seed,
            log_every,
        } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(s) = steps {
                config.steps = s;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            config.validate().map_err(runtime)?;
            let set = load_any(&data, &config.samples, config.seed)?;
            let (instances, template) = set.training();
            let output = if config.steps == 0 {
                let ids: Vec<String> = instances.iter().map(|i| i.instance_id.clone()).collect();
                crate::training::TrainOutput {
                    checkpoint: initialize(&ids, &config).map_err(runtime)?,
                    log: Vec::new(),
                }
            } else {
                let every = log_every.max(1);
                train_with(&instances, &template, &config, |r| {
                    if r.step % every == 0 || r.step + 1 == config.steps {
                        log::info!(
                            "step {:>6}  total {:.5}  tex {:.5}  geo {:.5}  kps {:.5}  tp {:.5}",
                            r.step,
                            r.total,
                            r.components.tex,
                            r.components.geo,
                            r.components.kps,
                            r.components.tp_sdf
                        );
                    }
                })
                .map_err(runtime)?
            };
            save_checkpoint(&output.checkpoint, &out).map_err(runtime)?;
            let csv_path = out.with_extension("loss.csv");
            std::fs::write(&csv_path, loss_csv(&output.log)).map_err(|e| runtime(ToolkitError::io(&csv_path, e)))?;
            log::info!("wrote {} and {}", out.display(), csv_path.display());
        }
        Command::Extract {
            ckpt,
            instance,
            res,
            out,
        } => {
            let (grid, format) = (grid(res)?, format_of(&out)?);
            let ckpt = load_checkpoint(&ckpt).map_err(runtime)?;
            let c = codes(&ckpt, &instance)?;
            let mesh = extract_instance(&ckpt.model, &c.shape, &grid).map_err(runtime)?;
            let mesh = colorize(&ckpt.model, &mesh, &c.shape, &c.tex, c.pose.as_ref()).map_err(runtime)?;
            write_mesh(&mesh, &out, format)?;
        }
        Command::Transfer {
            ckpt,
            shape_of,
            texture_of,
            res,
            out,
        } => {
            let (grid, format) = (grid(res)?, format_of(&out)?);
            let ckpt = load_checkpoint(&ckpt).map_err(runtime)?;
            let a = codes(&ckpt, &shape_of)?;
            let b = codes(&ckpt, &texture_of)?;
            let mesh = texture_transfer(&ckpt.model, &a.shape, &b.tex, b.pose.as_ref(), &grid)?;
            write_mesh(&mesh, &out, format)?;
        }
        Command::Interp {
            ckpt,
            from,
            to,
            kind,
            steps,
            geometry,
            format,
            res,
            out,
        } => {
            if steps < 2 {
                return Err(Failure::Usage("--steps must be at least 2".into()));
            }
            if matches!((kind, geometry), (CodeChoice::Shape, Geometry::Template)) {
                return Err(Failure::Usage("--geometry template applies to texture interpolation".into()));
            }
            let grid = grid(res)?;
            let ckpt = load_checkpoint(&ckpt).map_err(runtime)?;
            let (a, b) = (codes(&ckpt, &from)?, codes(&ckpt, &to)?);
            std::fs::create_dir_all(&out).map_err(|e| runtime(ToolkitError::io(&out, e)))?;
            let (format, ext) = match format {
                Format::Obj => (MeshFormat::Obj, "obj"),
                Format::Ply => (MeshFormat::Ply, "ply"),
            };
            for k in 0..steps {
                let t = k as f64 / (steps - 1) as f64;
                let mesh = match (kind, geometry) {
                    (CodeChoice::Shape, _) => {
                        let z = interpolate_codes(&a.shape, &b.shape, t)?;
                        texture_transfer(&ckpt.model, &z, &a.tex, a.pose.as_ref(), &grid)?
                    }
                    (CodeChoice::Tex, Geometry::Instance) => {
                        let z = interpolate_codes(&a.tex, &b.tex, t)?;
                        texture_transfer(&ckpt.model, &a.shape, &z, a.pose.as_ref(), &grid)?
                    }
                    (CodeChoice::Tex, Geometry::Template) => {
                        let z = interpolate_codes(&a.tex, &b.tex, t)?;
                        template_surface(&ckpt.model, &z, a.pose.as_ref(), &grid)?
                    }
                };
                write_mesh(&mesh, &out.join(format!("frame_{k:03}.{ext}")), format)?;
            }
        }
        Command::Eval {
            ckpt,
            data,
            out,
            res,
            chamfer_samples,
        } => {
            let grid = grid(res)?;
            if chamfer_samples == 0 {
                return Err(Failure::Usage("--chamfer-samples must be positive".into()));
            }
            let ckpt = load_checkpoint(&ckpt).map_err(runtime)?;
            let set = load_any(&data, &ckpt.config.samples, ckpt.config.seed)?;
            let opts = EvalOptions {
                grid,
                chamfer_samples,
                seed: ckpt.config.seed,
                clamp: ckpt.config.clamp,
                ..EvalOptions::default()
            };
            let report = super::evaluate(&ckpt, &set.evaluation(), &set.template.keypoints, &opts)?;
            std::fs::write(&out, report.to_json()).map_err(|e| runtime(ToolkitError::io(&out, e)))?;
            log::info!(
                "chamfer {:.5}  sdf_mae {:.5}  color_mae {:.5}  keypoint_residual {:.5}",
                report.chamfer,
                report.sdf_mae,
                report.color_mae,
                report.keypoint_residual
            );
        }
    }
    Ok(())
}
