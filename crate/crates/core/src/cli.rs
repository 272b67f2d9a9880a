//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (malformed input,
//! inconsistent config, failed self-test).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{bench, BenchOptions, BenchScope};
use crate::config::{HeadPath, PipelineConfig};
use crate::error::{Error, Result};
use crate::eval::{confusion, miou, semantic_classes, OccupancyGrid, VisibilityMask};
use crate::geometry::{CameraRig, RigidTransform};
use crate::pipeline::{FrameInput, Pipeline};
use crate::scene::{random_scene, visibility_mask, voxelize, Scene};
use crate::tensor::ften;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Default camera image size for scenes generated without a config.
const DEFAULT_IMAGE: (u32, u32) = (704, 256);

#[derive(Debug, Parser)]
#[command(name = "flashocc", version, about = "BEV occupancy prediction with 2D (flash) and 3D (voxel) heads")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random synthetic scene with ground truth and visibility mask.
    GenScene(GenSceneArgs),
    /// Run a pipeline on a scene and write predicted labels.
    Run(RunArgs),
    /// Compare predicted labels with ground truth and print per-class IoU.
    Eval(EvalArgs),
    /// Benchmark the flash and voxel heads.
    Bench(BenchArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 24)]
    pub objects: usize,
    /// Take the grid and camera image size from this pipeline config.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, required_unless_present = "checkpoint")]
    pub config: Option<PathBuf>,
    /// Checkpoint directory; replaces the seeded initialization.
    #[arg(long, conflicts_with = "config")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub scene: PathBuf,
    /// Overrides the path named in the config.
    #[arg(long, value_enum)]
    pub path: Option<PathArg>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the `[1, C*, Z, H, W]` logits as FTEN.
    #[arg(long)]
    pub logits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Count only voxels flagged visible in `--mask`.
    #[arg(long, requires = "mask")]
    pub masked: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value_t = PathsArg::Both)]
    pub paths: PathsArg,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScopeArg::Head)]
    pub scope: ScopeArg,
    /// Additionally time with parallel convolution kernels.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathArg {
    Flash,
    Voxel,
}

impl From<PathArg> for HeadPath {
    fn from(p: PathArg) -> Self {
        match p {
            PathArg::Flash => HeadPath::Flash,
            PathArg::Voxel => HeadPath::Voxel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathsArg {
    Both,
    Flash,
    Voxel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Head,
    Full,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen_scene(a: &GenSceneArgs) -> Result<()> {
    let (rig, grid) = match &a.config {
        Some(path) => {
            let spec = PipelineConfig::read(path)?.parse()?;
            let (h, w) = spec.image_size;
            (CameraRig::surround(w as u32, h as u32)?, Some(spec.grid))
        }
        None => (CameraRig::surround(DEFAULT_IMAGE.0, DEFAULT_IMAGE.1)?, None),
    };
    let scene = random_scene(a.seed, rig, grid, a.objects)?;
    let g = scene.grid_or_default();
    scene.write(&a.out)?;
    voxelize(&scene, &g)?.write(&a.gt)?;
    visibility_mask(&scene, &scene.rig, &g)?.write(&a.mask)?;
    Ok(())
}

fn check_scene(scene: &Scene, pipeline: &Pipeline, path: &Path) -> Result<()> {
    let spec = pipeline.spec();
    let (h, w) = spec.image_size;
    for cam in scene.rig.cameras() {
        let i = &cam.intrinsics;
        if (i.width as usize, i.height as usize) != (w, h) {
            return Err(Error::config(
                "scene",
                format!(
                    "{}: camera {} is {}x{}, pipeline expects {h}x{w}",
                    path.display(),
                    cam.name,
                    i.height,
                    i.width
                ),
            ));
        }
    }
    if let Some(g) = &scene.grid {
        if g.dims()? != spec.grid.dims()? {
            return Err(Error::config(
                "scene",
                format!("{}: scene grid {:?} differs from pipeline grid {:?}", path.display(), g.dims()?, spec.grid.dims()?),
            ));
        }
    }
    Ok(())
}

fn run(a: &RunArgs) -> Result<()> {
    let mut pipeline = match (&a.checkpoint, &a.config) {
        (Some(dir), _) => {
            let p = Pipeline::load_checkpoint(dir)?;
            match a.path {
                Some(path) if HeadPath::from(path) != p.spec().path => {
                    return Err(Error::invalid(
                        "run",
                        format!("checkpoint holds a {} head", p.spec().path.as_str()),
                    ))
                }
                _ => p,
            }
        }
        (None, Some(cfg)) => {
            let mut config = PipelineConfig::read(cfg)?;
            if let Some(path) = a.path {
                config = config.with_path(path.into());
            }
            Pipeline::build(&config)?
        }
        (None, None) => return Err(Error::invalid("run", "--config or --checkpoint is required")),
    };
    let scene = Scene::read(&a.scene)?;
    check_scene(&scene, &pipeline, &a.scene)?;
    let frame = FrameInput::from_scene(&scene, pipeline.spec(), RigidTransform::identity(), 0.0)?;
    let out = pipeline.infer(&frame)?;
    out.grid.write(&a.out)?;
    if let Some(path) = &a.logits {
        ften::write(path, &out.logits)?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<String> {
    let pred = OccupancyGrid::read(&a.pred)?;
    let gt = OccupancyGrid::read(&a.gt)?;
    let mask = match (&a.mask, a.masked) {
        (Some(path), true) => Some(VisibilityMask::read(path)?),
        _ => None,
    };
    let conf = confusion(&pred, &gt, mask.as_ref())?;
    let report = miou(&conf, &semantic_classes(gt.num_classes()))?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    if let Some(path) = &a.report {
        write_text(path, &text)?;
    }
    Ok(text)
}

fn run_bench(a: &BenchArgs) -> Result<Option<String>> {
    let config = PipelineConfig::read(&a.config)?;
    let paths = match a.paths {
        PathsArg::Both => vec![HeadPath::Flash, HeadPath::Voxel],
        PathsArg::Flash => vec![HeadPath::Flash],
        PathsArg::Voxel => vec![HeadPath::Voxel],
    };
    let opts = BenchOptions {
        warmup: a.warmup,
        iters: a.iters,
        paths,
        scope: match a.scope {
            ScopeArg::Head => BenchScope::Head,
            ScopeArg::Full => BenchScope::Full,
        },
        parallel: a.parallel,
    };
    let report = bench(&config, &opts)?;
    let mut text = report.to_json();
    text.push('\n');
    match &a.report {
        Some(path) => {
            write_text(path, &text)?;
            let t = &report.timing;
            for (name, p) in &t.paths {
                eprintln!("{name}: median {:.3} ms", p.wall.median * 1e3);
            }
            if let Some(s) = t.speedup {
                eprintln!("speedup voxel/flash: {s:.2}x");
            }
            for f in &t.flags {
                eprintln!("flag: {f}");
            }
            Ok(None)
        }
        None => Ok(Some(text)),
    }
}

fn selftest() -> bool {
    let checks = crate::selftest::run();
    for c in &checks {
        let status = if c.passed { "ok" } else { "FAIL" };
        println!("{status:4} {}: {}", c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    failed == 0
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument { .. } => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Executes parsed arguments and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::GenScene(a) => gen_scene(a).map(|()| None),
        Command::Run(a) => run(a).map(|()| None),
        Command::Eval(a) => eval(a).map(Some),
        Command::Bench(a) => run_bench(a),
        Command::Selftest => return if selftest() { EXIT_OK } else { EXIT_DATA },
    };
    match result {
        Ok(out) => {
            if let Some(text) = out {
                print!("{text}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

pub fn main() -> ! {
    std::process::exit(run_from(std::env::args_os()))
}
