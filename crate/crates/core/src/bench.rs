//! Flash vs voxel head benchmark: wall-clock, analytic FLOPs, peak live
//! tensor bytes and parameter counts.
//!
//! The report separates deterministic analysis (FLOPs, bytes, op counts,
//! parameters) from wall-clock timing so that reports from two runs can be
//! compared field by field.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{HeadPath, PipelineConfig};
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, RigidTransform};
use crate::init::ParamBuilder;
use crate::ops::counter::OpScope;
use crate::ops::ParallelGuard;
use crate::pipeline::{FrameInput, Pipeline, Stage};
use crate::scene::random_scene;
use crate::tensor::memory::MemoryScope;
use crate::tensor::Tensor;

/// Medians below this are reported but flagged.
const TIMER_FLOOR_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchScope {
    /// Only the occupancy head, fed an identical random BEV feature.
    Head,
    /// The whole pipeline on a synthetic frame.
    Full,
}

impl std::str::FromStr for BenchScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(BenchScope::Head),
            "full" => Ok(BenchScope::Full),
            other => Err(Error::invalid("scope", format!("unknown scope `{other}` (head|full)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub warmup: usize,
    pub iters: usize,
    pub paths: Vec<HeadPath>,
    pub scope: BenchScope,
    /// Also time with parallel convolution kernels.
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            warmup: 5,
            iters: 50,
            paths: vec![HeadPath::Flash, HeadPath::Voxel],
            scope: BenchScope::Head,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("stats", "no samples"));
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let rank = |q: f64| s[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        };
        Ok(Self {
            median,
            p10: rank(0.1),
            p90: rank(0.9),
            min: s[0],
            max: s[n - 1],
        })
    }
}

/// Deterministic properties of one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathAnalysis {
    /// Analytic conv FLOPs per stage (full scope) or of the head alone.
    pub flops: BTreeMap<String, u64>,
    pub total_flops: u64,
    /// Peak bytes of tensors created inside the measured region.
    pub peak_tensor_bytes: usize,
    pub parameters: BTreeMap<String, usize>,
    pub conv2d_calls: u64,
    pub conv3d_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathTiming {
    /// Seconds per measured region (head call or whole inference).
    pub wall: Stats,
    /// Per-stage seconds (full scope only).
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub stages: BTreeMap<String, Stats>,
    /// Median "others" vs "BEV encoder + occupancy" split (full scope only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallel: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub config: String,
    pub scope: BenchScope,
    pub warmup: usize,
    pub iters: usize,
    pub paths: BTreeMap<String, PathAnalysis>,
    /// voxel / flash, when both paths ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flops_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub paths: BTreeMap<String, PathTiming>,
    /// voxel median / flash median of the measured region.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
    /// voxel / flash median of the head stage alone (full scope).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_stage_speedup: Option<f64>,
    /// Measurements too small for the timer to resolve.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub analysis: Analysis,
    pub timing: Timing,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Analytic conv FLOPs of one stage for a six-camera frame.
pub fn flops(config: &PipelineConfig, stage: Stage) -> Result<u64> {
    let p = Pipeline::build_with(config, ParamBuilder::zeros())?;
    Ok(p.stage_flops(6)?.get(&stage).copied().unwrap_or(0))
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

fn synthetic_frame(p: &Pipeline) -> Result<FrameInput> {
    let spec = p.spec();
    let rig = CameraRig::surround(spec.image_size.1 as u32, spec.image_size.0 as u32)?;
    let scene = random_scene(spec.seed, rig, Some(spec.grid), 24)?;
    FrameInput::from_scene(&scene, spec, RigidTransform::identity(), 0.0)
}

fn stage_map<T: Copy>(m: &BTreeMap<Stage, T>) -> BTreeMap<String, T> {
    m.iter().map(|(s, v)| (s.as_str().to_string(), *v)).collect()
}

struct PathRun {
    analysis: PathAnalysis,
    timing: PathTiming,
    head_stage_median: Option<f64>,
}

fn time_head(p: &Pipeline, inputs: &[Tensor], n: usize) -> Result<Vec<f64>> {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    (0..n)
        .map(|_| {
            let t = Instant::now();
            let out = p.run_head(&refs)?;
            let dt = t.elapsed().as_secs_f64();
            drop(out);
            Ok(dt)
        })
        .collect()
}

fn run_head_scope(p: &Pipeline, opts: &BenchOptions) -> Result<PathRun> {
    let shapes = p.head_input_shapes();
    let seed = p.spec().seed;
    let make_inputs = || -> Vec<Tensor> {
        shapes
            .iter()
            .enumerate()
            .map(|(i, s)| random_tensor(s, seed.wrapping_add(i as u64)))
            .collect()
    };

    // The instrumented run doubles as the first warmup iteration. Inputs are
    // created inside the memory scope so the peak covers every activation
    // but no weights.
    let mem = MemoryScope::start();
    let ops = OpScope::start();
    let inputs = make_inputs();
    let refs: Vec<&Tensor> = inputs.iter().collect();
    drop(p.run_head(&refs)?);
    let peak = mem.peak() - mem.baseline();
    let counts = ops.counts();
    drop(refs);

    time_head(p, &inputs, opts.warmup.saturating_sub(1))?;
    let wall = Stats::from_samples(&time_head(p, &inputs, opts.iters)?)?;
    let parallel = if opts.parallel {
        let _guard = ParallelGuard::set(true);
        time_head(p, &inputs, opts.warmup.min(1))?;
        Some(Stats::from_samples(&time_head(p, &inputs, opts.iters)?)?)
    } else {
        None
    };
    let head_flops = p.head_flops()?;
    let median = wall.median;
    Ok(PathRun {
        analysis: PathAnalysis {
            flops: BTreeMap::from([(Stage::Head.as_str().to_string(), head_flops)]),
            total_flops: head_flops,
            peak_tensor_bytes: peak,
            parameters: BTreeMap::from([(
                Stage::Head.as_str().to_string(),
                p.parameter_counts()[&Stage::Head],
            )]),
            conv2d_calls: counts.conv2d_calls,
            conv3d_calls: counts.conv3d_calls,
        },
        timing: PathTiming {
            wall,
            stages: BTreeMap::new(),
            split: None,
            parallel,
        },
        head_stage_median: Some(median),
    })
}

fn run_full_scope(p: &mut Pipeline, opts: &BenchOptions) -> Result<PathRun> {
    let frame = synthetic_frame(p)?;
    let cameras = frame.rig.len();

    p.reset_temporal();
    let mem = MemoryScope::start();
    let ops = OpScope::start();
    drop(p.infer(&frame)?);
    let peak = mem.peak() - mem.baseline();
    let counts = ops.counts();

    let run = |p: &mut Pipeline, n: usize| -> Result<Vec<crate::pipeline::StageTimings>> {
        (0..n)
            .map(|_| {
                p.reset_temporal();
                p.infer(&frame).map(|o| o.timings)
            })
            .collect()
    };
    run(p, opts.warmup.saturating_sub(1))?;
    let samples = run(p, opts.iters)?;
    let parallel = if opts.parallel {
        let _guard = ParallelGuard::set(true);
        run(p, opts.warmup.min(1))?;
        let s = run(p, opts.iters)?;
        Some(Stats::from_samples(&s.iter().map(|t| t.total).collect::<Vec<_>>())?)
    } else {
        None
    };

    let wall = Stats::from_samples(&samples.iter().map(|t| t.total).collect::<Vec<_>>())?;
    let mut stages = BTreeMap::new();
    for stage in Stage::ALL {
        let v: Vec<f64> = samples.iter().map(|t| t.get(stage)).collect();
        stages.insert(stage.as_str().to_string(), Stats::from_samples(&v)?);
    }
    let others = Stats::from_samples(&samples.iter().map(|t| t.others()).collect::<Vec<_>>())?;
    let bev_occ = Stats::from_samples(&samples.iter().map(|t| t.bev_and_occupancy()).collect::<Vec<_>>())?;
    let split = BTreeMap::from([
        ("others".to_string(), others.median),
        ("bev_encoder_and_occupancy".to_string(), bev_occ.median),
    ]);
    let head_stage_median = stages.get(Stage::Head.as_str()).map(|s| s.median);
    let flops = p.stage_flops(cameras)?;
    Ok(PathRun {
        analysis: PathAnalysis {
            total_flops: flops.values().sum(),
            flops: stage_map(&flops),
            peak_tensor_bytes: peak,
            parameters: stage_map(p.parameter_counts()),
            conv2d_calls: counts.conv2d_calls,
            conv3d_calls: counts.conv3d_calls,
        },
        timing: PathTiming {
            wall,
            stages,
            split: Some(split),
            parallel,
        },
        head_stage_median,
    })
}

/// Benchmarks each requested path in turn (never interleaved).
pub fn bench(config: &PipelineConfig, opts: &BenchOptions) -> Result<BenchReport> {
    if opts.iters < 3 {
        return Err(Error::invalid("bench", format!("iters must be at least 3, got {}", opts.iters)));
    }
    if opts.paths.is_empty() {
        return Err(Error::invalid("bench", "no paths selected"));
    }
    let _serial = ParallelGuard::set(false);
    let mut analysis = BTreeMap::new();
    let mut timing = BTreeMap::new();
    let mut head_medians = BTreeMap::new();
    let mut flags = Vec::new();
    for &path in &opts.paths {
        let mut p = Pipeline::build(&config.clone().with_path(path))?;
        let run = match opts.scope {
            BenchScope::Head => run_head_scope(&p, opts)?,
            BenchScope::Full => run_full_scope(&mut p, opts)?,
        };
        drop(p);
        let name = path.as_str().to_string();
        if run.timing.wall.median < TIMER_FLOOR_S {
            flags.push(format!("{name}: measured region median below 1 us"));
        }
        for (stage, s) in &run.timing.stages {
            if s.median < TIMER_FLOOR_S {
                flags.push(format!("{name}: stage {stage} median below 1 us"));
            }
        }
        head_medians.insert(path, (run.timing.wall.median, run.head_stage_median));
        analysis.insert(name.clone(), run.analysis);
        timing.insert(name, run.timing);
    }
    let both = analysis.get("flash").zip(analysis.get("voxel"));
    let flops_ratio = both.map(|(f, v)| v.total_flops as f64 / f.total_flops as f64);
    let memory_ratio = both.map(|(f, v)| v.peak_tensor_bytes as f64 / f.peak_tensor_bytes as f64);
    let pair = head_medians.get(&HeadPath::Flash).zip(head_medians.get(&HeadPath::Voxel));
    let speedup = pair.map(|(f, v)| v.0 / f.0);
    let head_stage_speedup = pair.and_then(|(f, v)| Some(v.1? / f.1?));
    Ok(BenchReport {
        analysis: Analysis {
            config: config.name.clone(),
            scope: opts.scope,
            warmup: opts.warmup,
            iters: opts.iters,
            paths: analysis,
            flops_ratio,
            memory_ratio,
        },
        timing: Timing {
            paths: timing,
            speedup,
            head_stage_speedup,
            flags,
        },
    })
}
