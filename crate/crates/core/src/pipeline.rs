//! Config-driven inference graph: image encoder → view transform →
//! temporal fusion → BEV encoder → occupancy head → labels.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bev_encoder::EncoderNeck;
use crate::config::{HeadPath, HeadSpec, PipelineConfig, PipelineSpec, TemporalMode, ViewTransformKind};
use crate::error::{Error, Result};
use crate::eval::{OccupancyGrid, NUM_CLASSES};
use crate::geometry::{CameraRig, RigidTransform};
use crate::head::{
    flash_head, mso_head, predict_labels, voxel_head_from_bev, FlashHeadParams, MsoHeadParams, VoxelHeadParams,
};
use crate::init::{ParamBuilder, ParamCollector};
use crate::ops::{conv2d, upsample2x_bilinear, Conv2dParams};
use crate::scene::{render_oracle, Scene};
use crate::temporal::{align_bev, fuse_concat, TemporalBuffer};
use crate::tensor::{ften, Tensor};
use crate::view_transform::{ls_transform, lss_transform, DepthContextParams, SplatOutput};

/// Per-camera input channels: one-hot semantic features.
pub const IMAGE_CHANNELS: usize = NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ImageEncoder,
    ViewTransform,
    Temporal,
    BevEncoder,
    Head,
    Labels,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::ImageEncoder,
        Stage::ViewTransform,
        Stage::Temporal,
        Stage::BevEncoder,
        Stage::Head,
        Stage::Labels,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::ImageEncoder => "image_encoder",
            Stage::ViewTransform => "view_transform",
            Stage::Temporal => "temporal",
            Stage::BevEncoder => "bev_encoder",
            Stage::Head => "head",
            Stage::Labels => "labels",
        }
    }

    /// Stages reported together as "BEV encoder + occupancy"; the rest are
    /// "others".
    pub fn is_bev_and_occupancy(self) -> bool {
        matches!(self, Stage::BevEncoder | Stage::Head | Stage::Labels)
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::invalid("stage", format!("unknown stage `{s}`")))
    }
}

/// Wall-clock seconds per stage of one inference.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub stages: BTreeMap<Stage, f64>,
    pub total: f64,
}

impl StageTimings {
    pub fn get(&self, stage: Stage) -> f64 {
        self.stages.get(&stage).copied().unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.stages.values().sum()
    }

    pub fn others(&self) -> f64 {
        self.stages.iter().filter(|(s, _)| !s.is_bev_and_occupancy()).map(|(_, t)| t).sum()
    }

    pub fn bev_and_occupancy(&self) -> f64 {
        self.stages.iter().filter(|(s, _)| s.is_bev_and_occupancy()).map(|(_, t)| t).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViewParams {
    Lss(DepthContextParams),
    /// 1×1 projection to the context width; depth is uniform.
    Ls(Conv2dParams),
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    Flash(FlashHeadParams),
    MultiScale(MsoHeadParams),
    Voxel(VoxelHeadParams),
}

/// One frame of camera input.
#[derive(Debug, Clone)]
pub struct FrameInput {
    /// Per camera `[1, IMAGE_CHANNELS, h, w]` at feature resolution.
    pub features: Vec<Tensor>,
    pub rig: CameraRig,
    /// Ego-to-global pose.
    pub ego_pose: RigidTransform,
    pub timestamp: f64,
}

impl FrameInput {
    /// Oracle semantic features of every camera in the scene's rig.
    pub fn from_scene(scene: &Scene, spec: &PipelineSpec, ego_pose: RigidTransform, timestamp: f64) -> Result<Self> {
        let (h, w) = spec.feat_size;
        let features = (0..scene.rig.len())
            .map(|i| render_oracle(scene, i, w, h).map(|r| r.features))
            .collect::<Result<_>>()?;
        Ok(Self {
            features,
            rig: scene.rig.clone(),
            ego_pose,
            timestamp,
        })
    }
}

#[derive(Debug)]
pub struct InferOutput {
    pub grid: OccupancyGrid,
    /// `[1, C*, Z, H, W]`.
    pub logits: Tensor,
    /// View-transform output before temporal fusion.
    pub bev_features: Tensor,
    /// History aligned into the current frame, when temporal fusion is on.
    pub aligned_history: Option<Tensor>,
    pub dropped_points: usize,
    pub timings: StageTimings,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: PipelineConfig,
    /// Parameter name → file name inside the checkpoint directory.
    tensors: BTreeMap<String, String>,
}

const MANIFEST: &str = "manifest.json";
const CHECKPOINT_FORMAT: &str = "flashocc-checkpoint";

#[derive(Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    spec: PipelineSpec,
    image: EncoderNeck,
    view: ViewParams,
    fuse: Option<Conv2dParams>,
    bev: EncoderNeck,
    head: HeadParams,
    buffer: TemporalBuffer,
    params: BTreeMap<Stage, usize>,
}

impl Pipeline {
    /// Seeded initialization from `config.seed`.
    pub fn build(config: &PipelineConfig) -> Result<Self> {
        Self::build_with(config, ParamBuilder::seeded(config.seed))
    }

    pub fn build_with(config: &PipelineConfig, mut b: ParamBuilder) -> Result<Self> {
        let spec = config.parse()?;
        let mut params = BTreeMap::new();
        let mut mark = 0;
        let mut tally = |b: &ParamBuilder, stage: Stage| {
            params.insert(stage, b.parameter_count() - mark);
            mark = b.parameter_count();
        };

        let image = EncoderNeck::build(&mut b, "image", IMAGE_CHANNELS, &spec.image_widths, spec.image_neck)?;
        tally(&b, Stage::ImageEncoder);

        let ctx = spec.context_channels;
        let view = match spec.view {
            ViewTransformKind::Lss => {
                let d = spec.depth.count();
                let conv = b.conv2d("view.depth_context", spec.image_neck, d + ctx, 1, 1)?;
                ViewParams::Lss(DepthContextParams::new(conv, d, ctx)?)
            }
            ViewTransformKind::Ls => ViewParams::Ls(b.conv2d("view.context", spec.image_neck, ctx, 1, 1)?),
        };
        tally(&b, Stage::ViewTransform);

        let fuse = match spec.temporal {
            TemporalMode::MonoAlignConcat => Some(b.conv2d("temporal.fuse", 2 * ctx, ctx, 3, 1)?),
            TemporalMode::None => None,
        };
        tally(&b, Stage::Temporal);

        let bev = EncoderNeck::build(&mut b, "bev", ctx, &spec.bev_widths, spec.bev_neck)?;
        tally(&b, Stage::BevEncoder);

        let (nc, z) = (spec.num_classes, spec.z());
        let chain = spec.head_chain();
        let head = match (&spec.head, spec.path) {
            (_, HeadPath::Voxel) => HeadParams::Voxel(VoxelHeadParams::mirror_flash(&mut b, "head", &chain, nc, z)?),
            (HeadSpec::MultiConv(_), HeadPath::Flash) => {
                HeadParams::Flash(FlashHeadParams::build(&mut b, "head", &chain, nc, z)?)
            }
            (HeadSpec::MultiScale { projections, chain: c }, HeadPath::Flash) => {
                let n = spec.bev_widths.len();
                let inputs = [spec.bev_neck, spec.bev_widths[n - 2], spec.bev_widths[n - 1]];
                HeadParams::MultiScale(MsoHeadParams::build(&mut b, "head", &inputs, projections, c, nc, z)?)
            }
        };
        tally(&b, Stage::Head);
        params.insert(Stage::Labels, 0);
        b.finish()?;

        Ok(Self {
            config: config.clone(),
            spec,
            image,
            view,
            fuse,
            bev,
            head,
            buffer: TemporalBuffer::new(),
            params,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn spec(&self) -> &PipelineSpec {
        &self.spec
    }

    pub fn head(&self) -> &HeadParams {
        &self.head
    }

    /// Scalar parameter count per stage.
    pub fn parameter_counts(&self) -> &BTreeMap<Stage, usize> {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().sum()
    }

    pub fn temporal_buffer(&self) -> &TemporalBuffer {
        &self.buffer
    }

    pub fn reset_temporal(&mut self) {
        self.buffer.clear();
    }

    /// Every parameter tensor under its checkpoint name.
    pub fn collect(&self) -> ParamCollector<'_> {
        let mut c = ParamCollector::default();
        self.image.collect(&mut c, "image");
        match &self.view {
            ViewParams::Lss(p) => c.conv2d("view.depth_context", &p.conv),
            ViewParams::Ls(p) => c.conv2d("view.context", p),
        }
        if let Some(f) = &self.fuse {
            c.conv2d("temporal.fuse", f);
        }
        self.bev.collect(&mut c, "bev");
        match &self.head {
            HeadParams::Flash(h) => h.collect(&mut c, "head"),
            HeadParams::MultiScale(h) => h.collect(&mut c, "head"),
            HeadParams::Voxel(h) => h.collect(&mut c, "head"),
        }
        c
    }

    /// Shapes of the head inputs: the BEV neck output, plus the two encoder
    /// scales for the multi-scale head.
    pub fn head_input_shapes(&self) -> Vec<[usize; 4]> {
        let (w, h, _) = self.spec.grid.dims().expect("validated grid");
        let n = self.spec.bev_widths.len();
        let mut shapes = vec![[1, self.spec.bev_neck, h, w]];
        if matches!(self.head, HeadParams::MultiScale(_)) {
            shapes.push([1, self.spec.bev_widths[n - 2], h, w]);
            shapes.push([1, self.spec.bev_widths[n - 1], h, w]);
        }
        shapes
    }

    /// Runs only the occupancy head, returning `[1, C*, Z, H, W]` logits.
    pub fn run_head(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::invalid("head", "no head input"))?;
        match &self.head {
            HeadParams::Flash(p) => flash_head(first, p),
            HeadParams::MultiScale(p) => mso_head(inputs, p),
            HeadParams::Voxel(p) => voxel_head_from_bev(first, p),
        }
    }

    fn check_frame(&self, frame: &FrameInput) -> Result<()> {
        if frame.features.len() != frame.rig.len() {
            return Err(Error::shape(
                "infer",
                format!("{} feature maps for {} cameras", frame.features.len(), frame.rig.len()),
            ));
        }
        let (h, w) = self.spec.feat_size;
        let expected = [1, IMAGE_CHANNELS, h, w];
        if let Some(f) = frame.features.iter().find(|f| f.shape() != expected) {
            return Err(Error::shape(
                "infer",
                format!("camera feature {:?}, expected {expected:?}", f.shape()),
            ));
        }
        Ok(())
    }

    pub fn infer(&mut self, frame: &FrameInput) -> Result<InferOutput> {
        self.check_frame(frame)?;
        let start = Instant::now();
        let mut timings = StageTimings::default();
        let mut clock = Instant::now();
        let mut lap = |timings: &mut StageTimings, stage: Stage| {
            let now = Instant::now();
            timings.stages.insert(stage, (now - clock).as_secs_f64());
            clock = now;
        };

        let feats = frame
            .features
            .iter()
            .map(|f| self.image.forward(f))
            .collect::<Result<Vec<_>>>()?;
        lap(&mut timings, Stage::ImageEncoder);

        let spec = &self.spec;
        let stride = spec.feature_stride as f64;
        let SplatOutput { bev, dropped } = match &self.view {
            ViewParams::Lss(p) => lss_transform(&feats, &frame.rig, p, &spec.grid, &spec.depth, stride)?,
            ViewParams::Ls(p) => {
                let ctx = feats.iter().map(|f| conv2d(f, p)).collect::<Result<Vec<_>>>()?;
                ls_transform(&ctx, &frame.rig, &spec.grid, &spec.depth, stride)?
            }
        };
        drop(feats);
        lap(&mut timings, Stage::ViewTransform);

        let (fused, aligned_history) = match &self.fuse {
            Some(conv) => {
                let aligned = match self.buffer.get() {
                    Some(h) => align_bev(&h.bev, &h.pose, &frame.ego_pose, &spec.grid)?,
                    None => Tensor::zeros(bev.shape()),
                };
                let fused = fuse_concat(&bev, &aligned, conv)?;
                self.buffer.push(bev.clone(), frame.ego_pose, frame.timestamp);
                (Some(fused), Some(aligned))
            }
            None => (None, None),
        };
        lap(&mut timings, Stage::Temporal);

        let trunk_in = fused.as_ref().unwrap_or(&bev);
        let head_inputs = match &self.head {
            HeadParams::MultiScale(_) => {
                let (out, fine, coarse) = self.bev.forward_scales(trunk_in)?;
                let h = out.dim(2);
                vec![out, upsample_to(fine, h)?, upsample_to(coarse, h)?]
            }
            _ => vec![self.bev.forward(trunk_in)?],
        };
        drop(fused);
        lap(&mut timings, Stage::BevEncoder);

        let refs: Vec<&Tensor> = head_inputs.iter().collect();
        let logits = self.run_head(&refs)?;
        drop(head_inputs);
        lap(&mut timings, Stage::Head);

        let grid = predict_labels(&logits)?;
        lap(&mut timings, Stage::Labels);
        timings.total = start.elapsed().as_secs_f64();

        Ok(InferOutput {
            grid,
            logits,
            bev_features: bev,
            aligned_history,
            dropped_points: dropped,
            timings,
        })
    }

    /// Analytic conv FLOPs per stage for one frame of `cameras` cameras.
    /// Splatting, resampling and argmax are not counted.
    pub fn stage_flops(&self, cameras: usize) -> Result<BTreeMap<Stage, u64>> {
        let (fh, fw) = self.spec.feat_size;
        let (w, h, _) = self.spec.grid.dims()?;
        let mut out = BTreeMap::new();
        out.insert(Stage::ImageEncoder, cameras as u64 * self.image.flops(fh, fw)?);
        let view = match &self.view {
            ViewParams::Lss(p) => p.conv.flops(fh, fw)?,
            ViewParams::Ls(p) => p.flops(fh, fw)?,
        };
        out.insert(Stage::ViewTransform, cameras as u64 * view);
        let temporal = match &self.fuse {
            Some(f) => f.flops(h, w)?,
            None => 0,
        };
        out.insert(Stage::Temporal, temporal);
        out.insert(Stage::BevEncoder, self.bev.flops(h, w)?);
        out.insert(Stage::Head, self.head_flops()?);
        out.insert(Stage::Labels, 0);
        Ok(out)
    }

    /// Analytic conv FLOPs of the occupancy head.
    pub fn head_flops(&self) -> Result<u64> {
        let (w, h, z) = self.spec.grid.dims()?;
        Ok(match &self.head {
            HeadParams::Flash(p) => p.layers.iter().map(|l| l.flops(h, w)).sum::<Result<u64>>()?,
            HeadParams::MultiScale(p) => {
                let proj = p.projections.iter().map(|l| l.flops(h, w)).sum::<Result<u64>>()?;
                proj + p.chain.layers.iter().map(|l| l.flops(h, w)).sum::<Result<u64>>()?
            }
            HeadParams::Voxel(p) => {
                p.layers.iter().map(|l| l.flops(z, h, w)).sum::<Result<u64>>()? + p.classifier.flops(z, h, w)?
            }
        })
    }

    /// Writes `manifest.json` and one FTEN file per parameter into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let collector = self.collect();
        let mut tensors = BTreeMap::new();
        for (name, t) in &collector.entries {
            let file = format!("{name}.ften");
            ften::write(&dir.join(&file), t)?;
            tensors.insert(name.clone(), file);
        }
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            config: self.config.clone(),
            tensors,
        };
        let path = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| crate::scene::json_error(&text, &path, &e))?;
        if manifest.format != CHECKPOINT_FORMAT || manifest.version != 1 {
            return Err(Error::Format {
                path,
                offset: 0,
                detail: format!("unsupported checkpoint {} v{}", manifest.format, manifest.version),
            });
        }
        let mut store = BTreeMap::new();
        for (name, file) in &manifest.tensors {
            if file.contains(['/', '\\']) || file.starts_with('.') {
                return Err(Error::config(name.clone(), format!("file `{file}` leaves the checkpoint directory")));
            }
            store.insert(name.clone(), ften::read(&dir.join(file))?);
        }
        Self::build_with(&manifest.config, ParamBuilder::from_store(store))
    }
}

fn upsample_to(mut t: Tensor, h: usize) -> Result<Tensor> {
    while t.dim(2) < h {
        t = upsample2x_bilinear(&t)?;
    }
    Ok(t)
}
