//! Pipeline configuration: a JSON object whose string fields use the
//! compact token grammar of the M0–M8 model table.
//!
//! | field | example | meaning |
//! |---|---|---|
//! | `size` | `256x704` | input image height × width |
//! | `image_backbone` | `R50`, `2B-32-64` | image encoder stages |
//! | `image_neck` | `FL-256` | image FPN-LSS neck width |
//! | `view_transform` | `LSS-64,200x200,0.5` | kind, context channels, BEV W×H, depth bin size (m) |
//! | `bev_backbone` | `3B-128-256-512` | BEV encoder: one residual block per listed width |
//! | `bev_neck` | `FL-256` | BEV neck width |
//! | `head` | `MC-256-512-288`, `MSO-(256,256,256)-128-256` | occupancy head |
//! | `temporal` | `-`, `mono-align-concat`, `Stereo4D` | temporal fusion |
//! | `path` | `flash`, `voxel` | head implementation |

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::NUM_CLASSES;
use crate::view_transform::{BevGridSpec, DepthBins};

/// Stage widths standing in for the large pretrained image backbones.
pub const TINY_IMAGE_BACKBONE: [usize; 2] = [32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadPath {
    #[default]
    Flash,
    Voxel,
}

impl HeadPath {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadPath::Flash => "flash",
            HeadPath::Voxel => "voxel",
        }
    }
}

impl std::str::FromStr for HeadPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flash" => Ok(HeadPath::Flash),
            "voxel" => Ok(HeadPath::Voxel),
            other => Err(Error::invalid("path", format!("unknown path `{other}` (flash|voxel)"))),
        }
    }
}

fn default_stride() -> usize {
    16
}

fn default_depth_range() -> [f64; 2] {
    [1.0, 45.0]
}

fn default_temporal() -> String {
    "-".into()
}

/// JSON form of a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub name: String,
    pub size: String,
    #[serde(default = "default_stride")]
    pub feature_stride: usize,
    pub image_backbone: String,
    pub image_neck: String,
    pub view_transform: String,
    #[serde(default = "default_depth_range")]
    pub depth_range: [f64; 2],
    pub bev_backbone: String,
    pub bev_neck: String,
    pub head: String,
    #[serde(default = "default_temporal")]
    pub temporal: String,
    #[serde(default)]
    pub path: HeadPath,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<BevGridSpec>,
}

impl PipelineConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| crate::scene::json_error(text, origin, &e))?;
        cfg.parse()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Small pipeline for tests and demos: 64x176 images, a 16x16x16 grid
    /// of 5 m cells and narrow layers.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            size: "64x176".into(),
            feature_stride: 8,
            image_backbone: "2B-8-16".into(),
            image_neck: "FL-16".into(),
            view_transform: "LSS-8,16x16,2.0".into(),
            depth_range: default_depth_range(),
            bev_backbone: "3B-8-16-32".into(),
            bev_neck: "FL-32".into(),
            head: "MC-32-64-288".into(),
            temporal: default_temporal(),
            path: HeadPath::Flash,
            seed: 5,
            grid: None,
        }
    }

    pub fn with_path(mut self, path: HeadPath) -> Self {
        self.path = path;
        self
    }

    pub fn parse(&self) -> Result<PipelineSpec> {
        PipelineSpec::from_config(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewTransformKind {
    /// Predicted depth distribution.
    Lss,
    /// Uniform depth.
    Ls,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadSpec {
    /// Conv widths after the neck; the last is `C*·Z`.
    MultiConv(Vec<usize>),
    MultiScale {
        projections: Vec<usize>,
        chain: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalMode {
    None,
    MonoAlignConcat,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub name: String,
    /// `(H, W)` in pixels.
    pub image_size: (usize, usize),
    pub feature_stride: usize,
    /// `(h, w)` of the per-camera feature map.
    pub feat_size: (usize, usize),
    pub image_widths: Vec<usize>,
    pub image_neck: usize,
    pub view: ViewTransformKind,
    pub context_channels: usize,
    pub depth: DepthBins,
    pub grid: BevGridSpec,
    pub bev_widths: Vec<usize>,
    pub bev_neck: usize,
    pub head: HeadSpec,
    pub temporal: TemporalMode,
    pub path: HeadPath,
    pub seed: u64,
    pub num_classes: usize,
}

fn bad(stage: &str, detail: impl Into<String>) -> Error {
    Error::config(stage, detail)
}

fn number(stage: &str, s: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| bad(stage, format!("`{s}` is not a positive integer")))
}

/// `AxB` or `A×B`.
fn pair(stage: &str, s: &str) -> Result<(usize, usize)> {
    let norm = s.replace('×', "x");
    let (a, b) = norm
        .split_once(['x', 'X'])
        .ok_or_else(|| bad(stage, format!("`{s}` is not of the form AxB")))?;
    Ok((number(stage, a)?, number(stage, b)?))
}

fn neck_width(stage: &str, s: &str) -> Result<usize> {
    let rest = s
        .trim()
        .strip_prefix("FL-")
        .ok_or_else(|| bad(stage, format!("`{s}` is not an FL-<width> neck")))?;
    number(stage, rest)
}

/// `NB-w1-...-wN` (case-insensitive `B`), or a named large backbone.
fn backbone(stage: &str, s: &str, allow_named: bool) -> Result<Vec<usize>> {
    let s = s.trim();
    if allow_named && matches!(s, "R50" | "R101" | "SwinB") {
        return Ok(TINY_IMAGE_BACKBONE.to_vec());
    }
    let mut parts = s.split('-');
    let head = parts.next().unwrap_or_default();
    let count = head
        .strip_suffix(['B', 'b'])
        .ok_or_else(|| bad(stage, format!("`{s}` is not of the form NB-w1-...-wN")))?;
    let count = number(stage, count)?;
    let widths = parts.map(|p| number(stage, p)).collect::<Result<Vec<_>>>()?;
    if widths.len() != count || count < 2 {
        return Err(bad(
            stage,
            format!("`{s}` declares {count} blocks but lists {} widths (need at least 2)", widths.len()),
        ));
    }
    Ok(widths)
}

fn view_transform(s: &str) -> Result<(ViewTransformKind, usize, (usize, usize), f64)> {
    const STAGE: &str = "view_transform";
    let s = s.trim();
    if s.contains("B-VTM") {
        return Err(bad(STAGE, "depth-aware backward projection is not supported"));
    }
    let (kind, rest) = if let Some(r) = s.strip_prefix("LSS-") {
        (ViewTransformKind::Lss, r)
    } else if let Some(r) = s.strip_prefix("F-VTM-") {
        (ViewTransformKind::Lss, r)
    } else if let Some(r) = s.strip_prefix("LS-") {
        (ViewTransformKind::Ls, r)
    } else {
        return Err(bad(STAGE, format!("`{s}` is not LSS-/LS-/F-VTM-<ctx>,<W>x<H>,<step>")));
    };
    let fields: Vec<&str> = rest.split(',').collect();
    if fields.len() != 3 {
        return Err(bad(STAGE, format!("`{s}` needs three comma-separated fields")));
    }
    let ctx = number(STAGE, fields[0])?;
    let bev = pair(STAGE, fields[1])?;
    let step: f64 = fields[2]
        .trim()
        .parse()
        .ok()
        .filter(|v: &f64| *v > 0.0 && v.is_finite())
        .ok_or_else(|| bad(STAGE, format!("depth step `{}` must be a positive number", fields[2])))?;
    Ok((kind, ctx, bev, step))
}

fn head(s: &str) -> Result<HeadSpec> {
    const STAGE: &str = "head";
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("MC-") {
        let widths = rest.split('-').map(|p| number(STAGE, p)).collect::<Result<Vec<_>>>()?;
        return Ok(HeadSpec::MultiConv(widths));
    }
    if let Some(rest) = s.strip_prefix("MSO-(") {
        let (inner, tail) = rest
            .split_once(')')
            .ok_or_else(|| bad(STAGE, format!("`{s}` has an unclosed input list")))?;
        let projections = inner.split(',').map(|p| number(STAGE, p)).collect::<Result<Vec<_>>>()?;
        let chain = tail
            .split('-')
            .filter(|p| !p.is_empty())
            .map(|p| number(STAGE, p))
            .collect::<Result<Vec<_>>>()?;
        return Ok(HeadSpec::MultiScale { projections, chain });
    }
    Err(bad(STAGE, format!("`{s}` is neither MC-... nor MSO-(...)-...")))
}

fn temporal(s: &str) -> Result<TemporalMode> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "-" | "none" | "stereo4d" => Ok(TemporalMode::None),
        "mono-align-concat" => Ok(TemporalMode::MonoAlignConcat),
        other => Err(bad("temporal", format!("unknown temporal mode `{other}`"))),
    }
}

impl PipelineSpec {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let image_size = pair("size", &cfg.size)?;
        let stride = cfg.feature_stride;
        if stride == 0 || image_size.0 % stride != 0 || image_size.1 % stride != 0 {
            return Err(bad(
                "feature_stride",
                format!("{stride} does not divide image size {}x{}", image_size.0, image_size.1),
            ));
        }
        let feat_size = (image_size.0 / stride, image_size.1 / stride);
        let image_widths = backbone("image_backbone", &cfg.image_backbone, true)?;
        let image_factor = 1 << (image_widths.len() - 1);
        if !feat_size.0.is_multiple_of(image_factor) || !feat_size.1.is_multiple_of(image_factor) {
            return Err(bad(
                "image_backbone",
                format!(
                    "feature map {}x{} is not divisible by {image_factor}",
                    feat_size.0, feat_size.1
                ),
            ));
        }
        let image_neck = neck_width("image_neck", &cfg.image_neck)?;

        let (view, context_channels, (bev_w, bev_h), step) = view_transform(&cfg.view_transform)?;
        let [d0, d1] = cfg.depth_range;
        let depth = DepthBins::new(d0, d1, step).map_err(|e| bad("depth_range", e.to_string()))?;
        let grid = match cfg.grid {
            Some(g) => g,
            None if bev_w == bev_h => BevGridSpec::centered(bev_w, 80.0 / bev_w as f64),
            None => {
                return Err(bad(
                    "view_transform",
                    format!("non-square BEV {bev_w}x{bev_h} needs an explicit grid"),
                ))
            }
        };
        let (gw, gh, z) = grid.dims().map_err(|e| bad("grid", e.to_string()))?;
        if (gw, gh) != (bev_w, bev_h) {
            return Err(bad(
                "grid",
                format!("grid is {gw}x{gh} but the view transform asks for {bev_w}x{bev_h}"),
            ));
        }

        let bev_widths = backbone("bev_backbone", &cfg.bev_backbone, false)?;
        let bev_factor = 1 << (bev_widths.len() - 1);
        if gw % bev_factor != 0 || gh % bev_factor != 0 {
            return Err(bad("bev_backbone", format!("BEV {gw}x{gh} is not divisible by {bev_factor}")));
        }
        let bev_neck = neck_width("bev_neck", &cfg.bev_neck)?;
        let head = head(&cfg.head)?;
        let num_classes = NUM_CLASSES;
        let last = match &head {
            HeadSpec::MultiConv(w) => w.last().copied(),
            HeadSpec::MultiScale { .. } => Some(num_classes * z),
        };
        if cfg.path == HeadPath::Flash && last != Some(num_classes * z) {
            return Err(bad(
                "head",
                format!(
                    "final width {} must equal {num_classes} classes x {z} height bins",
                    last.unwrap_or(0)
                ),
            ));
        }
        if let HeadSpec::MultiScale { projections, .. } = &head {
            if projections.len() != 3 {
                return Err(bad("head", "multi-scale head takes exactly three inputs"));
            }
        }
        if cfg.path == HeadPath::Voxel && bev_neck % z != 0 {
            return Err(bad(
                "bev_neck",
                format!("voxel path splits the {bev_neck}-channel BEV into {z} height slices"),
            ));
        }
        Ok(Self {
            name: cfg.name.clone(),
            image_size,
            feature_stride: stride,
            feat_size,
            image_widths,
            image_neck,
            view,
            context_channels,
            depth,
            grid,
            bev_widths,
            bev_neck,
            head,
            temporal: temporal(&cfg.temporal)?,
            path: cfg.path,
            seed: cfg.seed,
            num_classes,
        })
    }

    pub fn z(&self) -> usize {
        self.grid.z()
    }

    /// Width chain of the multi-conv head starting at the BEV neck width; a
    /// leading width equal to the neck width is the neck output itself.
    pub fn head_chain(&self) -> Vec<usize> {
        let mut chain = vec![self.bev_neck];
        match &self.head {
            HeadSpec::MultiConv(widths) => {
                let skip = usize::from(widths.first() == Some(&self.bev_neck) && widths.len() > 1);
                chain.extend_from_slice(&widths[skip..]);
            }
            HeadSpec::MultiScale { chain: c, .. } => {
                chain.extend_from_slice(c);
                chain.push(self.num_classes * self.z());
            }
        }
        chain
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1() -> PipelineConfig {
        PipelineConfig {
            name: "M1".into(),
            size: "256x704".into(),
            feature_stride: 16,
            image_backbone: "R50".into(),
            image_neck: "FL-256".into(),
            view_transform: "LSS-64,200x200,0.5".into(),
            depth_range: [1.0, 45.0],
            bev_backbone: "3B-128-256-512".into(),
            bev_neck: "FL-256".into(),
            head: "MC-256-512-288".into(),
            temporal: "-".into(),
            path: HeadPath::Flash,
            seed: 0,
            grid: None,
        }
    }

    #[test]
    fn m1_tokens() {
        let s = m1().parse().unwrap();
        assert_eq!(s.feat_size, (16, 44));
        assert_eq!(s.depth.count(), 88);
        assert_eq!(s.grid.dims().unwrap(), (200, 200, 16));
        assert_eq!(s.head_chain(), vec![256, 512, 288]);
        assert_eq!(s.temporal, TemporalMode::None);
    }

    #[test]
    fn m0_chain_keeps_narrower_first_layer() {
        let mut c = m1();
        c.head = "MC-128-256-288".into();
        assert_eq!(c.parse().unwrap().head_chain(), vec![256, 128, 256, 288]);
    }

    #[test]
    fn mso_and_temporal() {
        let mut c = m1();
        c.head = "MSO-(256,256,256)-128-256".into();
        c.view_transform = "F-VTM-64,200×200,0.5".into();
        c.temporal = "Mono-align-concat".into();
        let s = c.parse().unwrap();
        assert_eq!(
            s.head,
            HeadSpec::MultiScale {
                projections: vec![256, 256, 256],
                chain: vec![128, 256]
            }
        );
        assert_eq!(s.head_chain(), vec![256, 128, 256, 288]);
        assert_eq!(s.temporal, TemporalMode::MonoAlignConcat);
    }

    #[test]
    fn errors_name_the_stage() {
        let mut c = m1();
        c.head = "MC-256-512-280".into();
        let e = c.parse().unwrap_err().to_string();
        assert!(e.contains("`head`"), "{e}");
        let mut c = m1();
        c.bev_backbone = "3B-128-256".into();
        assert!(c.parse().unwrap_err().to_string().contains("bev_backbone"));
        let mut c = m1();
        c.view_transform = "LSS-64,200x200,0.5 + B-VTM-1L-80-320".into();
        assert!(c.parse().is_err());
        let mut c = m1();
        c.path = HeadPath::Voxel;
        c.bev_neck = "FL-250".into();
        assert!(c.parse().unwrap_err().to_string().contains("bev_neck"));
    }

    #[test]
    fn json_errors_carry_offsets() {
        let err = PipelineConfig::from_json("{\"name\": 3}", Path::new("c.json")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }
}
