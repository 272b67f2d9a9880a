//! Occupancy grids, visibility masks and mIoU scoring.
//!
//! Voxels are stored x-fastest: `index = (z·H + y)·W + x`. Grids and masks
//! share the OCCG container:
//!
//! ```text
//! "OCCG" | u32 version=1 | u32 W | u32 H | u32 Z | u32 num_classes | W·H·Z label bytes
//! ```
//!
//! all little-endian. A mask is an OCCG grid with two classes.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Semantic categories plus one free class.
pub const NUM_CLASSES: usize = 18;
/// Label of empty space.
pub const FREE_CLASS: u8 = 17;

const MAGIC: &[u8; 4] = b"OCCG";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyGrid {
    w: usize,
    h: usize,
    z: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl OccupancyGrid {
    pub fn new(w: usize, h: usize, z: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if w == 0 || h == 0 || z == 0 {
            return Err(Error::invalid("occupancy_grid", format!("dims {w}x{h}x{z} must be positive")));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::invalid("occupancy_grid", format!("{num_classes} classes do not fit in a byte")));
        }
        if labels.len() != w * h * z {
            return Err(Error::shape(
                "occupancy_grid",
                format!("{} labels for {w}x{h}x{z}", labels.len()),
            ));
        }
        if let Some(i) = labels.iter().position(|&l| usize::from(l) >= num_classes) {
            return Err(Error::invalid(
                "occupancy_grid",
                format!("label {} at index {i} is not below {num_classes}", labels[i]),
            ));
        }
        Ok(Self {
            w,
            h,
            z,
            num_classes,
            labels,
        })
    }

    pub fn filled(w: usize, h: usize, z: usize, num_classes: usize, label: u8) -> Result<Self> {
        Self::new(w, h, z, num_classes, vec![label; w * h * z])
    }

    /// `(W, H, Z)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w, self.h, self.z)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.w && y < self.h && z < self.z);
        (z * self.h + y) * self.w + x
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, label: u8) -> Result<()> {
        if usize::from(label) >= self.num_classes {
            return Err(Error::invalid("occupancy_grid", format!("label {label} out of range")));
        }
        let i = self.index(x, y, z);
        self.labels[i] = label;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.labels.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.w as u32, self.h as u32, self.z as u32, self.num_classes as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.labels);
        out
    }

    /// Parses an OCCG buffer; `origin` names the source in errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |offset: usize, detail: String| Error::Format {
            path: origin.to_path_buf(),
            offset: offset as u64,
            detail,
        };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(fail(0, "missing OCCG magic".into()));
        }
        let word = |i: usize| -> Result<u32> {
            let at = 4 + 4 * i;
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| fail(bytes.len(), "truncated header".into()))
        };
        let version = word(0)?;
        if version != VERSION {
            return Err(fail(4, format!("unsupported version {version}")));
        }
        let (w, h, z, nc) = (word(1)? as usize, word(2)? as usize, word(3)? as usize, word(4)? as usize);
        if w == 0 || h == 0 || z == 0 {
            return Err(fail(8, format!("dims {w}x{h}x{z} must be positive")));
        }
        if nc == 0 || nc > 256 {
            return Err(fail(20, format!("class count {nc} must be in 1..=256")));
        }
        let n = w
            .checked_mul(h)
            .and_then(|v| v.checked_mul(z))
            .ok_or_else(|| fail(8, "dims overflow".into()))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() < n {
            return Err(fail(bytes.len(), format!("expected {n} label bytes, found {}", body.len())));
        }
        if body.len() > n {
            return Err(fail(HEADER_LEN + n, "trailing bytes after labels".into()));
        }
        if let Some(i) = body.iter().position(|&l| usize::from(l) >= nc) {
            return Err(fail(HEADER_LEN + i, format!("label {} is not below {nc}", body[i])));
        }
        Self::new(w, h, z, nc, body.to_vec())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    w: usize,
    h: usize,
    z: usize,
    visible: Vec<bool>,
}

impl VisibilityMask {
    pub fn new(w: usize, h: usize, z: usize, visible: Vec<bool>) -> Result<Self> {
        if visible.len() != w * h * z || visible.is_empty() {
            return Err(Error::shape(
                "visibility_mask",
                format!("{} flags for {w}x{h}x{z}", visible.len()),
            ));
        }
        Ok(Self { w, h, z, visible })
    }

    pub fn filled(w: usize, h: usize, z: usize, visible: bool) -> Result<Self> {
        Self::new(w, h, z, vec![visible; w * h * z])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w, self.h, self.z)
    }

    pub fn flags(&self) -> &[bool] {
        &self.visible
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.visible[(z * self.h + y) * self.w + x]
    }

    pub fn count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn to_grid(&self) -> OccupancyGrid {
        let labels = self.visible.iter().map(|&v| u8::from(v)).collect();
        OccupancyGrid::new(self.w, self.h, self.z, 2, labels).expect("mask dims are valid")
    }

    pub fn from_grid(grid: &OccupancyGrid) -> Result<Self> {
        if grid.num_classes() != 2 {
            return Err(Error::invalid(
                "visibility_mask",
                format!("mask grids have 2 classes, found {}", grid.num_classes()),
            ));
        }
        let (w, h, z) = grid.dims();
        Self::new(w, h, z, grid.labels().iter().map(|&l| l == 1).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_grid().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let grid = OccupancyGrid::read(path)?;
        Self::from_grid(&grid).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: 20,
            detail: e.to_string(),
        })
    }
}

/// `counts[g · n + p]`: voxels with ground truth `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize, counts: Vec<u64>) -> Result<Self> {
        if n == 0 || counts.len() != n * n {
            return Err(Error::shape("confusion", format!("{} counts for {n} classes", counts.len())));
        }
        Ok(Self { n, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn confusion(pred: &OccupancyGrid, gt: &OccupancyGrid, mask: Option<&VisibilityMask>) -> Result<ConfusionMatrix> {
    if pred.dims() != gt.dims() || pred.num_classes() != gt.num_classes() {
        return Err(Error::shape(
            "confusion",
            format!(
                "prediction {:?}/{} classes vs ground truth {:?}/{} classes",
                pred.dims(),
                pred.num_classes(),
                gt.dims(),
                gt.num_classes()
            ),
        ));
    }
    if let Some(m) = mask {
        if m.dims() != gt.dims() {
            return Err(Error::shape(
                "confusion",
                format!("mask {:?} vs grid {:?}", m.dims(), gt.dims()),
            ));
        }
    }
    let n = gt.num_classes();
    let mut counts = vec![0u64; n * n];
    let labels = pred.labels().iter().zip(gt.labels());
    match mask {
        Some(m) => {
            for ((&p, &g), &keep) in labels.zip(m.flags()) {
                if keep {
                    counts[usize::from(g) * n + usize::from(p)] += 1;
                }
            }
        }
        None => {
            for (&p, &g) in labels {
                counts[usize::from(g) * n + usize::from(p)] += 1;
            }
        }
    }
    ConfusionMatrix::new(n, counts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiouReport {
    /// IoU per class id; `None` where the class is absent from both
    /// prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean over the defined evaluation classes; `None` if none is defined.
    pub miou: Option<f64>,
}

/// Per-class IoU and its mean over `eval_classes`.
pub fn miou(conf: &ConfusionMatrix, eval_classes: &[usize]) -> Result<MiouReport> {
    if eval_classes.is_empty() {
        return Err(Error::invalid("miou", "empty evaluation class set"));
    }
    let n = conf.num_classes();
    if let Some(&c) = eval_classes.iter().find(|&&c| c >= n) {
        return Err(Error::invalid("miou", format!("class {c} outside the {n}-class matrix")));
    }
    let per_class_iou: Vec<Option<f64>> = (0..n)
        .map(|c| {
            let tp = conf.get(c, c);
            let fn_: u64 = (0..n).map(|p| conf.get(c, p)).sum::<u64>() - tp;
            let fp: u64 = (0..n).map(|g| conf.get(g, c)).sum::<u64>() - tp;
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let defined: Vec<f64> = eval_classes.iter().filter_map(|&c| per_class_iou[c]).collect();
    let miou = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(MiouReport { per_class_iou, miou })
}

/// All classes except the last (free) one.
pub fn semantic_classes(num_classes: usize) -> Vec<usize> {
    (0..num_classes.saturating_sub(1)).collect()
}
