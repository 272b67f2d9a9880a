//! Synthetic worlds with exact ground truth.
//!
//! A scene is a list of primitives in the ego frame (earlier entries win
//! where they overlap) seen by a camera rig. From it we derive voxel labels,
//! per-camera oracle depth and semantic features, and voxel visibility.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{OccupancyGrid, VisibilityMask, FREE_CLASS, NUM_CLASSES};
use crate::geometry::{unproject, CameraRig, Point3, RigidTransform};
use crate::tensor::Tensor;
use crate::view_transform::BevGridSpec;

/// Occ3D-nuScenes category ids.
pub mod class {
    pub const OTHERS: u8 = 0;
    pub const BARRIER: u8 = 1;
    pub const BICYCLE: u8 = 2;
    pub const BUS: u8 = 3;
    pub const CAR: u8 = 4;
    pub const CONSTRUCTION_VEHICLE: u8 = 5;
    pub const MOTORCYCLE: u8 = 6;
    pub const PEDESTRIAN: u8 = 7;
    pub const TRAFFIC_CONE: u8 = 8;
    pub const TRAILER: u8 = 9;
    pub const TRUCK: u8 = 10;
    pub const DRIVEABLE_SURFACE: u8 = 11;
    pub const OTHER_FLAT: u8 = 12;
    pub const SIDEWALK: u8 = 13;
    pub const TERRAIN: u8 = 14;
    pub const MANMADE: u8 = 15;
    pub const VEGETATION: u8 = 16;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    /// Centered box of full extents `size`.
    Box,
    /// Upright cylinder: diameter `size[0]`, height `size[2]`, centered.
    Cylinder,
    /// Slab of `size[0] × size[1]` with its top face at local `z = 0` and
    /// thickness `size[2]`.
    GroundPlane,
}

/// `pose` maps the primitive's local frame into the ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrimitive {
    pub kind: PrimitiveKind,
    pub pose: RigidTransform,
    pub size: [f64; 3],
    pub class_id: u8,
}

impl ScenePrimitive {
    pub fn new(kind: PrimitiveKind, pose: RigidTransform, size: [f64; 3], class_id: u8) -> Result<Self> {
        let p = Self {
            kind,
            pose,
            size,
            class_id,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if usize::from(self.class_id) >= NUM_CLASSES || self.class_id == FREE_CLASS {
            return Err(Error::invalid(
                "scene_primitive",
                format!("class {} is not a semantic class", self.class_id),
            ));
        }
        if !self.size.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::invalid("scene_primitive", format!("size {:?} must be positive", self.size)));
        }
        Ok(())
    }

    /// Local-frame axis-aligned bounds `(lo, hi)` of the box-like kinds.
    fn local_box(&self) -> ([f64; 3], [f64; 3]) {
        let [sx, sy, sz] = self.size;
        match self.kind {
            PrimitiveKind::GroundPlane => ([-sx / 2.0, -sy / 2.0, -sz], [sx / 2.0, sy / 2.0, 0.0]),
            _ => ([-sx / 2.0, -sy / 2.0, -sz / 2.0], [sx / 2.0, sy / 2.0, sz / 2.0]),
        }
    }

    pub fn contains(&self, p: Point3) -> bool {
        let q = self.pose.inverse().apply(p);
        let (lo, hi) = self.local_box();
        let in_z = q[2] >= lo[2] && q[2] <= hi[2];
        match self.kind {
            PrimitiveKind::Cylinder => {
                let r = self.size[0] / 2.0;
                in_z && q[0] * q[0] + q[1] * q[1] <= r * r
            }
            _ => in_z && (0..2).all(|i| q[i] >= lo[i] && q[i] <= hi[i]),
        }
    }

    /// Smallest `t > 0` where `origin + t·dir` enters the primitive, or the
    /// exit point if the origin is inside.
    pub fn intersect(&self, origin: Point3, dir: Point3) -> Option<f64> {
        let inv = self.pose.inverse();
        let o = inv.apply(origin);
        let d = inv.apply_rotation(dir);
        let (t0, t1) = match self.kind {
            PrimitiveKind::Cylinder => cylinder_span(o, d, self.size[0] / 2.0, self.size[2] / 2.0)?,
            _ => {
                let (lo, hi) = self.local_box();
                slab_span(o, d, lo, hi)?
            }
        };
        if t1 < 0.0 {
            None
        } else if t0 > 0.0 {
            Some(t0)
        } else {
            Some(t1)
        }
    }
}

/// Parameter interval of a ray inside an axis-aligned box.
pub(crate) fn slab_span(o: Point3, d: Point3, lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if d[i] == 0.0 {
            if o[i] < lo[i] || o[i] > hi[i] {
                return None;
            }
        } else {
            let a = (lo[i] - o[i]) / d[i];
            let b = (hi[i] - o[i]) / d[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

fn cylinder_span(o: Point3, d: Point3, r: f64, half_h: f64) -> Option<(f64, f64)> {
    // Height slab.
    let (mut t0, mut t1) = if d[2] == 0.0 {
        if o[2].abs() > half_h {
            return None;
        }
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        let a = (-half_h - o[2]) / d[2];
        let b = (half_h - o[2]) / d[2];
        (a.min(b), a.max(b))
    };
    // Infinite side wall.
    let qa = d[0] * d[0] + d[1] * d[1];
    let qb = 2.0 * (o[0] * d[0] + o[1] * d[1]);
    let qc = o[0] * o[0] + o[1] * o[1] - r * r;
    if qa == 0.0 {
        if qc > 0.0 {
            return None;
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        t0 = t0.max((-qb - s) / (2.0 * qa));
        t1 = t1.min((-qb + s) / (2.0 * qa));
    }
    (t0 <= t1).then_some((t0, t1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<BevGridSpec>,
    pub rig: CameraRig,
    pub primitives: Vec<ScenePrimitive>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        for p in &self.primitives {
            p.validate()?;
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        Ok(())
    }

    /// The scene's own grid, or the default lattice.
    pub fn grid_or_default(&self) -> BevGridSpec {
        self.grid.unwrap_or_default()
    }

    /// Index and ray parameter of the first primitive hit.
    pub fn first_hit(&self, origin: Point3, dir: Point3) -> Option<(usize, f64)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(origin, dir).map(|t| (i, t)))
            .fold(None, |best: Option<(usize, f64)>, (i, t)| match best {
                Some((_, bt)) if bt <= t => best,
                _ => Some((i, t)),
            })
    }

    /// Label of the highest-priority primitive containing `p`.
    pub fn label_at(&self, p: Point3) -> u8 {
        self.primitives
            .iter()
            .find(|prim| prim.contains(p))
            .map_or(FREE_CLASS, |prim| prim.class_id)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid("scene", e.to_string()))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let scene: Scene = serde_json::from_str(text).map_err(|e| json_error(text, origin, &e))?;
        scene.validate().map_err(|e| Error::Format {
            path: origin.to_path_buf(),
            offset: 0,
            detail: e.to_string(),
        })?;
        Ok(scene)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

/// Converts a serde_json line/column position into a byte offset.
pub(crate) fn json_error(text: &str, origin: &Path, e: &serde_json::Error) -> Error {
    let line = e.line().max(1);
    let offset: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum::<usize>()
        + e.column().saturating_sub(1);
    Error::Format {
        path: origin.to_path_buf(),
        offset: offset.min(text.len()) as u64,
        detail: e.to_string(),
    }
}

/// Labels every voxel by the primitive containing its center.
pub fn voxelize(scene: &Scene, grid: &BevGridSpec) -> Result<OccupancyGrid> {
    let (w, h, z) = grid.dims()?;
    let mut labels = Vec::with_capacity(w * h * z);
    for iz in 0..z {
        for iy in 0..h {
            for ix in 0..w {
                labels.push(scene.label_at(grid.cell_center(ix, iy, iz)));
            }
        }
    }
    OccupancyGrid::new(w, h, z, NUM_CLASSES, labels)
}

/// Per-camera ground truth at feature resolution.
#[derive(Debug)]
pub struct OracleRender {
    /// Camera-z depth per feature cell (row-major `h × w`); `INFINITY` on a
    /// miss.
    pub depth: Vec<f32>,
    /// One-hot class `[1, C*, h, w]`, zero on a miss.
    pub features: Tensor,
}

/// Casts one ray through every feature-cell center of camera `cam_index`.
pub fn render_oracle(scene: &Scene, cam_index: usize, feat_w: usize, feat_h: usize) -> Result<OracleRender> {
    let camera = scene.rig.cameras().get(cam_index).ok_or_else(|| {
        Error::invalid(
            "render_oracle",
            format!("camera {cam_index} of {}", scene.rig.len()),
        )
    })?;
    if feat_w == 0 || feat_h == 0 {
        return Err(Error::invalid("render_oracle", "feature map must be non-empty"));
    }
    let intr = &camera.intrinsics;
    let (sx, sy) = (f64::from(intr.width) / feat_w as f64, f64::from(intr.height) / feat_h as f64);
    let origin = camera.cam_to_ego.translation();
    let plane = feat_w * feat_h;
    let mut depth = vec![f32::INFINITY; plane];
    let mut features = Tensor::zeros(&[1, NUM_CLASSES, feat_h, feat_w]);
    for y in 0..feat_h {
        for x in 0..feat_w {
            let (u, v) = ((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy);
            // Unit camera-z step, so the ray parameter is the depth.
            let dir = camera.cam_to_ego.apply_rotation(unproject(u, v, 1.0, intr));
            if let Some((i, t)) = scene.first_hit(origin, dir) {
                let cell = y * feat_w + x;
                depth[cell] = t as f32;
                let class = usize::from(scene.primitives[i].class_id);
                features.data_mut()[class * plane + cell] = 1.0;
            }
        }
    }
    Ok(OracleRender { depth, features })
}

/// A voxel is visible if it projects into some camera and the first surface
/// along the ray to its center is not in front of the voxel.
pub fn visibility_mask(scene: &Scene, rig: &CameraRig, grid: &BevGridSpec) -> Result<VisibilityMask> {
    let (w, h, z) = grid.dims()?;
    let half = [grid.xy_res / 2.0, grid.xy_res / 2.0, grid.z_res / 2.0];
    let mut flags = vec![false; w * h * z];
    for camera in rig.cameras() {
        let to_cam = camera.cam_to_ego.inverse();
        let origin = camera.cam_to_ego.translation();
        for iz in 0..z {
            for iy in 0..h {
                for ix in 0..w {
                    let i = (iz * h + iy) * w + ix;
                    if flags[i] {
                        continue;
                    }
                    let c = grid.cell_center(ix, iy, iz);
                    let pc = to_cam.apply(c);
                    if pc[2] <= 0.0 {
                        continue;
                    }
                    let (u, v) = (
                        camera.intrinsics.fx * pc[0] / pc[2] + camera.intrinsics.cx,
                        camera.intrinsics.fy * pc[1] / pc[2] + camera.intrinsics.cy,
                    );
                    if !camera.intrinsics.contains_pixel(u, v) {
                        continue;
                    }
                    let dir = [c[0] - origin[0], c[1] - origin[1], c[2] - origin[2]];
                    let lo = [c[0] - half[0], c[1] - half[1], c[2] - half[2]];
                    let hi = [c[0] + half[0], c[1] + half[1], c[2] + half[2]];
                    let t_enter = slab_span(origin, dir, lo, hi).map_or(1.0, |(t0, _)| t0.max(0.0));
                    flags[i] = match scene.first_hit(origin, dir) {
                        None => true,
                        Some((_, t)) => t >= t_enter - 1e-9,
                    };
                }
            }
        }
    }
    VisibilityMask::new(w, h, z, flags)
}

/// Ground slab plus randomly placed vehicles, pedestrians, cones,
/// buildings and trees, kept clear of the ego vehicle.
pub fn random_scene(seed: u64, rig: CameraRig, grid: Option<BevGridSpec>, objects: usize) -> Result<Scene> {
    let g = grid.unwrap_or_default();
    g.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ground_top = g.z_min + g.z_res;
    let mut primitives = Vec::with_capacity(objects + 1);
    let margin = 1.0;
    while primitives.len() < objects {
        let x = rng.gen_range(g.x_min + margin..g.x_max - margin);
        let y = rng.gen_range(g.y_min + margin..g.y_max - margin);
        if x.abs() < 3.0 && y.abs() < 3.0 {
            continue;
        }
        let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let (kind, size, class_id) = match rng.gen_range(0..6) {
            0 => (PrimitiveKind::Box, [4.5, 1.9, 1.6], class::CAR),
            1 => (PrimitiveKind::Box, [8.0, 2.5, 3.2], class::TRUCK),
            2 => (PrimitiveKind::Cylinder, [0.6, 0.6, 1.8], class::PEDESTRIAN),
            3 => (PrimitiveKind::Cylinder, [0.4, 0.4, 0.8], class::TRAFFIC_CONE),
            4 => (PrimitiveKind::Box, [6.0, 5.0, 5.0], class::MANMADE),
            _ => (PrimitiveKind::Cylinder, [2.5, 2.5, 4.0], class::VEGETATION),
        };
        let jitter: f64 = rng.gen_range(0.8..1.2);
        let size = [size[0] * jitter, size[1] * jitter, size[2] * jitter];
        let pose = RigidTransform::from_yaw(yaw, [x, y, ground_top + size[2] / 2.0]);
        primitives.push(ScenePrimitive::new(kind, pose, size, class_id)?);
    }
    let span = [g.x_max - g.x_min, g.y_max - g.y_min];
    let center = [(g.x_max + g.x_min) / 2.0, (g.y_max + g.y_min) / 2.0, ground_top];
    primitives.push(ScenePrimitive::new(
        PrimitiveKind::GroundPlane,
        RigidTransform::from_translation(center),
        [span[0], span[1], g.z_res],
        class::DRIVEABLE_SURFACE,
    )?);
    Ok(Scene {
        seed,
        grid,
        rig,
        primitives,
    })
}

/// Single-cell columns standing on `z_min`: every cell is independently a
/// column with probability `fill`, of random semantic class and a height of
/// `1..=Z` voxels. Columns are shrunk by `shrink` metres on every side so
/// neighbours never touch.
pub fn pillar_scene(seed: u64, rig: CameraRig, grid: BevGridSpec, fill: f64, shrink: f64) -> Result<Scene> {
    let (w, h, z) = grid.dims()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut primitives = Vec::new();
    for iy in 0..h {
        for ix in 0..w {
            if !rng.gen_bool(fill) {
                continue;
            }
            let class_id = rng.gen_range(0..FREE_CLASS);
            let height = rng.gen_range(1..=z);
            let c = grid.cell_center(ix, iy, 0);
            let top = grid.z_min + height as f64 * grid.z_res - shrink;
            let bottom = grid.z_min + shrink;
            let size = [grid.xy_res - 2.0 * shrink, grid.xy_res - 2.0 * shrink, top - bottom];
            let pose = RigidTransform::from_translation([c[0], c[1], (top + bottom) / 2.0]);
            primitives.push(ScenePrimitive::new(PrimitiveKind::Box, pose, size, class_id)?);
        }
    }
    Ok(Scene {
        seed,
        grid: Some(grid),
        rig,
        primitives,
    })
}

/// Per-pillar features that make voxel labels linearly separable:
/// one-hot of the topmost non-free class (free if empty) followed by one-hot
/// of the count of occupied voxels (`0..=Z`). Shape `[1, C + Z + 1, H, W]`.
pub fn pillar_features(gt: &OccupancyGrid) -> Tensor {
    let (w, h, z) = gt.dims();
    let nc = gt.num_classes();
    let free = (nc - 1) as u8;
    let plane = w * h;
    let mut out = Tensor::zeros(&[1, nc + z + 1, h, w]);
    for iy in 0..h {
        for ix in 0..w {
            let mut top = free;
            let mut count = 0;
            for iz in 0..z {
                let l = gt.get(ix, iy, iz);
                if l != free {
                    top = l;
                    count += 1;
                }
            }
            let p = iy * w + ix;
            out.data_mut()[usize::from(top) * plane + p] = 1.0;
            out.data_mut()[(nc + count) * plane + p] = 1.0;
        }
    }
    out
}
