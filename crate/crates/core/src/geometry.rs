//! Pinhole cameras, rigid transforms and depth frustums.
//!
//! Camera frame: x right, y down, z forward. Ego frame: x forward, y left,
//! z up. Geometry is computed in `f64`; features stay `f32`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point and square pixels for a horizontal field of view.
    pub fn from_fov(width: u32, height: u32, hfov_deg: f64) -> Result<Self> {
        let f = f64::from(width) / 2.0 / (hfov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, f64::from(width) / 2.0, f64::from(height) / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..f64::from(self.width)).contains(&self.cx)
            && (0.0..f64::from(self.height)).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("intrinsics", format!("{self:?}")))
        }
    }

    /// Pixel of a camera-frame point, `None` behind the camera.
    pub fn project(&self, p: Point3) -> Option<(f64, f64)> {
        (p[2] > 0.0).then(|| (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy))
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        (0.0..f64::from(self.width)).contains(&u) && (0.0..f64::from(self.height)).contains(&v)
    }
}

/// Back-projects pixel `(u, v)` at z-depth `depth` into the camera frame.
pub fn pixel_to_camera(u: f64, v: f64, depth: f64, intr: &CameraIntrinsics) -> Result<Point3> {
    if !(depth > 0.0) {
        return Err(Error::invalid(
            "pixel_to_camera",
            format!("depth must be positive, got {depth}"),
        ));
    }
    Ok(unproject(u, v, depth, intr))
}

pub(crate) fn unproject(u: f64, v: f64, depth: f64, intr: &CameraIntrinsics) -> Point3 {
    [
        (u - intr.cx) / intr.fx * depth,
        (v - intr.cy) / intr.fy * depth,
        depth,
    ]
}

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct RigidTransform {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct RawTransform {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<RawTransform> for RigidTransform {
    type Error = Error;

    fn try_from(raw: RawTransform) -> Result<Self> {
        RigidTransform::new(raw.rotation, raw.translation)
    }
}

impl From<RigidTransform> for RawTransform {
    fn from(t: RigidTransform) -> Self {
        RawTransform {
            rotation: t.rotation,
            translation: t.translation,
        }
    }
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn matvec3(a: &[[f64; 3]; 3], p: Point3) -> Point3 {
    [
        a[0][0] * p[0] + a[0][1] * p[1] + a[0][2] * p[2],
        a[1][0] * p[0] + a[1][1] * p[1] + a[1][2] * p[2],
        a[2][0] * p[0] + a[2][1] * p[1] + a[2][2] * p[2],
    ]
}

fn transpose3(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize(a: Point3) -> Point3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl RigidTransform {
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let rtr = matmul3(&transpose3(&rotation), &rotation);
        let mut worst = 0.0f64;
        for (i, row) in rtr.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        let r = &rotation;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if worst > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL || translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "rigid_transform",
                format!("not a proper rotation (|RᵀR − I| = {worst:.3e}, det = {det:.6})"),
            ));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation about +z by `yaw` radians followed by translation `t`.
    pub fn from_yaw(yaw: f64, t: [f64; 3]) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation: t,
        }
    }

    /// Rodrigues rotation about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64, t: [f64; 3]) -> Self {
        let [x, y, z] = normalize(axis);
        let (s, c) = angle.sin_cos();
        let v = 1.0 - c;
        Self {
            rotation: [
                [c + x * x * v, x * y * v - z * s, x * z * v + y * s],
                [y * x * v + z * s, c + y * y * v, y * z * v - x * s],
                [z * x * v - y * s, z * y * v + x * s, c + z * z * v],
            ],
            translation: t,
        }
    }

    /// Camera-to-ego transform of a camera at `position` whose optical axis
    /// points along `forward`. `up` fixes the roll (image y points away from it).
    pub fn look_along(position: Point3, forward: Point3, up: Point3) -> Result<Self> {
        let f = normalize(forward);
        let right = cross(f, up);
        if right.iter().map(|v| v * v).sum::<f64>() < 1e-12 {
            return Err(Error::invalid("look_along", "forward is parallel to up"));
        }
        let r = normalize(right);
        let down = cross(f, r);
        let rotation = [
            [r[0], down[0], f[0]],
            [r[1], down[1], f[1]],
            [r[2], down[2], f[2]],
        ];
        Self::new(rotation, position)
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> [f64; 3] {
        self.translation
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let r = matvec3(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    pub fn apply_rotation(&self, p: Point3) -> Point3 {
        matvec3(&self.rotation, p)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: matmul3(&self.rotation, &other.rotation),
            translation: self.apply(other.translation),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = transpose3(&self.rotation);
        let t = matvec3(&rt, self.translation);
        RigidTransform {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    /// Heading of the rotated x axis in the x–y plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[1][0].atan2(self.rotation[0][0])
    }

    /// Planar reduction: keeps yaw and x–y translation, drops z, roll, pitch.
    pub fn to_planar(&self) -> RigidTransform {
        RigidTransform::from_yaw(self.yaw(), [self.translation[0], self.translation[1], 0.0])
    }
}

pub fn transform_point(p: Point3, t: &RigidTransform) -> Point3 {
    t.apply(p)
}

pub fn compose(t1: &RigidTransform, t2: &RigidTransform) -> RigidTransform {
    t1.compose(t2)
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    pub cam_to_ego: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRig", into = "RawRig")]
pub struct CameraRig {
    cameras: Vec<Camera>,
}

#[derive(Serialize, Deserialize)]
struct RawRig {
    cameras: Vec<Camera>,
}

impl TryFrom<RawRig> for CameraRig {
    type Error = Error;

    fn try_from(raw: RawRig) -> Result<Self> {
        CameraRig::new(raw.cameras)
    }
}

impl From<CameraRig> for RawRig {
    fn from(rig: CameraRig) -> Self {
        RawRig {
            cameras: rig.cameras,
        }
    }
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::invalid("camera_rig", "at least one camera is required"));
        }
        for (i, cam) in cameras.iter().enumerate() {
            cam.intrinsics.validate()?;
            if cameras[..i].iter().any(|c| c.name == cam.name) {
                return Err(Error::invalid(
                    "camera_rig",
                    format!("duplicate camera name `{}`", cam.name),
                ));
            }
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Six outward-facing cameras in the usual surround layout: front,
    /// front-left, front-right, back-left, back-right, back.
    pub fn surround(width: u32, height: u32) -> Result<Self> {
        let specs: [(&str, f64, f64, [f64; 2]); 6] = [
            ("CAM_FRONT", 0.0, 70.0, [1.7, 0.0]),
            ("CAM_FRONT_LEFT", 55.0, 70.0, [1.5, 0.5]),
            ("CAM_FRONT_RIGHT", -55.0, 70.0, [1.5, -0.5]),
            ("CAM_BACK_LEFT", 110.0, 70.0, [0.0, 0.5]),
            ("CAM_BACK_RIGHT", -110.0, 70.0, [0.0, -0.5]),
            ("CAM_BACK", 180.0, 110.0, [-1.0, 0.0]),
        ];
        let cameras = specs
            .iter()
            .map(|&(name, yaw_deg, fov, [x, y])| {
                let (s, c) = yaw_deg.to_radians().sin_cos();
                Ok(Camera {
                    name: name.to_string(),
                    intrinsics: CameraIntrinsics::from_fov(width, height, fov)?,
                    cam_to_ego: RigidTransform::look_along([x, y, 1.6], [c, s, 0.0], [0.0, 0.0, 1.0])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cameras)
    }
}

/// Sample lattice of one camera: feature-cell centers × depth-bin centers.
#[derive(Debug, Clone, PartialEq)]
pub struct FrustumGrid {
    pub feat_w: usize,
    pub feat_h: usize,
    pub stride_px: f64,
    pub depth_start: f64,
    pub depth_step: f64,
    pub depths: Vec<f64>,
}

impl FrustumGrid {
    pub fn depth_bins(&self) -> usize {
        self.depths.len()
    }

    pub fn len(&self) -> usize {
        self.feat_w * self.feat_h * self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel center of feature cell column `x`.
    pub fn u(&self, x: usize) -> f64 {
        (x as f64 + 0.5) * self.stride_px
    }

    pub fn v(&self, y: usize) -> f64 {
        (y as f64 + 0.5) * self.stride_px
    }

    /// `(u, v, d)` samples in `(d, y, x)` order.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.depths.iter().flat_map(move |&d| {
            (0..self.feat_h).flat_map(move |y| (0..self.feat_w).map(move |x| (self.u(x), self.v(y), d)))
        })
    }

    /// Index of the bin whose interval `[start + i·step, start + (i+1)·step)`
    /// contains `depth`, if any.
    pub fn bin_of(&self, depth: f64) -> Option<usize> {
        if !depth.is_finite() {
            return None;
        }
        let i = ((depth - self.depth_start) / self.depth_step).floor();
        (i >= 0.0 && (i as usize) < self.depths.len()).then_some(i as usize)
    }
}

/// Number of whole bins of `step` in `[start, end)`, tolerant of the
/// rounding in ratios such as `44 / 0.5`.
pub fn bin_count(start: f64, end: f64, step: f64) -> usize {
    ((end - start) / step + 1e-9).floor().max(0.0) as usize
}

pub fn build_frustum(
    feat_w: usize,
    feat_h: usize,
    stride_px: f64,
    depth_start_m: f64,
    depth_end_m: f64,
    depth_step_m: f64,
) -> Result<FrustumGrid> {
    if !(depth_start_m > 0.0 && depth_end_m > depth_start_m && depth_step_m > 0.0) {
        return Err(Error::invalid(
            "build_frustum",
            format!("need 0 < start < end and step > 0, got [{depth_start_m}, {depth_end_m}) step {depth_step_m}"),
        ));
    }
    if feat_w == 0 || feat_h == 0 || !(stride_px > 0.0) {
        return Err(Error::invalid("build_frustum", "feature map and stride must be positive"));
    }
    let d = bin_count(depth_start_m, depth_end_m, depth_step_m);
    if d == 0 {
        return Err(Error::invalid(
            "build_frustum",
            format!("range [{depth_start_m}, {depth_end_m}) holds no bin of {depth_step_m} m"),
        ));
    }
    Ok(FrustumGrid {
        feat_w,
        feat_h,
        stride_px,
        depth_start: depth_start_m,
        depth_step: depth_step_m,
        depths: (0..d)
            .map(|i| depth_start_m + (i as f64 + 0.5) * depth_step_m)
            .collect(),
    })
}
