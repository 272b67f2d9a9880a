//! Camera features → flattened BEV features.
//!
//! LSS predicts a per-pixel depth distribution, lifts each context vector
//! along its camera ray weighted by that distribution, and splats the
//! resulting frustum points into the BEV lattice by sum pooling (the height
//! axis collapses in the same sum). LS is the same with a uniform
//! distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_frustum, unproject, Camera, CameraRig, FrustumGrid};
use crate::ops::{conv2d, softmax_axis, Conv2dParams};
use crate::tensor::Tensor;

/// Metric extents and resolution of the BEV / occupancy lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub xy_res: f64,
    pub z_res: f64,
}

fn whole_cells(span: f64, res: f64) -> Option<usize> {
    let n = span / res;
    let r = n.round();
    (res > 0.0 && r >= 1.0 && (n - r).abs() < 1e-6).then_some(r as usize)
}

impl BevGridSpec {
    /// x, y ∈ [−40, 40) m and z ∈ [−1, 5.4) m at 0.4 m: 200 × 200 × 16.
    pub fn occ3d() -> Self {
        Self {
            x_min: -40.0,
            x_max: 40.0,
            y_min: -40.0,
            y_max: 40.0,
            z_min: -1.0,
            z_max: 5.4,
            xy_res: 0.4,
            z_res: 0.4,
        }
    }

    /// Square lattice of `cells × cells` centred on the ego origin, with the
    /// Occ3D height range.
    pub fn centered(cells: usize, xy_res: f64) -> Self {
        let half = cells as f64 * xy_res / 2.0;
        Self {
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
            xy_res,
            ..Self::occ3d()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().map(|_| ())
    }

    /// `(W, H, Z)`: cells along x, y, z.
    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        let w = whole_cells(self.x_max - self.x_min, self.xy_res);
        let h = whole_cells(self.y_max - self.y_min, self.xy_res);
        let z = whole_cells(self.z_max - self.z_min, self.z_res);
        match (w, h, z) {
            (Some(w), Some(h), Some(z)) => Ok((w, h, z)),
            _ => Err(Error::invalid(
                "bev_grid",
                format!("extents are not whole multiples of the resolution: {self:?}"),
            )),
        }
    }

    pub fn w(&self) -> usize {
        self.dims().expect("validated grid").0
    }

    pub fn h(&self) -> usize {
        self.dims().expect("validated grid").1
    }

    pub fn z(&self) -> usize {
        self.dims().expect("validated grid").2
    }

    /// Same footprint with the whole height range in a single bin.
    pub fn collapsed(&self) -> Self {
        Self {
            z_res: self.z_max - self.z_min,
            ..*self
        }
    }

    /// `(ix, iy, iz)` of the cell containing an ego point.
    pub fn cell_of(&self, p: [f64; 3]) -> Option<(usize, usize, usize)> {
        let (w, h, z) = self.dims().ok()?;
        let fx = ((p[0] - self.x_min) / self.xy_res).floor();
        let fy = ((p[1] - self.y_min) / self.xy_res).floor();
        let fz = ((p[2] - self.z_min) / self.z_res).floor();
        let inside = p[2] >= self.z_min
            && p[2] < self.z_max
            && (0.0..w as f64).contains(&fx)
            && (0.0..h as f64).contains(&fy)
            && (0.0..z as f64).contains(&fz);
        inside.then_some((fx as usize, fy as usize, fz as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        [
            self.x_min + (ix as f64 + 0.5) * self.xy_res,
            self.y_min + (iy as f64 + 0.5) * self.xy_res,
            self.z_min + (iz as f64 + 0.5) * self.z_res,
        ]
    }
}

impl Default for BevGridSpec {
    fn default() -> Self {
        Self::occ3d()
    }
}

/// Uniform metric depth bins `[start, end)` of width `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthBins {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl DepthBins {
    pub fn new(start: f64, end: f64, step: f64) -> Result<Self> {
        let bins = Self { start, end, step };
        bins.frustum(1, 1, 1.0)?;
        Ok(bins)
    }

    pub fn count(&self) -> usize {
        crate::geometry::bin_count(self.start, self.end, self.step)
    }

    pub fn frustum(&self, feat_w: usize, feat_h: usize, stride_px: f64) -> Result<FrustumGrid> {
        build_frustum(feat_w, feat_h, stride_px, self.start, self.end, self.step)
    }
}

/// 1×1 conv emitting `D` depth logits followed by `C_ctx` context channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthContextParams {
    pub conv: Conv2dParams,
    pub depth_bins: usize,
    pub context_channels: usize,
}

impl DepthContextParams {
    pub fn new(conv: Conv2dParams, depth_bins: usize, context_channels: usize) -> Result<Self> {
        if conv.cout() != depth_bins + context_channels || conv.kernel() != (1, 1) {
            return Err(Error::shape(
                "depth_context",
                format!(
                    "head emits {} channels with kernel {:?}; need 1x1 and D + C = {} + {}",
                    conv.cout(),
                    conv.kernel(),
                    depth_bins,
                    context_channels
                ),
            ));
        }
        Ok(Self {
            conv,
            depth_bins,
            context_channels,
        })
    }
}

/// Splits channel ranges `[start, start + len)` out of a `[B, C, h, w]` tensor.
fn channel_slice(t: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (b, c, h, w) = (t.dim(0), t.dim(1), t.dim(2), t.dim(3));
    debug_assert!(start + len <= c);
    let plane = h * w;
    let mut data = Vec::with_capacity(b * len * plane);
    for item in 0..b {
        let base = (item * c + start) * plane;
        data.extend_from_slice(&t.data()[base..base + len * plane]);
    }
    Tensor::new(&[b, len, h, w], data)
}

/// Returns `(depth_prob [B, D, h, w], context [B, C_ctx, h, w])`.
pub fn predict_depth_context(img_feat: &Tensor, params: &DepthContextParams) -> Result<(Tensor, Tensor)> {
    let out = conv2d(img_feat, &params.conv)?;
    let d = params.depth_bins;
    let logits = channel_slice(&out, 0, d)?;
    let context = channel_slice(&out, d, params.context_channels)?;
    drop(out);
    Ok((softmax_axis(&logits, 1)?, context))
}

/// Outer product along depth: `out[b,c,d,y,x] = context[b,c,y,x] · prob[b,d,y,x]`.
pub fn lift(context: &Tensor, depth_prob: &Tensor) -> Result<Tensor> {
    if context.ndim() != 4
        || depth_prob.ndim() != 4
        || context.dim(0) != depth_prob.dim(0)
        || context.shape()[2..] != depth_prob.shape()[2..]
    {
        return Err(Error::shape(
            "lift",
            format!("context {:?} vs depth {:?}", context.shape(), depth_prob.shape()),
        ));
    }
    let (b, c, h, w) = (context.dim(0), context.dim(1), context.dim(2), context.dim(3));
    let d = depth_prob.dim(1);
    let plane = h * w;
    let mut out = Vec::with_capacity(b * c * d * plane);
    for item in 0..b {
        for ch in 0..c {
            let ctx = &context.data()[(item * c + ch) * plane..][..plane];
            for bin in 0..d {
                let prob = &depth_prob.data()[(item * d + bin) * plane..][..plane];
                out.extend(ctx.iter().zip(prob).map(|(a, p)| a * p));
            }
        }
    }
    Tensor::new(&[b, c, d, h, w], out)
}

/// Flat lattice index of every frustum point in `(d, y, x)` order, `None`
/// for points outside the grid. With `volumetric` the index spans
/// `(iz, iy, ix)`, otherwise `(iy, ix)`.
pub fn frustum_cells(
    frustum: &FrustumGrid,
    camera: &Camera,
    grid: &BevGridSpec,
    volumetric: bool,
) -> Result<Vec<Option<usize>>> {
    let (w, h, _) = grid.dims()?;
    Ok(frustum
        .points()
        .map(|(u, v, d)| {
            let p = camera.cam_to_ego.apply(unproject(u, v, d, &camera.intrinsics));
            grid.cell_of(p).map(|(ix, iy, iz)| {
                if volumetric {
                    (iz * h + iy) * w + ix
                } else {
                    iy * w + ix
                }
            })
        })
        .collect())
}

/// BEV feature plus the number of frustum points that fell outside the grid.
#[derive(Debug)]
pub struct SplatOutput {
    pub bev: Tensor,
    pub dropped: usize,
}

fn check_lifted(frustum: &FrustumGrid, lifted: &Tensor) -> Result<()> {
    let ok = lifted.ndim() == 5
        && lifted.dim(2) == frustum.depth_bins()
        && lifted.dim(3) == frustum.feat_h
        && lifted.dim(4) == frustum.feat_w;
    if ok {
        Ok(())
    } else {
        Err(Error::shape(
            "splat",
            format!(
                "lifted {:?} vs frustum D={} h={} w={}",
                lifted.shape(),
                frustum.depth_bins(),
                frustum.feat_h,
                frustum.feat_w
            ),
        ))
    }
}

fn accumulate(lifted: &Tensor, cells: &[Option<usize>], cells_per_map: usize) -> Vec<f32> {
    let (b, c) = (lifted.dim(0), lifted.dim(1));
    let points = cells.len();
    let mut out = vec![0.0f32; b * c * cells_per_map];
    for (src, dst) in lifted.data().chunks(points).zip(out.chunks_mut(cells_per_map)) {
        for (value, cell) in src.iter().zip(cells) {
            if let Some(i) = *cell {
                dst[i] += value;
            }
        }
    }
    out
}

/// Sum-pools one camera's lifted features into `[B, C, H, W]`.
pub fn splat(frustum: &FrustumGrid, lifted: &Tensor, camera: &Camera, grid: &BevGridSpec) -> Result<SplatOutput> {
    check_lifted(frustum, lifted)?;
    let (w, h, _) = grid.dims()?;
    let cells = frustum_cells(frustum, camera, grid, false)?;
    let dropped = cells.iter().filter(|c| c.is_none()).count();
    let data = accumulate(lifted, &cells, w * h);
    Ok(SplatOutput {
        bev: Tensor::new(&[lifted.dim(0), lifted.dim(1), h, w], data)?,
        dropped,
    })
}

/// Like [`splat`] but keeps the height axis: `[B, C, Z, H, W]`.
pub fn splat_volume(frustum: &FrustumGrid, lifted: &Tensor, camera: &Camera, grid: &BevGridSpec) -> Result<SplatOutput> {
    check_lifted(frustum, lifted)?;
    let (w, h, z) = grid.dims()?;
    let cells = frustum_cells(frustum, camera, grid, true)?;
    let dropped = cells.iter().filter(|c| c.is_none()).count();
    let data = accumulate(lifted, &cells, z * h * w);
    Ok(SplatOutput {
        bev: Tensor::new(&[lifted.dim(0), lifted.dim(1), z, h, w], data)?,
        dropped,
    })
}

fn check_cameras(op: &'static str, feats: usize, rig: &CameraRig) -> Result<()> {
    if feats != rig.len() {
        return Err(Error::shape(
            op,
            format!("{feats} feature maps for {} cameras", rig.len()),
        ));
    }
    Ok(())
}

/// Splats per-camera `(context, depth_prob)` pairs and sums the cameras in
/// rig order.
pub fn splat_cameras(
    contexts: &[Tensor],
    depth_probs: &[Tensor],
    rig: &CameraRig,
    grid: &BevGridSpec,
    depth: &DepthBins,
    stride_px: f64,
) -> Result<SplatOutput> {
    check_cameras("splat", contexts.len(), rig)?;
    check_cameras("splat", depth_probs.len(), rig)?;
    let mut total: Option<SplatOutput> = None;
    for ((ctx, prob), camera) in contexts.iter().zip(depth_probs).zip(rig.cameras()) {
        let frustum = depth.frustum(ctx.dim(3), ctx.dim(2), stride_px)?;
        if prob.dim(1) != frustum.depth_bins() {
            return Err(Error::shape(
                "splat",
                format!("{} depth channels for {} bins", prob.dim(1), frustum.depth_bins()),
            ));
        }
        let lifted = lift(ctx, prob)?;
        let part = splat(&frustum, &lifted, camera, grid)?;
        drop(lifted);
        total = Some(match total {
            None => part,
            Some(mut acc) => {
                acc.bev.add_assign(&part.bev)?;
                acc.dropped += part.dropped;
                acc
            }
        });
    }
    Ok(total.expect("rig has at least one camera"))
}

/// Full LSS view transform: depth/context head, lift, splat, camera sum.
pub fn lss_transform(
    feats: &[Tensor],
    rig: &CameraRig,
    params: &DepthContextParams,
    grid: &BevGridSpec,
    depth: &DepthBins,
    stride_px: f64,
) -> Result<SplatOutput> {
    check_cameras("lss_transform", feats.len(), rig)?;
    if params.depth_bins != depth.count() {
        return Err(Error::shape(
            "lss_transform",
            format!("head predicts {} bins, depth range has {}", params.depth_bins, depth.count()),
        ));
    }
    let mut contexts = Vec::with_capacity(feats.len());
    let mut probs = Vec::with_capacity(feats.len());
    for f in feats {
        let (p, c) = predict_depth_context(f, params)?;
        probs.push(p);
        contexts.push(c);
    }
    splat_cameras(&contexts, &probs, rig, grid, depth, stride_px)
}

/// LS view transform: every depth bin gets weight `1 / D`.
pub fn ls_transform(
    feats: &[Tensor],
    rig: &CameraRig,
    grid: &BevGridSpec,
    depth: &DepthBins,
    stride_px: f64,
) -> Result<SplatOutput> {
    check_cameras("ls_transform", feats.len(), rig)?;
    let d = depth.count();
    let probs: Vec<Tensor> = feats
        .iter()
        .map(|f| Tensor::full(&[f.dim(0), d, f.dim(2), f.dim(3)], 1.0 / d as f32))
        .collect();
    splat_cameras(feats, &probs, rig, grid, depth, stride_px)
}

/// One-hot depth distribution `[1, D, h, w]` from a metric depth map
/// (row-major `h × w`). Cells whose depth falls in no bin get all zeros.
pub fn one_hot_depth(depth_map: &[f32], feat_h: usize, feat_w: usize, depth: &DepthBins) -> Result<Tensor> {
    if depth_map.len() != feat_h * feat_w {
        return Err(Error::shape(
            "one_hot_depth",
            format!("{} depths for a {feat_h}x{feat_w} map", depth_map.len()),
        ));
    }
    let frustum = depth.frustum(feat_w, feat_h, 1.0)?;
    let d = frustum.depth_bins();
    let plane = feat_h * feat_w;
    let mut out = Tensor::zeros(&[1, d, feat_h, feat_w]);
    for (i, &z) in depth_map.iter().enumerate() {
        if let Some(bin) = frustum.bin_of(f64::from(z)) {
            out.data_mut()[bin * plane + i] = 1.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, RigidTransform};

    fn down_camera(height: f64) -> Camera {
        Camera {
            name: "down".into(),
            intrinsics: CameraIntrinsics::new(10.0, 10.0, 4.0, 4.0, 8, 8).unwrap(),
            cam_to_ego: RigidTransform::look_along([0.0, 0.0, height], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]).unwrap(),
        }
    }

    #[test]
    fn grid_dims() {
        assert_eq!(BevGridSpec::occ3d().dims().unwrap(), (200, 200, 16));
        let bad = BevGridSpec {
            xy_res: 0.3,
            ..BevGridSpec::occ3d()
        };
        assert!(bad.validate().is_err());
        assert_eq!(BevGridSpec::occ3d().collapsed().z(), 1);
    }

    #[test]
    fn uniform_depth_for_zero_logits() {
        let conv = Conv2dParams::new(Tensor::zeros(&[6, 3, 1, 1]), Tensor::zeros(&[6]), 1, 0).unwrap();
        let params = DepthContextParams::new(conv, 4, 2).unwrap();
        let (prob, ctx) = predict_depth_context(&Tensor::full(&[1, 3, 2, 2], 1.0), &params).unwrap();
        assert_eq!(prob.shape(), &[1, 4, 2, 2]);
        assert_eq!(ctx.shape(), &[1, 2, 2, 2]);
        assert!(prob.data().iter().all(|&p| p == 0.25));
    }

    #[test]
    fn one_hot_lift_selects_slice() {
        let ctx = Tensor::from_fn(&[1, 2, 2, 3], |i| i as f32 + 1.0);
        let mut prob = Tensor::zeros(&[1, 3, 2, 3]);
        prob.data_mut()[6..12].fill(1.0);
        let out = lift(&ctx, &prob).unwrap();
        for c in 0..2 {
            for d in 0..3 {
                for y in 0..2 {
                    for x in 0..3 {
                        let expected = if d == 1 { ctx.at(&[0, c, y, x]) } else { 0.0 };
                        assert_eq!(out.at(&[0, c, d, y, x]), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn single_point_lands_in_its_cell() {
        // A camera 10 m up looking straight down; the central feature cell's ray
        // hits the ground at the ego origin, which sits at a cell corner, so
        // shift the camera to the metric center of cell (i, j).
        let grid = BevGridSpec::centered(8, 0.4);
        let (i, j) = (5usize, 2usize);
        let c = grid.cell_center(i, j, 0);
        let mut cam = down_camera(0.0);
        cam.cam_to_ego = RigidTransform::look_along([c[0], c[1], 4.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]).unwrap();
        let frustum = FrustumGrid {
            feat_w: 1,
            feat_h: 1,
            stride_px: 8.0,
            depth_start: 3.5,
            depth_step: 1.0,
            depths: vec![4.0],
        };
        let lifted = Tensor::full(&[1, 1, 1, 1, 1], 1.0);
        let out = splat(&frustum, &lifted, &cam, &grid).unwrap();
        assert_eq!(out.dropped, 0);
        for y in 0..8 {
            for x in 0..8 {
                let expected = if (x, y) == (i, j) { 1.0 } else { 0.0 };
                assert_eq!(out.bev.at(&[0, 0, y, x]), expected);
            }
        }
        // Same ray ending above z_max is culled.
        cam.cam_to_ego = RigidTransform::look_along([c[0], c[1], 10.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]).unwrap();
        let out = splat(&frustum, &lifted, &cam, &grid).unwrap();
        assert_eq!(out.dropped, 1);
        assert!(out.bev.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_depth_bins() {
        let bins = DepthBins::new(1.0, 3.0, 1.0).unwrap();
        let t = one_hot_depth(&[1.2, 2.7, f32::INFINITY, 0.5], 2, 2, &bins).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }
}
