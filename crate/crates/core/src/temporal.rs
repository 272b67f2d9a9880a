//! Ego-motion alignment of a past BEV feature and concat fusion.

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::ops::{conv2d, Conv2dParams};
use crate::tensor::Tensor;
use crate::view_transform::BevGridSpec;

/// Snap distance, in cells, below which a sample is treated as lying on a
/// cell center.
const SNAP: f64 = 1e-6;

/// Previous frame's BEV feature with its ego-to-global pose.
#[derive(Debug, Clone)]
pub struct HistoryFrame {
    pub bev: Tensor,
    pub pose: RigidTransform,
    pub timestamp: f64,
}

/// Holds at most one past frame.
#[derive(Debug, Clone, Default)]
pub struct TemporalBuffer {
    frame: Option<HistoryFrame>,
}

impl TemporalBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> Option<&HistoryFrame> {
        self.frame.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.frame.is_none()
    }

    /// Replaces the stored frame.
    pub fn push(&mut self, bev: Tensor, pose: RigidTransform, timestamp: f64) {
        self.frame = Some(HistoryFrame { bev, pose, timestamp });
    }

    pub fn clear(&mut self) {
        self.frame = None;
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

/// Bilinear taps `(index, weight)` for every current-frame cell.
fn warp_taps(rel_cur_to_hist: &RigidTransform, grid: &BevGridSpec, w: usize, h: usize) -> Vec<[(usize, f32); 4]> {
    let res = grid.xy_res;
    let mut taps = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            let c = grid.cell_center(i, j, 0);
            let p = rel_cur_to_hist.apply([c[0], c[1], 0.0]);
            let fx = snap((p[0] - grid.x_min) / res - 0.5);
            let fy = snap((p[1] - grid.y_min) / res - 0.5);
            let (x0, y0) = (fx.floor(), fy.floor());
            let (ax, ay) = (fx - x0, fy - y0);
            let mut cell = [(0usize, 0.0f32); 4];
            let corners = [
                (x0, y0, (1.0 - ax) * (1.0 - ay)),
                (x0 + 1.0, y0, ax * (1.0 - ay)),
                (x0, y0 + 1.0, (1.0 - ax) * ay),
                (x0 + 1.0, y0 + 1.0, ax * ay),
            ];
            for (slot, (x, y, wt)) in cell.iter_mut().zip(corners) {
                let inside = x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64;
                if inside && wt > 0.0 {
                    *slot = (y as usize * w + x as usize, wt as f32);
                }
            }
            taps.push(cell);
        }
    }
    taps
}

/// Resamples `history` (in the frame of `pose_hist`) into the frame of
/// `pose_cur`. The relative pose is reduced to yaw plus planar translation;
/// samples outside the history grid read zero.
pub fn align_bev(
    history: &Tensor,
    pose_hist: &RigidTransform,
    pose_cur: &RigidTransform,
    grid: &BevGridSpec,
) -> Result<Tensor> {
    let (w, h, _) = grid.dims()?;
    if history.ndim() != 4 || history.dim(2) != h || history.dim(3) != w {
        return Err(Error::shape(
            "align_bev",
            format!("history {:?} vs grid {w}x{h}", history.shape()),
        ));
    }
    // hist→cur is inverse(cur)∘hist; sampling needs cur→hist.
    let rel = pose_cur.inverse().compose(pose_hist).to_planar();
    let taps = warp_taps(&rel.inverse(), grid, w, h);
    let plane = w * h;
    let mut out = Vec::with_capacity(history.numel());
    for src in history.data().chunks(plane) {
        out.extend(taps.iter().map(|cell| {
            cell.iter()
                .filter(|(_, wt)| *wt > 0.0)
                .map(|&(idx, wt)| src[idx] * wt)
                .sum::<f32>()
        }));
    }
    Tensor::new(history.shape(), out)
}

/// `conv(concat(current, aligned))`, current channels first.
pub fn fuse_concat(current: &Tensor, aligned: &Tensor, fuse_conv: &Conv2dParams) -> Result<Tensor> {
    if current.shape() != aligned.shape() || current.ndim() != 4 {
        return Err(Error::shape(
            "fuse_concat",
            format!("current {:?} vs aligned {:?}", current.shape(), aligned.shape()),
        ));
    }
    let c = current.dim(1);
    if fuse_conv.cin() != 2 * c || fuse_conv.cout() != c {
        return Err(Error::shape(
            "fuse_concat",
            format!("fuse conv maps {} -> {}, need {} -> {c}", fuse_conv.cin(), fuse_conv.cout(), 2 * c),
        ));
    }
    let cat = Tensor::concat(&[current, aligned], 1)?;
    conv2d(&cat, fuse_conv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> BevGridSpec {
        BevGridSpec::centered(6, 0.4)
    }

    #[test]
    fn identity_pose_is_exact() {
        let t = Tensor::from_fn(&[1, 2, 6, 6], |i| (i as f32 * 0.37).sin());
        let pose = RigidTransform::from_yaw(0.3, [5.0, -2.0, 0.1]);
        assert_eq!(align_bev(&t, &pose, &pose, &grid()).unwrap(), t);
    }

    #[test]
    fn one_cell_forward_shifts_columns() {
        let t = Tensor::from_fn(&[1, 1, 6, 6], |i| i as f32 + 1.0);
        let hist = RigidTransform::identity();
        let cur = RigidTransform::from_translation([0.4, 0.0, 0.0]);
        let out = align_bev(&t, &hist, &cur, &grid()).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                let expected = if x + 1 < 6 { t.at(&[0, 0, y, x + 1]) } else { 0.0 };
                assert_eq!(out.at(&[0, 0, y, x]), expected);
            }
        }
    }

    #[test]
    fn identity_fusion() {
        let c = 2;
        let mut weight = Tensor::zeros(&[c, 2 * c, 3, 3]);
        for k in 0..c {
            let off = weight.offset(&[k, k, 1, 1]);
            weight.data_mut()[off] = 1.0;
        }
        let conv = Conv2dParams::new(weight, Tensor::zeros(&[c]), 1, 1).unwrap();
        let cur = Tensor::from_fn(&[1, c, 3, 3], |i| i as f32);
        let out = fuse_concat(&cur, &Tensor::zeros(&[1, c, 3, 3]), &conv).unwrap();
        assert_eq!(out, cur);
    }

    #[test]
    fn buffer_holds_one_frame() {
        let mut b = TemporalBuffer::new();
        assert!(b.is_empty());
        b.push(Tensor::zeros(&[1]), RigidTransform::identity(), 0.0);
        b.push(Tensor::full(&[1], 2.0), RigidTransform::identity(), 0.5);
        assert_eq!(b.get().unwrap().timestamp, 0.5);
        b.clear();
        assert!(b.get().is_none());
    }
}
