//! Independent loop oracles shared by the integration tests. Nothing here
//! calls the library routine it checks.

#![allow(dead_code)]

use flashocc::eval::OccupancyGrid;
use flashocc::geometry::{Camera, RigidTransform};
use flashocc::ops::{Conv2dParams, Conv3dParams};
use flashocc::view_transform::BevGridSpec;
use flashocc::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

pub fn max_abs_err(got: &[f32], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len(), "length mismatch");
    got.iter()
        .zip(want)
        .map(|(&g, &w)| (f64::from(g) - w).abs())
        .fold(0.0, f64::max)
}

fn flat(shape: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

pub fn conv2d(x: &Tensor, p: &Conv2dParams) -> Vec<f64> {
    let s = x.shape();
    let (b, cin, h, w) = (s[0], s[1], s[2], s[3]);
    let ws = p.weight.shape();
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let (stride, pad) = (p.stride as i64, p.padding as i64);
    let oh = ((h as i64 + 2 * pad - kh as i64) / stride + 1) as usize;
    let ow = ((w as i64 + 2 * pad - kw as i64) / stride + 1) as usize;
    let mut out = vec![0.0; b * cout * oh * ow];
    for n in 0..b {
        for o in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = f64::from(p.bias.data()[o]);
                    for c in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as i64 * stride - pad + ky as i64;
                                let ix = ox as i64 * stride - pad + kx as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let xv = x.data()[flat(s, &[n, c, iy as usize, ix as usize])];
                                let wv = p.weight.data()[flat(ws, &[o, c, ky, kx])];
                                acc += f64::from(xv) * f64::from(wv);
                            }
                        }
                    }
                    out[flat(&[b, cout, oh, ow], &[n, o, oy, ox])] = acc;
                }
            }
        }
    }
    out
}

pub fn conv3d(x: &Tensor, p: &Conv3dParams) -> Vec<f64> {
    let s = x.shape();
    let (b, cin, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let ws = p.weight.shape();
    let (cout, kd, kh, kw) = (ws[0], ws[2], ws[3], ws[4]);
    let (stride, pad) = (p.stride as i64, p.padding as i64);
    let out_len = |n: usize, k: usize| ((n as i64 + 2 * pad - k as i64) / stride + 1) as usize;
    let (od, oh, ow) = (out_len(d, kd), out_len(h, kh), out_len(w, kw));
    let mut out = vec![0.0; b * cout * od * oh * ow];
    for n in 0..b {
        for o in 0..cout {
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = f64::from(p.bias.data()[o]);
                        for c in 0..cin {
                            for kz in 0..kd {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let iz = oz as i64 * stride - pad + kz as i64;
                                        let iy = oy as i64 * stride - pad + ky as i64;
                                        let ix = ox as i64 * stride - pad + kx as i64;
                                        let inside = (0..d as i64).contains(&iz)
                                            && (0..h as i64).contains(&iy)
                                            && (0..w as i64).contains(&ix);
                                        if !inside {
                                            continue;
                                        }
                                        let xv = x.data()[flat(s, &[n, c, iz as usize, iy as usize, ix as usize])];
                                        let wv = p.weight.data()[flat(ws, &[o, c, kz, ky, kx])];
                                        acc += f64::from(xv) * f64::from(wv);
                                    }
                                }
                            }
                        }
                        out[flat(&[b, cout, od, oh, ow], &[n, o, oz, oy, ox])] = acc;
                    }
                }
            }
        }
    }
    out
}

/// Bilinear resampling at half-pixel centers: output pixel `o` reads input
/// coordinate `(o + 0.5) / 2 − 0.5`, clamped to the valid range.
pub fn upsample2x(x: &Tensor) -> Vec<f64> {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let sample = |n: usize, ch: usize, fy: f64, fx: f64| -> f64 {
        let fy = fy.clamp(0.0, (h - 1) as f64);
        let fx = fx.clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (ay, ax) = (fy - y0 as f64, fx - x0 as f64);
        let v = |y: usize, xx: usize| f64::from(x.data()[flat(s, &[n, ch, y, xx])]);
        v(y0, x0) * (1.0 - ay) * (1.0 - ax) + v(y0, x1) * (1.0 - ay) * ax + v(y1, x0) * ay * (1.0 - ax) + v(y1, x1) * ay * ax
    };
    let mut out = Vec::with_capacity(b * c * 4 * h * w);
    for n in 0..b {
        for ch in 0..c {
            for oy in 0..2 * h {
                for ox in 0..2 * w {
                    out.push(sample(n, ch, (oy as f64 + 0.5) / 2.0 - 0.5, (ox as f64 + 0.5) / 2.0 - 0.5));
                }
            }
        }
    }
    out
}

pub fn softmax(x: &Tensor, axis: usize) -> Vec<f64> {
    let s = x.shape();
    let outer: usize = s[..axis].iter().product();
    let n = s[axis];
    let inner: usize = s[axis + 1..].iter().product();
    let mut out = vec![0.0; x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let vals: Vec<f64> = (0..n).map(|k| f64::from(x.data()[at(k)])).collect();
            let total: f64 = vals.iter().map(|v| v.exp()).sum();
            for (k, v) in vals.iter().enumerate() {
                out[at(k)] = v.exp() / total;
            }
        }
    }
    out
}

/// 4×4 homogeneous matrix of a rigid transform, built from its action on
/// the origin and the unit axes.
pub fn homogeneous(t: &RigidTransform) -> [[f64; 4]; 4] {
    let o = t.apply([0.0, 0.0, 0.0]);
    let mut m = [[0.0; 4]; 4];
    for (j, axis) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].iter().enumerate() {
        let p = t.apply(*axis);
        for i in 0..3 {
            m[i][j] = p[i] - o[i];
        }
    }
    for i in 0..3 {
        m[i][3] = o[i];
    }
    m[3][3] = 1.0;
    m
}

pub fn mat4_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Inverse of a rigid 4×4 matrix by Gauss–Jordan elimination.
pub fn mat4_inverse(m: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..4 {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..4 {
            if r != col {
                let f = a[r][col];
                for j in 0..4 {
                    a[r][j] -= f * a[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

pub fn mat4_apply(m: &[[f64; 4]; 4], p: [f64; 3]) -> [f64; 3] {
    let v = [p[0], p[1], p[2], 1.0];
    let r: Vec<f64> = (0..4).map(|i| (0..4).map(|k| m[i][k] * v[k]).sum()).collect();
    [r[0] / r[3], r[1] / r[3], r[2] / r[3]]
}

/// Ego-frame point of pixel `(u, v)` at camera depth `d`.
pub fn pixel_to_ego(camera: &Camera, u: f64, v: f64, d: f64) -> [f64; 3] {
    let k = &camera.intrinsics;
    let cam = [(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d];
    mat4_apply(&homogeneous(&camera.cam_to_ego), cam)
}

/// `(ix, iy, iz)` of the cell holding `p`, by direct division.
pub fn cell_of(grid: &BevGridSpec, p: [f64; 3]) -> Option<(usize, usize, usize)> {
    let fx = ((p[0] - grid.x_min) / grid.xy_res).floor();
    let fy = ((p[1] - grid.y_min) / grid.xy_res).floor();
    let fz = ((p[2] - grid.z_min) / grid.z_res).floor();
    let (w, h, z) = grid.dims().unwrap();
    let ok = fx >= 0.0 && fy >= 0.0 && fz >= 0.0 && (fx as usize) < w && (fy as usize) < h && (fz as usize) < z;
    ok.then_some((fx as usize, fy as usize, fz as usize))
}

/// Dense warp: each current cell center is taken through the full 4×4
/// chain `inverse(hist) · cur` and bilinearly sampled from `history` with
/// zero outside.
pub fn warp_dense(
    history: &Tensor,
    pose_hist: &RigidTransform,
    pose_cur: &RigidTransform,
    grid: &BevGridSpec,
) -> Vec<f64> {
    let (c, h, w) = (history.dim(1), history.dim(2), history.dim(3));
    let m = mat4_mul(&mat4_inverse(&homogeneous(pose_hist)), &homogeneous(pose_cur));
    let mut out = vec![0.0; c * h * w];
    for j in 0..h {
        for i in 0..w {
            let x = grid.x_min + (i as f64 + 0.5) * grid.xy_res;
            let y = grid.y_min + (j as f64 + 0.5) * grid.xy_res;
            let p = mat4_apply(&m, [x, y, 0.0]);
            let fx = (p[0] - grid.x_min) / grid.xy_res - 0.5;
            let fy = (p[1] - grid.y_min) / grid.xy_res - 0.5;
            let (x0, y0) = (fx.floor() as i64, fy.floor() as i64);
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            for ch in 0..c {
                let mut acc = 0.0;
                for (dx, dy, wt) in [(0, 0, (1.0 - ax) * (1.0 - ay)), (1, 0, ax * (1.0 - ay)), (0, 1, (1.0 - ax) * ay), (1, 1, ax * ay)] {
                    let (xx, yy) = (x0 + dx, y0 + dy);
                    if xx >= 0 && yy >= 0 && xx < w as i64 && yy < h as i64 {
                        acc += wt * f64::from(history.at(&[0, ch, yy as usize, xx as usize]));
                    }
                }
                out[(ch * h + j) * w + i] = acc;
            }
        }
    }
    out
}

/// Per-voxel loop: `counts[gt][pred]`.
pub fn confusion_loop(pred: &OccupancyGrid, gt: &OccupancyGrid, mask: Option<&[bool]>) -> Vec<Vec<u64>> {
    let n = gt.num_classes();
    let mut m = vec![vec![0u64; n]; n];
    let (w, h, z) = gt.dims();
    for iz in 0..z {
        for iy in 0..h {
            for ix in 0..w {
                let i = (iz * h + iy) * w + ix;
                if mask.is_some_and(|m| !m[i]) {
                    continue;
                }
                m[usize::from(gt.get(ix, iy, iz))][usize::from(pred.get(ix, iy, iz))] += 1;
            }
        }
    }
    m
}

/// IoU per class from set sizes, `None` when the class is absent from both.
pub fn iou_loop(m: &[Vec<u64>], classes: &[usize]) -> (Vec<Option<f64>>, Option<f64>) {
    let n = m.len();
    let mut per = vec![None; n];
    let mut sum = 0.0;
    let mut count = 0;
    for &c in classes {
        let tp = m[c][c];
        let fn_: u64 = (0..n).filter(|&p| p != c).map(|p| m[c][p]).sum();
        let fp: u64 = (0..n).filter(|&g| g != c).map(|g| m[g][c]).sum();
        let union = tp + fn_ + fp;
        if union > 0 {
            let iou = tp as f64 / union as f64;
            per[c] = Some(iou);
            sum += iou;
            count += 1;
        }
    }
    (per, (count > 0).then(|| sum / count as f64))
}

pub fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, z: usize, classes: u8) -> OccupancyGrid {
    let labels = (0..w * h * z).map(|_| rng.gen_range(0..classes)).collect();
    OccupancyGrid::new(w, h, z, usize::from(classes), labels).unwrap()
}
