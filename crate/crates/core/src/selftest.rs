//! Quick invariant suite behind the `selftest` subcommand.
//!
//! Each check compares a library routine against a small independent
//! computation and finishes in well under a second.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{HeadPath, PipelineConfig};
use crate::eval::{confusion, miou, semantic_classes, OccupancyGrid, NUM_CLASSES};
use crate::geometry::{CameraRig, RigidTransform};
use crate::head::{channel_to_height, height_to_channel, linear_head_loss_and_grad, LinearHead};
use crate::ops::counter::OpScope;
use crate::ops::{conv2d, conv3d, softmax_axis, Conv2dParams, Conv3dParams};
use crate::pipeline::Pipeline;
use crate::temporal::align_bev;
use crate::tensor::Tensor;
use crate::view_transform::{frustum_cells, lift, splat, BevGridSpec, DepthBins};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn c2h_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (nc, z, h, w) = (NUM_CLASSES, 4, 6, 5);
    let t = random(&mut rng, &[1, nc * z, h, w]);
    let v = channel_to_height(t.clone(), nc, z).map_err(|e| e.to_string())?;
    for _ in 0..200 {
        let (k, zi, y, x) = (rng.gen_range(0..nc), rng.gen_range(0..z), rng.gen_range(0..h), rng.gen_range(0..w));
        ensure(v.at(&[0, k, zi, y, x]) == t.at(&[0, k * z + zi, y, x]), || {
            format!("index ({k}, {zi}, {y}, {x}) moved")
        })?;
    }
    let back = height_to_channel(v).map_err(|e| e.to_string())?;
    ensure(back == t, || "round trip changed values".into())?;
    Ok("200 indices".into())
}

fn naive_conv2d(x: &Tensor, p: &Conv2dParams) -> Vec<f64> {
    let (cin, h, w) = (x.dim(1), x.dim(2), x.dim(3));
    let (cout, k) = (p.weight.dim(0), p.weight.dim(2));
    let (s, pad) = (p.stride as isize, p.padding as isize);
    let oh = (h + 2 * p.padding - k) / p.stride + 1;
    let ow = (w + 2 * p.padding - k) / p.stride + 1;
    let mut out = Vec::new();
    for o in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = f64::from(p.bias.data()[o]);
                for c in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy as isize * s + ky as isize - pad;
                            let ix = ox as isize * s + kx as isize - pad;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += f64::from(x.at(&[0, c, iy as usize, ix as usize]))
                                    * f64::from(p.weight.at(&[o, c, ky, kx]));
                            }
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn max_err(got: &[f32], want: &[f64]) -> f64 {
    got.iter().zip(want).map(|(&g, &w)| (f64::from(g) - w).abs()).fold(0.0, f64::max)
}

fn conv2d_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let k = [1, 3][rng.gen_range(0..2)];
        let (stride, padding) = (rng.gen_range(1..3), rng.gen_range(0..=k / 2));
        let (h, w) = (rng.gen_range(3..8), rng.gen_range(3..8));
        let x = random(&mut rng, &[1, cin, h, w]);
        let p = Conv2dParams::new(random(&mut rng, &[cout, cin, k, k]), random(&mut rng, &[cout]), stride, padding)
            .map_err(|e| e.to_string())?;
        let got = conv2d(&x, &p).map_err(|e| e.to_string())?;
        worst = worst.max(max_err(got.data(), &naive_conv2d(&x, &p)));
    }
    ensure(worst <= 1e-5, || format!("max abs err {worst:e}"))?;
    Ok(format!("max abs err {worst:.1e}"))
}

fn conv3d_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (cin, cout) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let (d, h, w) = (rng.gen_range(3..5), rng.gen_range(3..5), rng.gen_range(3..5));
        let x = random(&mut rng, &[1, cin, d, h, w]);
        let p = Conv3dParams::new(random(&mut rng, &[cout, cin, 3, 3, 3]), random(&mut rng, &[cout]), 1, 1)
            .map_err(|e| e.to_string())?;
        let got = conv3d(&x, &p).map_err(|e| e.to_string())?;
        let mut want = Vec::new();
        for o in 0..cout {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = f64::from(p.bias.data()[o]);
                        for c in 0..cin {
                            for (kz, ky, kx) in (0..27).map(|i| (i / 9, i / 3 % 3, i % 3)) {
                                let (iz, iy, ix) = (z + kz, y + ky, xx + kx);
                                if (1..=d).contains(&iz) && (1..=h).contains(&iy) && (1..=w).contains(&ix) {
                                    acc += f64::from(x.at(&[0, c, iz - 1, iy - 1, ix - 1]))
                                        * f64::from(p.weight.at(&[o, c, kz, ky, kx]));
                                }
                            }
                        }
                        want.push(acc);
                    }
                }
            }
        }
        worst = worst.max(max_err(got.data(), &want));
    }
    ensure(worst <= 1e-5, || format!("max abs err {worst:e}"))?;
    Ok(format!("max abs err {worst:.1e}"))
}

fn softmax_normalized() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = Tensor::from_fn(&[2, 7, 3], |_| rng.gen_range(-30.0..30.0));
    let s = softmax_axis(&t, 1).map_err(|e| e.to_string())?;
    for b in 0..2 {
        for j in 0..3 {
            let total: f64 = (0..7).map(|c| f64::from(s.at(&[b, c, j]))).sum();
            ensure((total - 1.0).abs() < 1e-5, || format!("row sums to {total}"))?;
        }
    }
    Ok("6 rows".into())
}

fn flop_formula() -> Outcome {
    let p = Conv2dParams::new(Tensor::full(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), 1, 0).map_err(|e| e.to_string())?;
    let scope = OpScope::start();
    conv2d(&Tensor::zeros(&[1, 1, 2, 2]), &p).map_err(|e| e.to_string())?;
    let flops = scope.counts().conv2d_flops;
    ensure(flops == 8, || format!("1x1 conv on 2x2 counted {flops} FLOPs"))?;
    Ok("8 FLOPs".into())
}

fn splat_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rig = CameraRig::surround(176, 64).map_err(|e| e.to_string())?;
    let grid = BevGridSpec::centered(16, 5.0);
    let depth = DepthBins::new(1.0, 45.0, 2.0).map_err(|e| e.to_string())?;
    let frustum = depth.frustum(22, 8, 8.0).map_err(|e| e.to_string())?;
    let camera = &rig.cameras()[0];
    let ctx = Tensor::from_fn(&[1, 3, 8, 22], |_| rng.gen_range(0.0..1.0));
    let prob = Tensor::from_fn(&[1, depth.count(), 8, 22], |_| rng.gen_range(0.0..1.0));
    let lifted = lift(&ctx, &prob).map_err(|e| e.to_string())?;
    let cells = frustum_cells(&frustum, camera, &grid, false).map_err(|e| e.to_string())?;
    let in_range: f64 = lifted
        .data()
        .chunks(cells.len())
        .flat_map(|c| c.iter().zip(&cells).filter(|(_, cell)| cell.is_some()).map(|(&v, _)| f64::from(v)))
        .sum();
    let out = splat(&frustum, &lifted, camera, &grid).map_err(|e| e.to_string())?;
    let rel = (out.bev.sum() - in_range).abs() / in_range.max(1e-12);
    ensure(rel <= 1e-4, || format!("relative mass error {rel:e}"))?;
    Ok(format!("relative mass error {rel:.1e}"))
}

fn temporal_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = BevGridSpec::centered(12, 0.5);
    let bev = random(&mut rng, &[1, 3, 12, 12]);
    let pose = RigidTransform::from_yaw(0.7, [3.0, -2.0, 0.0]);
    let out = align_bev(&bev, &pose, &pose, &grid).map_err(|e| e.to_string())?;
    ensure(out == bev, || "identity warp changed values".into())?;
    Ok("bit-exact".into())
}

fn miou_perfect() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let labels = (0..16 * 16 * 16).map(|_| rng.gen_range(0..NUM_CLASSES as u8)).collect();
    let g = OccupancyGrid::new(16, 16, 16, NUM_CLASSES, labels).map_err(|e| e.to_string())?;
    let conf = confusion(&g, &g, None).map_err(|e| e.to_string())?;
    let r = miou(&conf, &semantic_classes(NUM_CLASSES)).map_err(|e| e.to_string())?;
    ensure(r.miou == Some(1.0), || format!("mIoU {:?}", r.miou))?;
    Ok("mIoU 1.0".into())
}

fn occg_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels = (0..4 * 3 * 2).map(|_| rng.gen_range(0..NUM_CLASSES as u8)).collect();
    let g = OccupancyGrid::new(4, 3, 2, NUM_CLASSES, labels).map_err(|e| e.to_string())?;
    let back = OccupancyGrid::from_bytes(&g.to_bytes(), Path::new("<memory>")).map_err(|e| e.to_string())?;
    ensure(back == g, || "decoded grid differs".into())?;
    Ok("24 voxels".into())
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (nc, z, cin) = (3, 2, 4);
    let feats = Tensor::from_fn(&[1, cin, 3, 3], |_| rng.gen_range(-1.0..1.0));
    let labels = (0..3 * 3 * z).map(|_| rng.gen_range(0..nc as u8)).collect();
    let labels = OccupancyGrid::new(3, 3, z, nc, labels).map_err(|e| e.to_string())?;
    let mut head = LinearHead::zeros(cin, nc, z);
    head.weight.iter_mut().for_each(|w| *w = rng.gen_range(-0.5..0.5));
    let g = linear_head_loss_and_grad(&feats, &labels, &head).map_err(|e| e.to_string())?;
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for i in (0..head.weight.len()).step_by(5) {
        let mut plus = head.clone();
        plus.weight[i] += eps;
        let mut minus = head.clone();
        minus.weight[i] -= eps;
        let lp = linear_head_loss_and_grad(&feats, &labels, &plus).map_err(|e| e.to_string())?.loss;
        let lm = linear_head_loss_and_grad(&feats, &labels, &minus).map_err(|e| e.to_string())?.loss;
        let fd = (lp - lm) / (2.0 * eps);
        worst = worst.max((fd - g.weight[i]).abs() / g.weight[i].abs().max(1e-3));
    }
    ensure(worst <= 1e-5, || format!("relative error {worst:e}"))?;
    Ok(format!("relative error {worst:.1e}"))
}

fn path_isolation() -> Outcome {
    for path in [HeadPath::Flash, HeadPath::Voxel] {
        let p = Pipeline::build(&PipelineConfig::desk().with_path(path)).map_err(|e| e.to_string())?;
        let inputs: Vec<Tensor> = p.head_input_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let scope = OpScope::start();
        p.run_head(&refs).map_err(|e| e.to_string())?;
        let ops = scope.counts();
        let analytic = p.head_flops().map_err(|e| e.to_string())?;
        ensure((ops.conv3d_calls == 0) == (path == HeadPath::Flash), || {
            format!("{} head ran {} 3D convolutions", path.as_str(), ops.conv3d_calls)
        })?;
        ensure(analytic == ops.total_flops(), || {
            format!("{} head: analytic {analytic} vs counted {}", path.as_str(), ops.total_flops())
        })?;
    }
    Ok("flash 0 conv3d, voxel > 0".into())
}

const CHECKS: [(&str, fn() -> Outcome); 11] = [
    ("channel_to_height", c2h_round_trip),
    ("conv2d_oracle", conv2d_oracle),
    ("conv3d_oracle", conv3d_oracle),
    ("softmax_normalized", softmax_normalized),
    ("flop_formula", flop_formula),
    ("splat_conservation", splat_conservation),
    ("temporal_identity", temporal_identity),
    ("miou_perfect", miou_perfect),
    ("occg_round_trip", occg_round_trip),
    ("gradient_check", gradient_check),
    ("path_isolation", path_isolation),
];

pub fn run() -> Vec<Check> {
    CHECKS
        .iter()
        .map(|&(name, f)| {
            let (passed, detail) = match f() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            Check { name, passed, detail }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
