//! Library routines against independent loop and closed-form oracles.

mod common;

use flashocc::eval::{FREE_CLASS, NUM_CLASSES};
use flashocc::geometry::{pixel_to_camera, Camera, CameraIntrinsics, CameraRig, RigidTransform};
use flashocc::ops::{batch_norm_inference, conv2d, Conv2dParams};
use flashocc::scene::{class, render_oracle, visibility_mask, voxelize, PrimitiveKind, Scene, ScenePrimitive};
use flashocc::tensor::memory::MemoryScope;
use flashocc::view_transform::{ls_transform, BevGridSpec, DepthBins};
use flashocc::Tensor;
use rand::Rng;

use common::*;

#[test]
fn batch_norm_matches_formula() {
    let mut r = rng(1);
    for _ in 0..50 {
        let shape = [r.gen_range(1..3), r.gen_range(1..5), r.gen_range(1..6), r.gen_range(1..6)];
        let c = shape[1];
        let x = random_tensor(&mut r, &shape, -3.0, 3.0);
        let stat = |r: &mut rand_chacha::ChaCha8Rng, lo: f32, hi: f32| (0..c).map(|_| r.gen_range(lo..hi)).collect::<Vec<f32>>();
        let (mean, var, gamma, beta) = (stat(&mut r, -1.0, 1.0), stat(&mut r, 0.1, 2.0), stat(&mut r, -2.0, 2.0), stat(&mut r, -1.0, 1.0));
        let got = batch_norm_inference(&x, &mean, &var, &gamma, &beta, 1e-5).unwrap();
        let inner = shape[2] * shape[3];
        let want: Vec<f64> = (0..x.numel())
            .map(|i| {
                let ch = i / inner % c;
                let v = f64::from(x.data()[i]);
                (v - f64::from(mean[ch])) / (f64::from(var[ch]) + 1e-5).sqrt() * f64::from(gamma[ch]) + f64::from(beta[ch])
            })
            .collect();
        assert!(max_abs_err(got.data(), &want) <= 1e-5);
    }
}

#[test]
fn permute_matches_index_oracle() {
    let x = Tensor::from_fn(&[2, 3, 4, 5], |i| i as f32);
    let order = [2, 0, 3, 1];
    let p = x.permute(&order).unwrap();
    assert_eq!(p.shape(), &[4, 2, 5, 3]);
    for a in 0..4 {
        for b in 0..2 {
            for c in 0..5 {
                for d in 0..3 {
                    // out[a, b, c, d] = in[b, d, a, c]
                    let src = ((b * 3 + d) * 4 + a) * 5 + c;
                    assert_eq!(p.at(&[a, b, c, d]), src as f32);
                }
            }
        }
    }
}

#[test]
fn rigid_transforms_match_homogeneous_matrices() {
    let mut r = rng(2);
    for _ in 0..100 {
        let axis = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(0.1..1.0)];
        let a = RigidTransform::from_axis_angle(axis, r.gen_range(-3.0..3.0), [r.gen_range(-9.0..9.0), r.gen_range(-9.0..9.0), r.gen_range(-9.0..9.0)]);
        let b = RigidTransform::from_yaw(r.gen_range(-3.0..3.0), [r.gen_range(-9.0..9.0), r.gen_range(-9.0..9.0), 0.5]);
        let p = [r.gen_range(-20.0..20.0), r.gen_range(-20.0..20.0), r.gen_range(-20.0..20.0)];
        let (ma, mb) = (homogeneous(&a), homogeneous(&b));
        let checks = [
            (a.compose(&b).apply(p), mat4_apply(&mat4_mul(&ma, &mb), p)),
            (a.inverse().apply(p), mat4_apply(&mat4_inverse(&ma), p)),
            (a.inverse().compose(&b).apply(p), mat4_apply(&mat4_mul(&mat4_inverse(&ma), &mb), p)),
        ];
        for (got, want) in checks {
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() < 1e-9, "{got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn projection_round_trips_pixels() {
    let mut r = rng(3);
    let k = CameraIntrinsics::new(500.0, 480.0, 352.0, 128.0, 704, 256).unwrap();
    for _ in 0..200 {
        let (u, v, d) = (r.gen_range(0.0..704.0), r.gen_range(0.0..256.0), r.gen_range(0.5..60.0));
        let p = pixel_to_camera(u, v, d, &k).unwrap();
        assert!((p[2] - d).abs() < 1e-12);
        let (pu, pv) = k.project(p).unwrap();
        assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
    }
    assert!(pixel_to_camera(1.0, 1.0, 0.0, &k).is_err());
    assert!(k.project([0.0, 0.0, -1.0]).is_none());
}

#[test]
fn frustum_points_follow_pixel_centers_and_bin_centers() {
    let depth = DepthBins::new(1.0, 45.0, 0.5).unwrap();
    assert_eq!(depth.count(), 88);
    let f = depth.frustum(44, 16, 16.0).unwrap();
    assert_eq!(f.len(), 88 * 16 * 44);
    let pts: Vec<_> = f.points().collect();
    assert_eq!(pts[0], (8.0, 8.0, 1.25));
    assert_eq!(pts[1], (24.0, 8.0, 1.25));
    assert_eq!(pts[44], (8.0, 24.0, 1.25));
    assert_eq!(pts[44 * 16], (8.0, 8.0, 1.75));
    assert_eq!(f.bin_of(1.0), Some(0));
    assert_eq!(f.bin_of(44.99), Some(87));
    assert_eq!(f.bin_of(45.0), None);
    assert_eq!(f.bin_of(0.99), None);
}

#[test]
fn ls_mass_per_cell_matches_ray_march() {
    let rig = CameraRig::surround(176, 64).unwrap();
    let grid = BevGridSpec::centered(16, 5.0);
    let depth = DepthBins::new(1.0, 45.0, 2.0).unwrap();
    let (fw, fh) = (22, 8);
    let feats: Vec<Tensor> = (0..rig.len()).map(|_| Tensor::full(&[1, 2, fh, fw], 1.0)).collect();
    let out = ls_transform(&feats, &rig, &grid, &depth, 8.0).unwrap();
    let frustum = depth.frustum(fw, fh, 8.0).unwrap();
    let d = frustum.depth_bins() as f64;
    let mut want = vec![0.0f64; grid.w() * grid.h()];
    for cam in rig.cameras() {
        for y in 0..fh {
            for x in 0..fw {
                for &z in &frustum.depths {
                    if let Some((ix, iy, _)) = cell_of(&grid, pixel_to_ego(cam, frustum.u(x), frustum.v(y), z)) {
                        want[iy * grid.w() + ix] += 1.0 / d;
                    }
                }
            }
        }
    }
    let plane = want.len();
    for ch in 0..2 {
        for (i, (&got, &w)) in out.bev.data()[ch * plane..(ch + 1) * plane].iter().zip(&want).enumerate() {
            assert!((got as f64 - w).abs() <= 1e-5 * w.max(1.0), "channel {ch} cell {i}: {got} vs {w}");
        }
    }
}

/// Number of cell centers `lo + (i + 0.5)·res` strictly inside `(a, b)`.
fn centers_inside(lo: f64, res: f64, n: usize, a: f64, b: f64) -> Vec<usize> {
    (0..n).filter(|&i| {
        let c = lo + (i as f64 + 0.5) * res;
        c > a && c < b
    }).collect()
}

#[test]
fn voxelized_box_matches_interval_count() {
    let grid = BevGridSpec::centered(20, 0.4);
    let rig = CameraRig::surround(176, 64).unwrap();
    let mut r = rng(4);
    for _ in 0..20 {
        let c = [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(0.0..3.0)];
        let size = [r.gen_range(0.3..3.0), r.gen_range(0.3..3.0), r.gen_range(0.3..3.0)];
        let prim = ScenePrimitive::new(PrimitiveKind::Box, RigidTransform::from_translation(c), size, class::CAR).unwrap();
        let scene = Scene { seed: 0, grid: Some(grid), rig: rig.clone(), primitives: vec![prim] };
        let gt = voxelize(&scene, &grid).unwrap();
        let xs = centers_inside(grid.x_min, grid.xy_res, grid.w(), c[0] - size[0] / 2.0, c[0] + size[0] / 2.0);
        let ys = centers_inside(grid.y_min, grid.xy_res, grid.h(), c[1] - size[1] / 2.0, c[1] + size[1] / 2.0);
        let zs = centers_inside(grid.z_min, grid.z_res, grid.z(), c[2] - size[2] / 2.0, c[2] + size[2] / 2.0);
        let occupied = gt.labels().iter().filter(|&&l| l == class::CAR).count();
        assert_eq!(occupied, xs.len() * ys.len() * zs.len());
        for &z in &zs {
            for &y in &ys {
                for &x in &xs {
                    assert_eq!(gt.get(x, y, z), class::CAR);
                }
            }
        }
    }
}

fn down_camera(altitude: f64, side: u32) -> Camera {
    Camera {
        name: "DOWN".into(),
        intrinsics: CameraIntrinsics::from_fov(side, side, 60.0).unwrap(),
        cam_to_ego: RigidTransform::look_along([0.0, 0.0, altitude], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]).unwrap(),
    }
}

#[test]
fn render_depth_of_flat_ground_is_altitude() {
    let altitude = 12.0;
    let rig = CameraRig::new(vec![down_camera(altitude, 32)]).unwrap();
    let ground = ScenePrimitive::new(
        PrimitiveKind::GroundPlane,
        RigidTransform::from_translation([0.0, 0.0, 0.5]),
        [200.0, 200.0, 0.4],
        class::TERRAIN,
    )
    .unwrap();
    let scene = Scene { seed: 0, grid: None, rig, primitives: vec![ground] };
    let render = render_oracle(&scene, 0, 16, 16).unwrap();
    for &d in &render.depth {
        assert!((f64::from(d) - (altitude - 0.5)).abs() < 1e-4, "depth {d}");
    }
    let plane = 16 * 16;
    let terrain = &render.features.data()[usize::from(class::TERRAIN) * plane..][..plane];
    assert!(terrain.iter().all(|&v| v == 1.0));
    assert_eq!(render.features.sum(), plane as f64);
}

/// Visibility by marching from the camera toward the voxel center in small
/// steps and stopping at the first occupied sample outside the voxel.
fn visible_by_march(scene: &Scene, cam: &Camera, grid: &BevGridSpec, ix: usize, iy: usize, iz: usize) -> bool {
    let c = grid.cell_center(ix, iy, iz);
    let k = &cam.intrinsics;
    let pc = mat4_apply(&mat4_inverse(&homogeneous(&cam.cam_to_ego)), c);
    if pc[2] <= 0.0 {
        return false;
    }
    let (u, v) = (k.fx * pc[0] / pc[2] + k.cx, k.fy * pc[1] / pc[2] + k.cy);
    if !(0.0..f64::from(k.width)).contains(&u) || !(0.0..f64::from(k.height)).contains(&v) {
        return false;
    }
    let o = cam.cam_to_ego.translation();
    let dist = ((c[0] - o[0]).powi(2) + (c[1] - o[1]).powi(2) + (c[2] - o[2]).powi(2)).sqrt();
    let steps = (dist / 0.01).ceil() as usize;
    for s in 0..steps {
        let t = s as f64 / steps as f64;
        let p = [o[0] + t * (c[0] - o[0]), o[1] + t * (c[1] - o[1]), o[2] + t * (c[2] - o[2])];
        if cell_of(grid, p) == Some((ix, iy, iz)) {
            return true;
        }
        if scene.label_at(p) != FREE_CLASS {
            return false;
        }
    }
    true
}

#[test]
fn visibility_agrees_with_ray_march() {
    let grid = BevGridSpec::centered(20, 0.8);
    let rig = CameraRig::new(vec![down_camera(10.0, 64)]).unwrap();
    let mut r = rng(5);
    let mut primitives = Vec::new();
    for _ in 0..6 {
        let c = [r.gen_range(-6.0..6.0), r.gen_range(-6.0..6.0), 0.5];
        primitives.push(
            ScenePrimitive::new(PrimitiveKind::Box, RigidTransform::from_yaw(r.gen_range(-1.0..1.0), c), [2.0, 1.5, 2.0], class::CAR).unwrap(),
        );
    }
    let scene = Scene { seed: 0, grid: Some(grid), rig: rig.clone(), primitives };
    let mask = visibility_mask(&scene, &rig, &grid).unwrap();
    let (w, h, z) = grid.dims().unwrap();
    let mut agree = 0;
    for iz in 0..z {
        for iy in 0..h {
            for ix in 0..w {
                if mask.get(ix, iy, iz) == visible_by_march(&scene, &rig.cameras()[0], &grid, ix, iy, iz) {
                    agree += 1;
                }
            }
        }
    }
    let total = w * h * z;
    assert!(agree as f64 >= 0.99 * total as f64, "{agree}/{total} voxels agree");
    assert!(mask.count() > 0 && mask.count() < total);
}

#[test]
fn peak_bytes_equal_sum_of_simultaneously_live_tensors() {
    let scope = MemoryScope::start();
    let a = Tensor::zeros(&[100]);
    let b = Tensor::zeros(&[50]);
    drop(a);
    let c = Tensor::zeros(&[120]);
    let peak = scope.peak() - scope.baseline();
    assert_eq!(peak, 4 * (50 + 120));
    drop((b, c));

    let scope = MemoryScope::start();
    let x = Tensor::zeros(&[1, 2, 8, 8]);
    let p = Conv2dParams::new(Tensor::zeros(&[3, 2, 3, 3]), Tensor::zeros(&[3]), 1, 1).unwrap();
    let params = scope.peak() - scope.baseline();
    let y = conv2d(&x, &p).unwrap();
    assert_eq!(scope.peak() - scope.baseline(), params + 4 * 3 * 64);
    drop(y);
}

#[test]
fn conv_flops_follow_formula_and_scale_with_width() {
    let p = Conv2dParams::new(Tensor::zeros(&[4, 3, 3, 3]), Tensor::zeros(&[4]), 1, 1).unwrap();
    assert_eq!(p.flops(10, 20).unwrap(), 2 * 3 * 9 * 4 * 10 * 20);
    assert_eq!(p.flops(10, 40).unwrap(), 2 * p.flops(10, 20).unwrap());
    let s = Conv2dParams::new(Tensor::zeros(&[4, 3, 3, 3]), Tensor::zeros(&[4]), 2, 1).unwrap();
    assert_eq!(s.flops(10, 20).unwrap(), 2 * 3 * 9 * 4 * 5 * 10);
    assert_eq!(NUM_CLASSES, 18);
}
