//! Randomized invariants.

mod common;

use std::path::Path;

use flashocc::bench::Stats;
use flashocc::config::{HeadPath, PipelineConfig};
use flashocc::eval::{confusion, miou, semantic_classes, OccupancyGrid, VisibilityMask, NUM_CLASSES};
use flashocc::geometry::{CameraRig, RigidTransform};
use flashocc::head::{channel_to_height, height_to_channel};
use flashocc::ops::{conv2d, Conv2dParams};
use flashocc::temporal::align_bev;
use flashocc::view_transform::{splat, BevGridSpec, DepthBins};
use flashocc::{tensor::ften, Tensor};
use proptest::prelude::*;

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(48)
}

fn tensor_from(shape: &[usize], seed: u64) -> Tensor {
    common::random_tensor(&mut common::rng(seed), shape, -1.0, 1.0)
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn channel_to_height_moves_values_only(
        b in 1usize..3, k in 1usize..6, z in 1usize..6, h in 1usize..7, w in 1usize..7, seed in any::<u64>()
    ) {
        let t = tensor_from(&[b, k * z, h, w], seed);
        let v = channel_to_height(t.clone(), k, z).unwrap();
        prop_assert_eq!(v.shape(), &[b, k, z, h, w]);
        for (bi, ki, zi, y, x) in [(b - 1, k - 1, z - 1, h - 1, w - 1), (0, k / 2, z / 2, h / 2, w / 2)] {
            prop_assert_eq!(v.at(&[bi, ki, zi, y, x]).to_bits(), t.at(&[bi, ki * z + zi, y, x]).to_bits());
        }
        let back = height_to_channel(v).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn channel_to_height_rejects_wrong_width(k in 1usize..6, z in 2usize..6) {
        let t = Tensor::zeros(&[1, k * z + 1, 2, 2]);
        prop_assert!(channel_to_height(t, k, z).is_err());
    }

    #[test]
    fn conv2d_is_linear_in_its_input(
        cin in 1usize..4, cout in 1usize..4, h in 3usize..8, w in 3usize..8,
        a in -2.0f32..2.0, seed in any::<u64>()
    ) {
        let weight = tensor_from(&[cout, cin, 3, 3], seed);
        let p = Conv2dParams::new(weight, Tensor::zeros(&[cout]), 1, 1).unwrap();
        let x = tensor_from(&[1, cin, h, w], seed ^ 1);
        let y = tensor_from(&[1, cin, h, w], seed ^ 2);
        let mut mix = x.clone();
        for (m, v) in mix.data_mut().iter_mut().zip(y.data()) {
            *m = a * *m + v;
        }
        let lhs = conv2d(&mix, &p).unwrap();
        let (cx, cy) = (conv2d(&x, &p).unwrap(), conv2d(&y, &p).unwrap());
        for ((l, px), py) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (a * px + py)).abs() < 1e-4);
        }
    }

    #[test]
    fn splat_conserves_mass_inside_the_grid(
        cam in 0usize..6, cells in 4usize..24, res in 0.5f64..6.0, seed in any::<u64>()
    ) {
        let rig = CameraRig::surround(176, 64).unwrap();
        let grid = BevGridSpec::centered(cells, res);
        let depth = DepthBins::new(1.0, 45.0, 4.0).unwrap();
        let frustum = depth.frustum(22, 8, 8.0).unwrap();
        let mut r = common::rng(seed);
        let lifted = common::random_tensor(&mut r, &[1, 2, depth.count(), 8, 22], 0.0, 1.0);
        let out = splat(&frustum, &lifted, &rig.cameras()[cam], &grid).unwrap();
        prop_assert!(out.bev.sum() <= lifted.sum() * (1.0 + 1e-6));
        prop_assert!(out.bev.data().iter().all(|&v| v >= 0.0));
        prop_assert!(out.dropped <= frustum.len());
        if out.dropped == 0 {
            prop_assert!((out.bev.sum() - lifted.sum()).abs() <= 1e-4 * lifted.sum());
        }
    }

    #[test]
    fn alignment_under_equal_poses_is_identity(
        yaw in -3.1f64..3.1, tx in -50.0f64..50.0, ty in -50.0f64..50.0, seed in any::<u64>()
    ) {
        let grid = BevGridSpec::centered(12, 0.5);
        let pose = RigidTransform::from_yaw(yaw, [tx, ty, 0.0]);
        let hist = tensor_from(&[1, 3, 12, 12], seed);
        let out = align_bev(&hist, &pose, &pose, &grid).unwrap();
        for (a, b) in out.data().iter().zip(hist.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rigid_inverse_composes_to_identity(
        ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0, angle in -3.1f64..3.1,
        t in prop::array::uniform3(-20.0f64..20.0), p in prop::array::uniform3(-20.0f64..20.0)
    ) {
        let tf = RigidTransform::from_axis_angle([ax, ay, az], angle, t);
        let q = tf.inverse().apply(tf.apply(p));
        let r = tf.compose(&tf.inverse()).apply(p);
        for i in 0..3 {
            prop_assert!((q[i] - p[i]).abs() < 1e-9);
            prop_assert!((r[i] - p[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn confusion_total_counts_evaluated_voxels(
        w in 1usize..9, h in 1usize..9, z in 1usize..5, seed in any::<u64>()
    ) {
        let mut r = common::rng(seed);
        let pred = common::random_grid(&mut r, w, h, z, NUM_CLASSES as u8);
        let gt = common::random_grid(&mut r, w, h, z, NUM_CLASSES as u8);
        let flags: Vec<bool> = (0..w * h * z).map(|_| rand::Rng::gen_bool(&mut r, 0.5)).collect();
        let mask = VisibilityMask::new(w, h, z, flags).unwrap();
        prop_assert_eq!(confusion(&pred, &gt, None).unwrap().total(), (w * h * z) as u64);
        let masked = confusion(&pred, &gt, Some(&mask)).unwrap();
        prop_assert_eq!(masked.total(), mask.count() as u64);

        let report = miou(&masked, &semantic_classes(NUM_CLASSES)).unwrap();
        for iou in report.per_class_iou.iter().flatten() {
            prop_assert!((0.0..=1.0).contains(iou));
        }
        if let Some(m) = report.miou {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn occupancy_grid_round_trips(w in 1usize..9, h in 1usize..9, z in 1usize..5, seed in any::<u64>()) {
        let g = common::random_grid(&mut common::rng(seed), w, h, z, NUM_CLASSES as u8);
        let back = OccupancyGrid::from_bytes(&g.to_bytes(), Path::new("mem")).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn ften_round_trips(shape in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
        let t = tensor_from(&shape, seed);
        let back = ften::decode(&ften::encode(&t), Path::new("mem")).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn ften_rejects_truncation(cut in 1usize..16, seed in any::<u64>()) {
        let bytes = ften::encode(&tensor_from(&[2, 3], seed));
        prop_assert!(ften::decode(&bytes[..bytes.len() - cut], Path::new("mem")).is_err());
    }

    #[test]
    fn stats_are_ordered(samples in prop::collection::vec(0.0f64..10.0, 3..40)) {
        let s = Stats::from_samples(&samples).unwrap();
        prop_assert!(s.min <= s.p10 && s.p10 <= s.median && s.median <= s.p90 && s.p90 <= s.max);
    }

    #[test]
    fn config_json_round_trips(seed in any::<u64>(), voxel in any::<bool>()) {
        let mut c = PipelineConfig::desk().with_path(if voxel { HeadPath::Voxel } else { HeadPath::Flash });
        c.seed = seed;
        let back = PipelineConfig::from_json(&c.to_json(), Path::new("mem")).unwrap();
        prop_assert_eq!(back, c);
    }
}
