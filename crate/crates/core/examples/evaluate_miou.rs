//! Confusion matrix and mIoU of a corrupted prediction, with and without
//! the camera visibility mask.

use flashocc::eval::{confusion, miou, semantic_classes, NUM_CLASSES};
use flashocc::geometry::CameraRig;
use flashocc::scene::{random_scene, visibility_mask, voxelize};
use flashocc::view_transform::BevGridSpec;

fn main() -> flashocc::Result<()> {
    let grid = BevGridSpec::centered(32, 1.0);
    let scene = random_scene(11, CameraRig::surround(176, 64)?, Some(grid), 12)?;
    let gt = voxelize(&scene, &grid)?;
    let mask = visibility_mask(&scene, &scene.rig, &grid)?;

    let mut pred = gt.clone();
    let (w, h, z) = pred.dims();
    for iz in 0..z {
        for iy in 0..h {
            for ix in (0..w).step_by(3) {
                pred.set(ix, iy, iz, ((ix + iy + iz) % NUM_CLASSES) as u8)?;
            }
        }
    }

    let classes = semantic_classes(NUM_CLASSES);
    for (name, m) in [("all voxels", None), ("visible only", Some(&mask))] {
        let conf = confusion(&pred, &gt, m)?;
        let report = miou(&conf, &classes)?;
        println!("{name:>12}: {} voxels, mIoU {:?}", conf.total(), report.miou);
    }
    println!("{} of {} voxels are visible", mask.count(), gt.len());
    Ok(())
}
