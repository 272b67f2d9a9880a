//! Fits a 1x1 flash head to a pillar scene by gradient descent.

use flashocc::eval::NUM_CLASSES;
use flashocc::geometry::CameraRig;
use flashocc::head::{flash_head, predict_labels, train_linear_head};
use flashocc::scene::{pillar_features, pillar_scene, voxelize};
use flashocc::view_transform::BevGridSpec;

fn main() -> flashocc::Result<()> {
    let grid = BevGridSpec::centered(16, 0.5);
    let scene = pillar_scene(7, CameraRig::surround(176, 64)?, grid, 0.5, 0.05)?;
    let gt = voxelize(&scene, &grid)?;
    let feats = pillar_features(&gt);

    let steps = 300;
    let trained = train_linear_head(&feats, &gt, NUM_CLASSES, grid.z(), 5.0, steps)?;
    for (step, loss) in trained.losses.iter().enumerate().step_by(50) {
        println!("step {step:>3}: loss {loss:.4}");
    }
    let pred = predict_labels(&flash_head(&feats, &trained.params)?)?;
    let correct = pred.labels().iter().zip(gt.labels()).filter(|(a, b)| a == b).count();
    println!("voxel accuracy {:.3}", correct as f64 / gt.len() as f64);
    Ok(())
}
