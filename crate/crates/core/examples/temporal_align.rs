//! Warps a BEV feature from the previous ego pose into the current one.

use flashocc::geometry::RigidTransform;
use flashocc::temporal::align_bev;
use flashocc::view_transform::BevGridSpec;
use flashocc::Tensor;

fn main() -> flashocc::Result<()> {
    let grid = BevGridSpec::centered(9, 1.0);
    let mut history = Tensor::zeros(&[1, 1, 9, 9]);
    // a single lit cell one metre ahead of the old ego position
    let idx = history.offset(&[0, 0, 4, 5]);
    history.data_mut()[idx] = 1.0;

    let before = RigidTransform::identity();
    let after = RigidTransform::from_translation([1.0, 0.0, 0.0]);
    let aligned = align_bev(&history, &before, &after, &grid)?;
    let lit: Vec<_> = (0..81).filter(|&i| aligned.data()[i] > 0.5).map(|i| (i % 9, i / 9)).collect();
    println!("after driving 1 m forward the cell moves from (5, 4) to {lit:?}");

    let turned = RigidTransform::from_yaw(std::f64::consts::FRAC_PI_2, [0.0, 0.0, 0.0]);
    let aligned = align_bev(&history, &before, &turned, &grid)?;
    let lit: Vec<_> = (0..81).filter(|&i| aligned.data()[i] > 0.5).map(|i| (i % 9, i / 9)).collect();
    println!("after turning left 90 degrees it sits at {lit:?}");
    Ok(())
}
