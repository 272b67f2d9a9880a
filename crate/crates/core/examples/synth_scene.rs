//! Generates a random scene, voxelizes it and renders oracle depth for
//! the front camera.

use flashocc::eval::FREE_CLASS;
use flashocc::geometry::CameraRig;
use flashocc::scene::{random_scene, render_oracle, voxelize};
use flashocc::view_transform::BevGridSpec;

fn main() -> flashocc::Result<()> {
    let grid = BevGridSpec::centered(40, 1.0);
    let scene = random_scene(3, CameraRig::surround(176, 64)?, Some(grid), 16)?;
    println!("{} primitives", scene.primitives.len());

    let gt = voxelize(&scene, &grid)?;
    let mut counts = [0usize; 256];
    for &l in gt.labels() {
        counts[l as usize] += 1;
    }
    for (class, n) in counts.iter().enumerate().filter(|(c, n)| **n > 0 && *c != FREE_CLASS as usize) {
        println!("class {class:>2}: {n} voxels");
    }

    let render = render_oracle(&scene, 0, 22, 8)?;
    for row in render.depth.chunks(22) {
        let line: Vec<String> = row
            .iter()
            .map(|d| if d.is_finite() { format!("{d:4.0}") } else { "   -".into() })
            .collect();
        println!("{}", line.join(""));
    }
    Ok(())
}
