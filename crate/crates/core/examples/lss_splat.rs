//! Lift-splat of constant features: every frustum point carries mass
//! `1 / D`, so the BEV total counts the points that land in the grid.

use flashocc::geometry::CameraRig;
use flashocc::view_transform::{ls_transform, BevGridSpec, DepthBins};
use flashocc::Tensor;

fn main() -> flashocc::Result<()> {
    let rig = CameraRig::surround(176, 64)?;
    let grid = BevGridSpec::centered(32, 1.0);
    let depth = DepthBins::new(1.0, 45.0, 1.0)?;
    let (fw, fh) = (22, 8);
    let feats: Vec<Tensor> = (0..rig.len()).map(|_| Tensor::full(&[1, 1, fh, fw], 1.0)).collect();
    let out = ls_transform(&feats, &rig, &grid, &depth, 8.0)?;

    let points = rig.len() * fw * fh * depth.count();
    let kept = points - out.dropped;
    println!("{points} frustum points, {} outside the grid", out.dropped);
    println!("BEV mass {:.4}, expected {:.4}", out.bev.sum(), kept as f64 / depth.count() as f64);

    let (w, h) = (grid.w(), grid.h());
    for y in (0..h).step_by(4) {
        let row: String = (0..w)
            .map(|x| match out.bev.at(&[0, 0, y, x]) {
                v if v == 0.0 => ' ',
                v if v < 1.0 => '.',
                v if v < 4.0 => '+',
                _ => '#',
            })
            .collect();
        println!("|{row}|");
    }
    Ok(())
}
