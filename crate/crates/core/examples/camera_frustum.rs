//! Pinhole projection and the frustum point cloud of a surround rig.

use flashocc::geometry::{pixel_to_camera, CameraRig};
use flashocc::view_transform::DepthBins;

fn main() -> flashocc::Result<()> {
    let rig = CameraRig::surround(176, 64)?;
    let depth = DepthBins::new(1.0, 45.0, 4.0)?;
    let frustum = depth.frustum(22, 8, 8.0)?;
    println!("{} cameras, {} frustum points each", rig.len(), frustum.len());

    for (i, cam) in rig.cameras().iter().enumerate() {
        let k = &cam.intrinsics;
        let (u, v) = (frustum.u(11), frustum.v(4));
        let p_cam = pixel_to_camera(u, v, 10.0, k)?;
        let p_ego = cam.cam_to_ego.apply(p_cam);
        let back = k.project(p_cam).expect("in front of the camera");
        println!(
            "cam {i}: pixel ({u:.1}, {v:.1}) at 10 m -> ego ({:.2}, {:.2}, {:.2}), reprojects to ({:.3}, {:.3})",
            p_ego[0], p_ego[1], p_ego[2], back.0, back.1
        );
    }
    Ok(())
}
