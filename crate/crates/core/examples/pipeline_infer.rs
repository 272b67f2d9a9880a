//! Runs the desk pipeline on a synthetic scene with both heads.

use flashocc::config::{HeadPath, PipelineConfig};
use flashocc::eval::{confusion, miou, semantic_classes, NUM_CLASSES};
use flashocc::geometry::{CameraRig, RigidTransform};
use flashocc::pipeline::{FrameInput, Pipeline};
use flashocc::scene::{random_scene, voxelize};

fn main() -> flashocc::Result<()> {
    for path in [HeadPath::Flash, HeadPath::Voxel] {
        let mut p = Pipeline::build(&PipelineConfig::desk().with_path(path))?;
        let spec = p.spec().clone();
        let (h, w) = spec.image_size;
        let scene = random_scene(1, CameraRig::surround(w as u32, h as u32)?, Some(spec.grid), 10)?;
        let frame = FrameInput::from_scene(&scene, &spec, RigidTransform::identity(), 0.0)?;
        let out = p.infer(&frame)?;

        let gt = voxelize(&scene, &spec.grid)?;
        let report = miou(&confusion(&out.grid, &gt, None)?, &semantic_classes(NUM_CLASSES))?;
        println!(
            "{}: {} parameters, logits {:?}, {:.1} ms, untrained mIoU {:?}",
            path.as_str(),
            p.parameter_count(),
            out.logits.shape(),
            out.timings.total * 1e3,
            report.miou
        );
        for (stage, secs) in &out.timings.stages {
            println!("  {:<16} {:8.2} ms", stage.as_str(), secs * 1e3);
        }
    }
    Ok(())
}
