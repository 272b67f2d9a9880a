//! A flash head turns BEV features into per-height logits by reshaping
//! channels into a height axis.

use flashocc::config::PipelineConfig;
use flashocc::head::{channel_to_height, flash_head, FlashHeadParams};
use flashocc::init::ParamBuilder;
use flashocc::Tensor;

fn main() -> flashocc::Result<()> {
    let (classes, z) = (18, 16);
    let bev = Tensor::from_fn(&[1, classes * z, 4, 4], |i| i as f32);
    let vol = channel_to_height(bev.clone(), classes, z)?;
    println!("{:?} -> {:?}", bev.shape(), vol.shape());
    // channel c = k * Z + z
    assert_eq!(vol.at(&[0, 3, 5, 1, 2]), bev.at(&[0, 3 * z + 5, 1, 2]));

    let mut b = ParamBuilder::seeded(PipelineConfig::desk().seed);
    let head = FlashHeadParams::build(&mut b, "head", &[32, 64, classes * z], classes, z)?;
    let logits = flash_head(&Tensor::full(&[1, 32, 8, 8], 0.5), &head)?;
    println!("flash head logits {:?}", logits.shape());
    Ok(())
}
