//! Convolution, upsampling and softmax on small tensors, with operation
//! counts from the op scope.

use flashocc::init::ParamBuilder;
use flashocc::ops::counter::OpScope;
use flashocc::ops::{conv2d, conv3d, softmax_axis, upsample2x_bilinear};
use flashocc::Tensor;

fn main() -> flashocc::Result<()> {
    let mut b = ParamBuilder::seeded(1);
    let c2 = b.conv2d("demo.conv2d", 4, 8, 3, 1)?;
    let c3 = b.conv3d("demo.conv3d", 2, 3, 3)?;
    let ops = OpScope::start();

    let x = Tensor::from_fn(&[1, 4, 10, 12], |i| (i % 7) as f32 * 0.1);
    let y = conv2d(&x, &c2)?;
    println!("conv2d {:?} -> {:?}, {} FLOPs", x.shape(), y.shape(), c2.flops(10, 12)?);

    let v = Tensor::from_fn(&[1, 2, 4, 6, 6], |i| (i % 5) as f32 * 0.2);
    let w = conv3d(&v, &c3)?;
    println!("conv3d {:?} -> {:?}, {} FLOPs", v.shape(), w.shape(), c3.flops(4, 6, 6)?);

    let up = upsample2x_bilinear(&y)?;
    println!("upsample2x {:?} -> {:?}", y.shape(), up.shape());

    let p = softmax_axis(&y, 1)?;
    let col: f32 = (0..8).map(|c| p.at(&[0, c, 3, 3])).sum();
    println!("softmax over channels sums to {col:.6}");

    let counts = ops.counts();
    println!("{counts:?}");
    Ok(())
}
