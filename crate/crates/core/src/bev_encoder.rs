//! Residual 2D encoder and two-scale FPN-LSS neck.
//!
//! The same building blocks back the BEV encoder (three stages at 1×, 2×,
//! 4× downsampling) and the tiny image encoder (two stages).

use crate::error::{Error, Result};
use crate::init::{ParamBuilder, ParamCollector};
use crate::ops::{batch_norm_with, conv2d, relu_inplace, upsample2x_bilinear, BatchNormParams, Conv2dParams};
use crate::tensor::Tensor;

/// Conv + batch norm pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn {
    pub conv: Conv2dParams,
    pub bn: BatchNormParams,
}

impl ConvBn {
    pub fn build(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: b.conv2d(&format!("{name}.conv"), cin, cout, kernel, stride)?,
            bn: b.batch_norm(&format!("{name}.bn"), cout)?,
        })
    }

    pub fn collect<'a>(&'a self, c: &mut ParamCollector<'a>, name: &str) {
        c.conv2d(&format!("{name}.conv"), &self.conv);
        c.batch_norm(&format!("{name}.bn"), &self.bn);
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = conv2d(x, &self.conv)?;
        batch_norm_with(&mut y, &self.bn)?;
        Ok(y)
    }

    fn forward_relu(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.forward(x)?;
        relu_inplace(&mut y);
        Ok(y)
    }
}

/// Basic residual block: two 3×3 convs with BN, plus a 1×1 projection when
/// width or stride changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlockParams {
    pub first: ConvBn,
    pub second: ConvBn,
    pub projection: Option<ConvBn>,
}

impl ResidualBlockParams {
    pub fn build(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        let projection = if cin != cout || stride != 1 {
            Some(ConvBn::build(b, &format!("{name}.proj"), cin, cout, 1, stride)?)
        } else {
            None
        };
        Ok(Self {
            first: ConvBn::build(b, &format!("{name}.conv1"), cin, cout, 3, stride)?,
            second: ConvBn::build(b, &format!("{name}.conv2"), cout, cout, 3, 1)?,
            projection,
        })
    }

    pub fn collect<'a>(&'a self, c: &mut ParamCollector<'a>, name: &str) {
        self.first.collect(c, &format!("{name}.conv1"));
        self.second.collect(c, &format!("{name}.conv2"));
        if let Some(p) = &self.projection {
            p.collect(c, &format!("{name}.proj"));
        }
    }

    pub fn cin(&self) -> usize {
        self.first.conv.cin()
    }

    pub fn cout(&self) -> usize {
        self.second.conv.cout()
    }

    pub fn stride(&self) -> usize {
        self.first.conv.stride
    }
}

/// `relu(branch(x) + project(x))`.
pub fn residual_block(x: &Tensor, p: &ResidualBlockParams) -> Result<Tensor> {
    if x.ndim() != 4 || x.dim(1) != p.cin() {
        return Err(Error::shape(
            "residual_block",
            format!("input {:?} for a block expecting {} channels", x.shape(), p.cin()),
        ));
    }
    let hidden = p.first.forward_relu(x)?;
    let mut out = p.second.forward(&hidden)?;
    drop(hidden);
    match &p.projection {
        Some(proj) => out.add_assign(&proj.forward(x)?)?,
        None => out.add_assign(x)?,
    }
    relu_inplace(&mut out);
    Ok(out)
}

/// One residual block per stage; stage 0 keeps resolution, every later
/// stage halves it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub stages: Vec<ResidualBlockParams>,
}

impl EncoderParams {
    pub fn build(b: &mut ParamBuilder, name: &str, cin: usize, widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config(name, "encoder needs at least two stages"));
        }
        let mut stages = Vec::with_capacity(widths.len());
        let mut c = cin;
        for (i, &w) in widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            stages.push(ResidualBlockParams::build(b, &format!("{name}.stage{i}"), c, w, stride)?);
            c = w;
        }
        Ok(Self { stages })
    }

    pub fn collect<'a>(&'a self, c: &mut ParamCollector<'a>, name: &str) {
        for (i, s) in self.stages.iter().enumerate() {
            s.collect(c, &format!("{name}.stage{i}"));
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.cout()).collect()
    }

    /// Downsampling factor of the finer of the two returned features.
    pub fn fine_factor(&self) -> usize {
        1 << (self.stages.len() - 2)
    }
}

/// Runs every stage and returns the outputs of the last two:
/// `(fine, coarse)` with `coarse` at half the resolution of `fine`.
pub fn encode(x: &Tensor, p: &EncoderParams) -> Result<(Tensor, Tensor)> {
    let n = p.stages.len();
    let mut fine = None;
    let mut cur = residual_block(x, &p.stages[0])?;
    for (i, stage) in p.stages.iter().enumerate().skip(1) {
        let next = residual_block(&cur, stage)?;
        if i == n - 1 {
            fine = Some(cur);
        }
        cur = next;
    }
    Ok((fine.expect("at least two stages"), cur))
}

/// `conv(concat(upsample2x(coarse), fine))`, channel order coarse first.
pub fn fpn_lss_fuse(fine: &Tensor, coarse: &Tensor, conv: &Conv2dParams) -> Result<Tensor> {
    if fine.ndim() != 4
        || coarse.ndim() != 4
        || fine.dim(2) != 2 * coarse.dim(2)
        || fine.dim(3) != 2 * coarse.dim(3)
    {
        return Err(Error::shape(
            "fpn_lss_fuse",
            format!("coarse {:?} is not half of fine {:?}", coarse.shape(), fine.shape()),
        ));
    }
    let up = upsample2x_bilinear(coarse)?;
    let cat = Tensor::concat(&[&up, fine], 1)?;
    drop(up);
    conv2d(&cat, conv)
}

/// FPN-LSS neck: fuse, then upsample back to the encoder input resolution
/// with one 3×3 conv per 2× step.
#[derive(Debug, Clone, PartialEq)]
pub struct NeckParams {
    pub fuse: ConvBn,
    pub restore: Vec<ConvBn>,
}

impl NeckParams {
    pub fn build(b: &mut ParamBuilder, name: &str, encoder: &EncoderParams, out: usize) -> Result<Self> {
        let w = encoder.widths();
        let n = w.len();
        let fuse = ConvBn::build(b, &format!("{name}.fuse"), w[n - 1] + w[n - 2], out, 3, 1)?;
        let steps = encoder.fine_factor().trailing_zeros() as usize;
        let restore = (0..steps)
            .map(|i| ConvBn::build(b, &format!("{name}.up{i}"), out, out, 3, 1))
            .collect::<Result<_>>()?;
        Ok(Self { fuse, restore })
    }

    pub fn collect<'a>(&'a self, c: &mut ParamCollector<'a>, name: &str) {
        self.fuse.collect(c, &format!("{name}.fuse"));
        for (i, r) in self.restore.iter().enumerate() {
            r.collect(c, &format!("{name}.up{i}"));
        }
    }

    pub fn out_channels(&self) -> usize {
        self.fuse.conv.cout()
    }
}

pub fn neck(fine: &Tensor, coarse: &Tensor, p: &NeckParams) -> Result<Tensor> {
    let mut x = fpn_lss_fuse(fine, coarse, &p.fuse.conv)?;
    batch_norm_with(&mut x, &p.fuse.bn)?;
    relu_inplace(&mut x);
    for r in &p.restore {
        let up = upsample2x_bilinear(&x)?;
        x = r.forward_relu(&up)?;
    }
    Ok(x)
}

/// Encoder plus neck: `[B, Cin, H, W] → [B, out, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNeck {
    pub encoder: EncoderParams,
    pub neck: NeckParams,
}

impl EncoderNeck {
    pub fn build(b: &mut ParamBuilder, name: &str, cin: usize, widths: &[usize], out: usize) -> Result<Self> {
        let encoder = EncoderParams::build(b, &format!("{name}.backbone"), cin, widths)?;
        let neck = NeckParams::build(b, &format!("{name}.neck"), &encoder, out)?;
        Ok(Self { encoder, neck })
    }

    pub fn collect<'a>(&'a self, c: &mut ParamCollector<'a>, name: &str) {
        self.encoder.collect(c, &format!("{name}.backbone"));
        self.neck.collect(c, &format!("{name}.neck"));
    }

    /// Analytic conv FLOPs per batch item on an `h × w` input.
    pub fn flops(&self, h: usize, w: usize) -> Result<u64> {
        let mut total = 0;
        let (mut h, mut w) = (h, w);
        let mut sizes = Vec::with_capacity(self.encoder.stages.len());
        for s in &self.encoder.stages {
            total += s.first.conv.flops(h, w)?;
            if let Some(p) = &s.projection {
                total += p.conv.flops(h, w)?;
            }
            (h, w) = s.first.conv.output_size(h, w)?;
            total += s.second.conv.flops(h, w)?;
            sizes.push((h, w));
        }
        let (mut h, mut w) = sizes[sizes.len() - 2];
        total += self.neck.fuse.conv.flops(h, w)?;
        for r in &self.neck.restore {
            (h, w) = (2 * h, 2 * w);
            total += r.conv.flops(h, w)?;
        }
        Ok(total)
    }

    /// Neck output plus the encoder's `(fine, coarse)` features.
    pub fn forward_scales(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        self.check_input(x)?;
        let (fine, coarse) = encode(x, &self.encoder)?;
        let out = neck(&fine, &coarse, &self.neck)?;
        Ok((out, fine, coarse))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let factor = 1 << (self.encoder.stages.len() - 1);
        if x.ndim() != 4 || !x.dim(2).is_multiple_of(factor) || !x.dim(3).is_multiple_of(factor) {
            return Err(Error::shape(
                "encoder",
                format!("input {:?} must be divisible by {factor} spatially", x.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (fine, coarse) = encode(x, &self.encoder)?;
        neck(&fine, &coarse, &self.neck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_block_is_relu_of_input() {
        let p = ResidualBlockParams::build(&mut ParamBuilder::zeros(), "b", 3, 3, 1).unwrap();
        assert!(p.projection.is_none());
        let x = Tensor::from_fn(&[1, 3, 4, 4], |i| i as f32 - 20.0);
        let y = residual_block(&x, &p).unwrap();
        let expected: Vec<f32> = x.data().iter().map(|v| v.max(0.0)).collect();
        assert_eq!(y.data(), &expected[..]);
    }

    #[test]
    fn stride_two_halves() {
        let p = ResidualBlockParams::build(&mut ParamBuilder::seeded(1), "b", 3, 5, 2).unwrap();
        let y = residual_block(&Tensor::full(&[1, 3, 8, 6], 1.0), &p).unwrap();
        assert_eq!(y.shape(), &[1, 5, 4, 3]);
    }

    #[test]
    fn encode_shapes() {
        let p = EncoderParams::build(&mut ParamBuilder::seeded(3), "e", 4, &[8, 16, 32]).unwrap();
        let (fine, coarse) = encode(&Tensor::full(&[1, 4, 16, 16], 0.5), &p).unwrap();
        assert_eq!(fine.shape(), &[1, 16, 8, 8]);
        assert_eq!(coarse.shape(), &[1, 32, 4, 4]);
    }

    #[test]
    fn encoder_neck_restores_resolution() {
        let net = EncoderNeck::build(&mut ParamBuilder::seeded(3), "bev", 4, &[8, 16, 32], 12).unwrap();
        let y = net.forward(&Tensor::full(&[1, 4, 16, 16], 0.5)).unwrap();
        assert_eq!(y.shape(), &[1, 12, 16, 16]);
        let img = EncoderNeck::build(&mut ParamBuilder::seeded(3), "img", 4, &[8, 16], 12).unwrap();
        assert!(img.neck.restore.is_empty());
        assert_eq!(img.forward(&Tensor::full(&[1, 4, 6, 10], 0.5)).unwrap().shape(), &[1, 12, 6, 10]);
    }

    #[test]
    fn fuse_rejects_bad_ratio() {
        let conv = Conv2dParams::new(Tensor::zeros(&[1, 2, 3, 3]), Tensor::zeros(&[1]), 1, 1).unwrap();
        assert!(fpn_lss_fuse(&Tensor::zeros(&[1, 1, 6, 6]), &Tensor::zeros(&[1, 1, 2, 2]), &conv).is_err());
    }
}
