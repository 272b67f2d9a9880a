//! 2D and 3D cross-correlation with zero padding.
//!
//! Both kernels lower to the same routine: the input is unfolded tile by
//! tile into a column matrix (`Cin·Kd·Kh·Kw` rows, one column per output
//! position) and multiplied by the weight matrix with `sgemm`. A 2D
//! convolution is the depth-1 case. Tiles are sized so the column buffer
//! stays around 4 MiB regardless of the layer width.

use rayon::prelude::*;

use super::counter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TILE_TARGET_FLOATS: usize = 1 << 20;

/// Parameters of a 2D convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams {
    /// `[Cout, Cin, Kh, Kw]`
    pub weight: Tensor,
    /// `[Cout]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

/// Parameters of a 3D convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dParams {
    /// `[Cout, Cin, Kd, Kh, Kw]`
    pub weight: Tensor,
    /// `[Cout]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

fn check_layer(op: &'static str, weight: &Tensor, bias: &Tensor, rank: usize, stride: usize) -> Result<()> {
    if weight.ndim() != rank {
        return Err(Error::shape(
            op,
            format!("weight must have rank {rank}, got {:?}", weight.shape()),
        ));
    }
    if weight.shape()[2..].iter().any(|k| k % 2 == 0) {
        return Err(Error::shape(
            op,
            format!("kernel sizes must be odd, got {:?}", &weight.shape()[2..]),
        ));
    }
    if bias.shape() != [weight.dim(0)] {
        return Err(Error::shape(
            op,
            format!("bias {:?} does not match Cout {}", bias.shape(), weight.dim(0)),
        ));
    }
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be positive"));
    }
    Ok(())
}

fn out_extent(op: &'static str, size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = size + 2 * padding;
    if padded < kernel {
        return Err(Error::shape(
            op,
            format!("input extent {size} with padding {padding} is smaller than kernel {kernel}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

impl Conv2dParams {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        check_layer("conv2d", &weight, &bias, 4, stride)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn cout(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn cin(&self) -> usize {
        self.weight.dim(1)
    }

    /// `(Kh, Kw)`
    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.dim(2), self.weight.dim(3))
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        Ok((
            out_extent("conv2d", h, kh, self.stride, self.padding)?,
            out_extent("conv2d", w, kw, self.stride, self.padding)?,
        ))
    }

    /// Analytic FLOPs per batch item on an `h × w` input:
    /// `2·Cin·Kh·Kw·Cout·H'·W'`.
    pub fn flops(&self, h: usize, w: usize) -> Result<u64> {
        let (oh, ow) = self.output_size(h, w)?;
        let (kh, kw) = self.kernel();
        Ok(2 * (self.cin() * kh * kw * self.cout() * oh * ow) as u64)
    }
}

impl Conv3dParams {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        check_layer("conv3d", &weight, &bias, 5, stride)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn cout(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn cin(&self) -> usize {
        self.weight.dim(1)
    }

    /// `(Kd, Kh, Kw)`
    pub fn kernel(&self) -> (usize, usize, usize) {
        (self.weight.dim(2), self.weight.dim(3), self.weight.dim(4))
    }

    pub fn output_size(&self, d: usize, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let (kd, kh, kw) = self.kernel();
        Ok((
            out_extent("conv3d", d, kd, self.stride, self.padding)?,
            out_extent("conv3d", h, kh, self.stride, self.padding)?,
            out_extent("conv3d", w, kw, self.stride, self.padding)?,
        ))
    }

    /// Analytic FLOPs per batch item: `2·Cin·Kd·Kh·Kw·Cout·Z'·H'·W'`.
    pub fn flops(&self, d: usize, h: usize, w: usize) -> Result<u64> {
        let (od, oh, ow) = self.output_size(d, h, w)?;
        let (kd, kh, kw) = self.kernel();
        Ok(2 * (self.cin() * kd * kh * kw * self.cout() * od * oh * ow) as u64)
    }
}

/// Geometry of one lowered convolution, 2D layers use depth 1.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    cout: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }

    fn flops_per_item(&self) -> u64 {
        2 * (self.rows() * self.cout * self.out_plane()) as u64
    }

    fn tile_columns(&self) -> usize {
        let n = self.out_plane();
        let t = (TILE_TARGET_FLOATS / self.rows().max(1)).max(16);
        let t = t.next_multiple_of(16);
        t.min(n)
    }
}

/// Unfolds output positions `p0..p1` of one batch item into `col`
/// (`rows × (p1 − p0)`, row-major).
fn im2col(g: &Geometry, input: &[f32], p0: usize, p1: usize, col: &mut [f32]) {
    let t = p1 - p0;
    let [id, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let mut row = 0;
    for c in 0..g.cin {
        let chan = &input[c * g.in_plane()..(c + 1) * g.in_plane()];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut col[row * t..(row + 1) * t];
                    let mut p = p0;
                    while p < p1 {
                        let oz = p / (oh * ow);
                        let rem = p % (oh * ow);
                        let oy = rem / ow;
                        let ox0 = rem % ow;
                        let run = (ow - ox0).min(p1 - p);
                        let z = (oz * sd + a) as isize - pd as isize;
                        let y = (oy * sh + b) as isize - ph as isize;
                        let out = &mut dst[p - p0..p - p0 + run];
                        if z < 0 || z >= id as isize || y < 0 || y >= ih as isize {
                            out.fill(0.0);
                        } else {
                            let line = &chan[(z as usize * ih + y as usize) * iw..][..iw];
                            for (k, slot) in out.iter_mut().enumerate() {
                                let x = ((ox0 + k) * sw + e) as isize - pw as isize;
                                *slot = if x < 0 || x >= iw as isize {
                                    0.0
                                } else {
                                    line[x as usize]
                                };
                            }
                        }
                        p += run;
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `c[cout × t] += weight[cout × rows] · b[rows × t]`, with `c` rows
/// `ldc` apart and `b` rows `ldb` apart.
#[allow(clippy::too_many_arguments)]
fn gemm_accumulate(
    weight: &[f32],
    cout: usize,
    rows: usize,
    b: &[f32],
    ldb: usize,
    t: usize,
    c: &mut [f32],
    ldc: usize,
) {
    // SAFETY: all three slices cover the strided extents passed to sgemm:
    // weight is cout×rows dense, b spans (rows−1)·ldb + t, c spans
    // (cout−1)·ldc + t. Callers uphold these bounds.
    debug_assert!(weight.len() >= cout * rows);
    debug_assert!(b.len() >= (rows - 1) * ldb + t);
    debug_assert!(c.len() >= (cout - 1) * ldc + t);
    unsafe {
        matrixmultiply::sgemm(
            cout,
            rows,
            t,
            1.0,
            weight.as_ptr(),
            rows as isize,
            1,
            b.as_ptr(),
            ldb as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

fn run(g: &Geometry, batch: usize, input: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let n = g.out_plane();
    let rows = g.rows();
    let mut out = vec![0.0f32; batch * g.cout * n];
    for (chunk, &b) in out.chunks_mut(n).zip(bias.iter().cycle()) {
        chunk.fill(b);
    }
    let tile = g.tile_columns();
    let tiles: Vec<(usize, usize)> = (0..n).step_by(tile).map(|p0| (p0, (p0 + tile).min(n))).collect();
    for item in 0..batch {
        let x = &input[item * g.cin * g.in_plane()..(item + 1) * g.cin * g.in_plane()];
        let y = &mut out[item * g.cout * n..(item + 1) * g.cout * n];
        if g.is_pointwise() {
            for &(p0, p1) in &tiles {
                gemm_accumulate(weight, g.cout, rows, &x[p0..], n, p1 - p0, &mut y[p0..], n);
            }
        } else if super::parallel_enabled() {
            let blocks: Vec<Vec<f32>> = tiles
                .par_iter()
                .map(|&(p0, p1)| {
                    let t = p1 - p0;
                    let mut col = vec![0.0f32; rows * t];
                    im2col(g, x, p0, p1, &mut col);
                    let mut block = vec![0.0f32; g.cout * t];
                    for (r, &b) in block.chunks_mut(t).zip(bias) {
                        r.fill(b);
                    }
                    gemm_accumulate(weight, g.cout, rows, &col, t, t, &mut block, t);
                    block
                })
                .collect();
            for (&(p0, p1), block) in tiles.iter().zip(blocks) {
                let t = p1 - p0;
                for (co, src) in block.chunks(t).enumerate() {
                    y[co * n + p0..co * n + p1].copy_from_slice(src);
                }
            }
        } else {
            let mut col = vec![0.0f32; rows * tile];
            for &(p0, p1) in &tiles {
                let t = p1 - p0;
                im2col(g, x, p0, p1, &mut col[..rows * t]);
                gemm_accumulate(weight, g.cout, rows, &col[..rows * t], t, t, &mut y[p0..], n);
            }
        }
    }
    out
}

/// 2D cross-correlation of `input [B, Cin, H, W]`.
pub fn conv2d(input: &Tensor, params: &Conv2dParams) -> Result<Tensor> {
    if input.ndim() != 4 || input.dim(1) != params.cin() {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input {:?} vs weight {:?} (expected [B, {}, H, W])",
                input.shape(),
                params.weight.shape(),
                params.cin()
            ),
        ));
    }
    let (b, h, w) = (input.dim(0), input.dim(2), input.dim(3));
    let (oh, ow) = params.output_size(h, w)?;
    let (kh, kw) = params.kernel();
    let g = Geometry {
        cin: params.cin(),
        cout: params.cout(),
        input: [1, h, w],
        output: [1, oh, ow],
        kernel: [1, kh, kw],
        stride: [1, params.stride, params.stride],
        padding: [0, params.padding, params.padding],
    };
    counter::record_conv2d(g.flops_per_item() * b as u64);
    let data = run(&g, b, input.data(), params.weight.data(), params.bias.data());
    Tensor::new(&[b, params.cout(), oh, ow], data)
}

/// 3D cross-correlation of `input [B, Cin, D, H, W]`.
pub fn conv3d(input: &Tensor, params: &Conv3dParams) -> Result<Tensor> {
    if input.ndim() != 5 {
        return Err(Error::shape(
            "conv3d",
            format!("input must be [B, Cin, D, H, W], got {:?}", input.shape()),
        ));
    }
    conv3d_raw(input.data(), input.shape(), params)
}

/// [`conv3d`] over a borrowed buffer interpreted with `shape`. Lets the
/// voxel head read a BEV tensor as `[B, C/Z, Z, H, W]` without copying.
pub fn conv3d_raw(data: &[f32], shape: &[usize], params: &Conv3dParams) -> Result<Tensor> {
    if shape.len() != 5 || shape[1] != params.cin() || data.len() != shape.iter().product::<usize>() {
        return Err(Error::shape(
            "conv3d",
            format!(
                "input {shape:?} vs weight {:?} (expected [B, {}, D, H, W])",
                params.weight.shape(),
                params.cin()
            ),
        ));
    }
    let (b, d, h, w) = (shape[0], shape[2], shape[3], shape[4]);
    let (od, oh, ow) = params.output_size(d, h, w)?;
    let (kd, kh, kw) = params.kernel();
    let s = params.stride;
    let p = params.padding;
    let g = Geometry {
        cin: params.cin(),
        cout: params.cout(),
        input: [d, h, w],
        output: [od, oh, ow],
        kernel: [kd, kh, kw],
        stride: [s, s, s],
        padding: [p, p, p],
    };
    counter::record_conv3d(g.flops_per_item() * b as u64);
    let out = run(&g, b, data, params.weight.data(), params.bias.data());
    Tensor::new(&[b, params.cout(), od, oh, ow], out)
}
