use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source index pair and weight of the second sample for one output
/// coordinate of a 2× align-corners-false bilinear upsample.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    (0..out_len)
        .map(|o| {
            let src = ((o as f32 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

/// Bilinear 2× upsample of `[B, C, H, W]` (align-corners false, edge clamp).
pub fn upsample2x_bilinear(t: &Tensor) -> Result<Tensor> {
    if t.ndim() != 4 {
        return Err(Error::shape(
            "upsample2x",
            format!("expected [B, C, H, W], got {:?}", t.shape()),
        ));
    }
    let (b, c, h, w) = (t.dim(0), t.dim(1), t.dim(2), t.dim(3));
    let (oh, ow) = (2 * h, 2 * w);
    let ty = taps(oh, h);
    let tx = taps(ow, w);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in t.data().chunks(h * w) {
        for &(y0, y1, ly) in &ty {
            let r0 = &plane[y0 * w..(y0 + 1) * w];
            let r1 = &plane[y1 * w..(y1 + 1) * w];
            for &(x0, x1, lx) in &tx {
                let top = r0[x0] * (1.0 - lx) + r0[x1] * lx;
                let bottom = r1[x0] * (1.0 - lx) + r1[x1] * lx;
                out.push(top * (1.0 - ly) + bottom * ly);
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_preserved() {
        let t = Tensor::full(&[1, 2, 3, 5], 3.0);
        let u = upsample2x_bilinear(&t).unwrap();
        assert_eq!(u.shape(), &[1, 2, 6, 10]);
        assert!(u.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn two_sample_row() {
        let t = Tensor::new(&[1, 1, 1, 2], vec![0.0, 2.0]).unwrap();
        let u = upsample2x_bilinear(&t).unwrap();
        assert_eq!(u.shape(), &[1, 1, 2, 4]);
        assert_eq!(&u.data()[..4], &[0.0, 0.5, 1.5, 2.0]);
        assert_eq!(&u.data()[4..], &[0.0, 0.5, 1.5, 2.0]);
    }
}
