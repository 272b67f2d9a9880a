//! Dense row-major `f32` tensors.

pub mod ften;
pub mod memory;

use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major tensor of 32-bit reals.
///
/// The shape is fixed at construction. Reshapes and permutes return new
/// tensors; values may be edited in place through [`Tensor::data_mut`].
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl Tensor {
    fn tracked(shape: Vec<usize>, data: Vec<f32>) -> Self {
        memory::register(data.len() * std::mem::size_of::<f32>());
        Self { shape, data }
    }

    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(
                "tensor",
                format!("dimensions must be positive, got {shape:?}"),
            ));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {shape:?} holds {} elements but {} were given",
                    numel_of(shape),
                    data.len()
                ),
            ));
        }
        Ok(Self::tracked(shape.to_vec(), data))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "dimensions must be positive, got {shape:?}"
        );
        Self::tracked(shape.to_vec(), vec![value; numel_of(shape)])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        assert!(shape.iter().all(|&d| d > 0));
        let data = (0..numel_of(shape)).map(&mut f).collect();
        Self::tracked(shape.to_vec(), data)
    }

    pub fn scalar_vec(values: &[f32]) -> Self {
        Self::tracked(vec![values.len()], values.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn size_bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    /// Value at a multi-index. Panics when out of range.
    pub fn at(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range for axis {i} of size {dim}");
            off = off * dim + ix;
        }
        off
    }

    /// Row-major reinterpretation into `new_shape` (copies the data).
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        self.check_reshape(new_shape)?;
        Ok(Self::tracked(new_shape.to_vec(), self.data.clone()))
    }

    /// Row-major reinterpretation that reuses the buffer.
    pub fn into_reshape(mut self, new_shape: &[usize]) -> Result<Tensor> {
        self.check_reshape(new_shape)?;
        // The byte registration moves with the buffer: `self` drops with an
        // empty vector and releases nothing.
        let data = std::mem::take(&mut self.data);
        Ok(Tensor {
            shape: new_shape.to_vec(),
            data,
        })
    }

    fn check_reshape(&self, new_shape: &[usize]) -> Result<()> {
        if new_shape.contains(&0) || numel_of(new_shape) != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!(
                    "cannot view {:?} ({} elements) as {:?} ({} elements)",
                    self.shape,
                    self.numel(),
                    new_shape,
                    numel_of(new_shape)
                ),
            ));
        }
        Ok(())
    }

    /// Reorders axes: output axis `i` is input axis `order[i]`.
    pub fn permute(&self, order: &[usize]) -> Result<Tensor> {
        let rank = self.ndim();
        let mut seen = vec![false; rank];
        if order.len() != rank
            || order
                .iter()
                .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::invalid(
                "permute",
                format!("{order:?} is not a permutation of 0..{rank}"),
            ));
        }
        let in_strides = self.strides();
        let out_shape: Vec<usize> = order.iter().map(|&a| self.shape[a]).collect();
        let src_strides: Vec<usize> = order.iter().map(|&a| in_strides[a]).collect();
        let mut out = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; rank];
        for _ in 0..self.numel() {
            let src: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
            out.push(self.data[src]);
            for axis in (0..rank).rev() {
                idx[axis] += 1;
                if idx[axis] < out_shape[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(Self::tracked(out_shape, out))
    }

    /// Concatenates tensors along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let rank = first.ndim();
        if axis >= rank {
            return Err(Error::invalid("concat", format!("axis {axis} >= rank {rank}")));
        }
        for p in parts {
            let compatible = p.ndim() == rank
                && (0..rank).all(|a| a == axis || p.shape[a] == first.shape[a]);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} along axis {axis}", first.shape, p.shape),
                ));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut shape = first.shape.clone();
        shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(numel_of(&shape));
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Self::tracked(shape, data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self::tracked(self.shape.clone(), data))
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Self::tracked(self.shape.clone(), self.data.clone())
    }
}

impl Drop for Tensor {
    fn drop(&mut self) {
        memory::release(self.data.len() * std::mem::size_of::<f32>());
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f32> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("head", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn reshape_round_trip() {
        let t = Tensor::from_fn(&[2, 6], |i| i as f32);
        let r = t.reshape(&[2, 2, 3]).unwrap();
        assert_eq!(r.at(&[1, 0, 2]), 8.0);
        assert_eq!(r.reshape(&[2, 6]).unwrap(), t);
        assert!(t.reshape(&[5]).is_err());
    }

    #[test]
    fn permute_is_transpose() {
        let t = Tensor::from_fn(&[2, 3], |i| i as f32);
        let p = t.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(p.at(&[j, i]), t.at(&[i, j]));
            }
        }
        assert!(t.permute(&[0, 0]).is_err());
        assert!(t.permute(&[0]).is_err());
    }

    #[test]
    fn concat_channels() {
        let a = Tensor::full(&[1, 1, 2, 2], 1.0);
        let b = Tensor::full(&[1, 2, 2, 2], 2.0);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 3, 2, 2]);
        assert_eq!(&c.data()[..4], &[1.0; 4]);
        assert_eq!(&c.data()[4..], &[2.0; 8]);
    }

    #[test]
    fn byte_accounting_follows_lifetimes() {
        let before = memory::live_bytes();
        let scope = memory::MemoryScope::start();
        let a = Tensor::zeros(&[10]);
        let b = a.clone();
        assert_eq!(memory::live_bytes(), before + 80);
        drop(a);
        let c = b.into_reshape(&[2, 5]).unwrap();
        assert_eq!(memory::live_bytes(), before + 40);
        drop(c);
        assert_eq!(memory::live_bytes(), before);
        assert_eq!(scope.peak(), before + 80);
    }
}
