use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    relu_inplace(&mut out);
    out
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = v.max(0.0);
    }
}

/// Per-channel statistics for inference-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub mean: Tensor,
    pub var: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f32,
}

impl BatchNormParams {
    /// Zero mean, unit variance, unit scale, zero shift.
    pub fn identity(channels: usize, eps: f32) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], 1.0),
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.numel()
    }
}

/// `(x − mean) / sqrt(var + eps) · gamma + beta`, per channel on axis 1.
pub fn batch_norm_inference(
    t: &Tensor,
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> Result<Tensor> {
    let mut out = t.clone();
    batch_norm_inplace(&mut out, mean, var, gamma, beta, eps)?;
    Ok(out)
}

pub fn batch_norm_inplace(
    t: &mut Tensor,
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::invalid("batch_norm", format!("eps must be positive, got {eps}")));
    }
    if t.ndim() < 2 {
        return Err(Error::shape("batch_norm", format!("need a channel axis, got {:?}", t.shape())));
    }
    let c = t.dim(1);
    for (name, s) in [("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)] {
        if s.len() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("{name} has {} entries for {c} channels", s.len()),
            ));
        }
    }
    let inner: usize = t.shape()[2..].iter().product();
    let scale: Vec<f32> = (0..c).map(|i| gamma[i] / (var[i] + eps).sqrt()).collect();
    for (k, chunk) in t.data_mut().chunks_mut(inner).enumerate() {
        let ch = k % c;
        for v in chunk {
            *v = (*v - mean[ch]) * scale[ch] + beta[ch];
        }
    }
    Ok(())
}

pub fn batch_norm_with(t: &mut Tensor, bn: &BatchNormParams) -> Result<()> {
    batch_norm_inplace(
        t,
        bn.mean.data(),
        bn.var.data(),
        bn.gamma.data(),
        bn.beta.data(),
        bn.eps,
    )
}

/// Numerically stable softmax along `axis`.
pub fn softmax_axis(t: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= t.ndim() {
        return Err(Error::invalid(
            "softmax",
            format!("axis {axis} out of range for {:?}", t.shape()),
        ));
    }
    let n = t.dim(axis);
    let inner: usize = t.shape()[axis + 1..].iter().product();
    let outer: usize = t.shape()[..axis].iter().product();
    let mut out = t.clone();
    let data = out.data_mut();
    let mut buf = vec![0.0f32; n];
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..inner {
            let mut max = f32::NEG_INFINITY;
            for k in 0..n {
                max = max.max(data[base + k * inner + i]);
            }
            let mut sum = 0.0f64;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = (data[base + k * inner + i] - max).exp();
                sum += f64::from(*b);
            }
            for (k, b) in buf.iter().enumerate() {
                data[base + k * inner + i] = (f64::from(*b) / sum) as f32;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps() {
        let t = Tensor::scalar_vec(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_statistics() {
        let t = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f32 * 0.5 - 3.0);
        let bn = BatchNormParams::identity(3, 1e-12);
        let mut y = t.clone();
        batch_norm_with(&mut y, &bn).unwrap();
        assert!(y.max_abs_diff(&t) <= 1e-6);
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let t = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(batch_norm_inference(&t, &[0.0], &[1.0], &[1.0], &[0.0], 0.0).is_err());
        assert!(batch_norm_inference(&t, &[0.0], &[1.0], &[1.0], &[0.0], -1.0).is_err());
        assert!(batch_norm_inference(&t, &[0.0, 0.0], &[1.0], &[1.0], &[0.0], 1e-5).is_err());
    }

    #[test]
    fn softmax_closed_forms() {
        let t = Tensor::zeros(&[1, 4, 1, 1]);
        let s = softmax_axis(&t, 1).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let t = Tensor::scalar_vec(&[0.0, 3f32.ln()]);
        let s = softmax_axis(&t, 0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-6 && (s.data()[1] - 0.75).abs() < 1e-6);
        assert!(softmax_axis(&t, 1).is_err());
    }

    #[test]
    fn softmax_handles_large_logits() {
        let t = Tensor::scalar_vec(&[1000.0, 1000.0]);
        let s = softmax_axis(&t, 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }
}
