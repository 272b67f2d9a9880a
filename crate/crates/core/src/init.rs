//! Parameter construction: seeded He-uniform initialization, all-zero
//! networks, or tensors loaded from a checkpoint.
//!
//! Each parameter draws from its own ChaCha8 stream keyed by the network
//! seed and the parameter name, so adding a layer never perturbs the values
//! of the others.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{BatchNormParams, Conv2dParams, Conv3dParams};
use crate::tensor::Tensor;

pub const BN_EPS: f32 = 1e-5;

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// RNG for a named parameter under `seed`.
pub fn named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name))
}

#[derive(Debug)]
enum Source {
    Seeded(u64),
    Zeros,
    Store(BTreeMap<String, Tensor>),
}

#[derive(Debug)]
pub struct ParamBuilder {
    source: Source,
    count: usize,
}

impl ParamBuilder {
    pub fn seeded(seed: u64) -> Self {
        Self {
            source: Source::Seeded(seed),
            count: 0,
        }
    }

    /// Every weight, bias and BN shift is zero; BN statistics are identity.
    pub fn zeros() -> Self {
        Self {
            source: Source::Zeros,
            count: 0,
        }
    }

    pub fn from_store(store: BTreeMap<String, Tensor>) -> Self {
        Self {
            source: Source::Store(store),
            count: 0,
        }
    }

    /// Number of scalar parameters handed out so far.
    pub fn parameter_count(&self) -> usize {
        self.count
    }

    /// Fails if a checkpoint held tensors that no layer asked for.
    pub fn finish(self) -> Result<usize> {
        if let Source::Store(store) = &self.source {
            if let Some(name) = store.keys().next() {
                return Err(Error::config(
                    name.clone(),
                    format!("checkpoint holds {} unused tensor(s)", store.len()),
                ));
            }
        }
        Ok(self.count)
    }

    fn take(
        &mut self,
        name: &str,
        shape: &[usize],
        make: impl FnOnce(Option<u64>) -> Tensor,
    ) -> Result<Tensor> {
        let t = match &mut self.source {
            Source::Seeded(seed) => make(Some(*seed)),
            Source::Zeros => make(None),
            Source::Store(store) => {
                let found = store
                    .get(name)
                    .ok_or_else(|| Error::config(name, "missing from checkpoint"))?;
                if found.shape() != shape {
                    return Err(Error::config(
                        name,
                        format!("checkpoint shape {:?}, expected {shape:?}", found.shape()),
                    ));
                }
                store.remove(name).expect("present")
            }
        };
        self.count += t.numel();
        Ok(t)
    }

    /// He-uniform weight: `U(−b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<Tensor> {
        self.take(name, shape, |seed| match seed {
            Some(seed) => {
                let bound = (6.0 / fan_in.max(1) as f32).sqrt();
                let mut rng = named_rng(seed, name);
                Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
            }
            None => Tensor::zeros(shape),
        })
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Tensor> {
        self.take(name, shape, |_| Tensor::full(shape, value))
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Conv2dParams> {
        let weight = self.weight(
            &format!("{name}.weight"),
            &[cout, cin, kernel, kernel],
            cin * kernel * kernel,
        )?;
        let bias = self.constant(&format!("{name}.bias"), &[cout], 0.0)?;
        Conv2dParams::new(weight, bias, stride, kernel / 2)
    }

    pub fn conv3d(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
    ) -> Result<Conv3dParams> {
        let weight = self.weight(
            &format!("{name}.weight"),
            &[cout, cin, kernel, kernel, kernel],
            cin * kernel * kernel * kernel,
        )?;
        let bias = self.constant(&format!("{name}.bias"), &[cout], 0.0)?;
        Conv3dParams::new(weight, bias, 1, kernel / 2)
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> Result<BatchNormParams> {
        Ok(BatchNormParams {
            mean: self.constant(&format!("{name}.mean"), &[channels], 0.0)?,
            var: self.constant(&format!("{name}.var"), &[channels], 1.0)?,
            gamma: self.constant(&format!("{name}.gamma"), &[channels], 1.0)?,
            beta: self.constant(&format!("{name}.beta"), &[channels], 0.0)?,
            eps: BN_EPS,
        })
    }
}

/// Collects `(name, tensor)` pairs in the same naming scheme that
/// [`ParamBuilder`] used to create them.
#[derive(Debug, Default)]
pub struct ParamCollector<'a> {
    pub entries: Vec<(String, &'a Tensor)>,
}

impl<'a> ParamCollector<'a> {
    pub fn tensor(&mut self, name: String, t: &'a Tensor) {
        self.entries.push((name, t));
    }

    pub fn conv2d(&mut self, name: &str, p: &'a Conv2dParams) {
        self.tensor(format!("{name}.weight"), &p.weight);
        self.tensor(format!("{name}.bias"), &p.bias);
    }

    pub fn conv3d(&mut self, name: &str, p: &'a Conv3dParams) {
        self.tensor(format!("{name}.weight"), &p.weight);
        self.tensor(format!("{name}.bias"), &p.bias);
    }

    pub fn batch_norm(&mut self, name: &str, bn: &'a BatchNormParams) {
        self.tensor(format!("{name}.mean"), &bn.mean);
        self.tensor(format!("{name}.var"), &bn.var);
        self.tensor(format!("{name}.gamma"), &bn.gamma);
        self.tensor(format!("{name}.beta"), &bn.beta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_weights_are_reproducible_and_bounded() {
        let a = ParamBuilder::seeded(7).weight("w", &[4, 3, 3, 3], 27).unwrap();
        let b = ParamBuilder::seeded(7).weight("w", &[4, 3, 3, 3], 27).unwrap();
        let c = ParamBuilder::seeded(8).weight("w", &[4, 3, 3, 3], 27).unwrap();
        let d = ParamBuilder::seeded(7).weight("v", &[4, 3, 3, 3], 27).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        let bound = (6.0f32 / 27.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn store_checks_shapes_and_leftovers() {
        let mut store = BTreeMap::new();
        store.insert("a".to_string(), Tensor::zeros(&[2]));
        store.insert("b".to_string(), Tensor::zeros(&[3]));
        let mut builder = ParamBuilder::from_store(store);
        assert!(builder.weight("a", &[3], 1).is_err());
        assert!(builder.weight("b", &[3], 1).is_ok());
        assert!(builder.finish().is_err());
    }
}
