//! Occupancy heads.
//!
//! The flash head runs 2D convs on the BEV feature and reinterprets the
//! final `C*·Z` channels as `[C*, Z]` (channel-to-height). The voxel head
//! splits the BEV channels into `Z` height slices and runs 3D convs.
//!
//! Logits are `[B, C*, Z, H, W]` with channel `c = k·Z + z` on the BEV side.

use crate::error::{Error, Result};
use crate::eval::OccupancyGrid;
use crate::init::{ParamBuilder, ParamCollector};
use crate::ops::{conv2d, conv3d, conv3d_raw, relu_inplace, Conv2dParams, Conv3dParams};
use crate::tensor::Tensor;

/// `[B, C*·Z, H, W] → [B, C*, Z, H, W]`; moves the buffer, no values change.
pub fn channel_to_height(bev: Tensor, num_classes: usize, z: usize) -> Result<Tensor> {
    if bev.ndim() != 4 || num_classes == 0 || z == 0 || bev.dim(1) != num_classes * z {
        return Err(Error::shape(
            "channel_to_height",
            format!(
                "channels {} != classes {num_classes} x height bins {z} (input {:?})",
                if bev.ndim() == 4 { bev.dim(1) } else { 0 },
                bev.shape()
            ),
        ));
    }
    let (b, h, w) = (bev.dim(0), bev.dim(2), bev.dim(3));
    bev.into_reshape(&[b, num_classes, z, h, w])
}

/// Inverse of [`channel_to_height`].
pub fn height_to_channel(logits: Tensor) -> Result<Tensor> {
    if logits.ndim() != 5 {
        return Err(Error::shape(
            "height_to_channel",
            format!("expected [B, C*, Z, H, W], got {:?}", logits.shape()),
        ));
    }
    let s = logits.shape().to_vec();
    logits.into_reshape(&[s[0], s[1] * s[2], s[3], s[4]])
}

/// Chain of 3×3 2D convs, ReLU between layers, linear final layer of width
/// `C*·Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlashHeadParams {
    pub layers: Vec<Conv2dParams>,
    pub num_classes: usize,
    pub z: usize,
}

impl FlashHeadParams {
    /// `widths` starts with the input width and ends with `C*·Z`.
    pub fn build(b: &mut ParamBuilder, name: &str, widths: &[usize], num_classes: usize, z: usize) -> Result<Self> {
        Self::build_with_kernel(b, name, widths, num_classes, z, 3)
    }

    pub fn build_with_kernel(
        b: &mut ParamBuilder,
        name: &str,
        widths: &[usize],
        num_classes: usize,
        z: usize,
        kernel: usize,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config(name, "head needs at least one layer"));
        }
        let last = *widths.last().expect("non-empty");
        if last != num_classes * z {
            return Err(Error::config(
                name,
                format!("final width {last} != {num_classes} classes x {z} height bins"),
            ));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| b.conv2d(&format!("{name}.conv{i}"), w[0], w[1], kernel, 1))
            .collect::<Result<_>>()?;
        Self::new(layers, num_classes, z)
    }

    pub fn new(layers: Vec<Conv2dParams>, num_classes: usize, z: usize) -> Result<Self> {
        let chained = layers.windows(2).all(|w| w[0].cout() == w[1].cin());
        let last = layers.last().map(|l| l.cout());
        if !chained || last != Some(num_classes * z) {
            return Err(Error::shape(
                "flash_head",
                format!("layer widths do not chain to {num_classes} x {z}"),
            ));
        }
        Ok(Self {
            layers,
            num_classes,
            z,
        })
    }

    pub fn collect<'a>(&'a self, c: &mut ParamCollector<'a>, name: &str) {
        for (i, l) in self.layers.iter().enumerate() {
            c.conv2d(&format!("{name}.conv{i}"), l);
        }
    }

    pub fn cin(&self) -> usize {
        self.layers[0].cin()
    }
}

fn conv_chain_2d(bev: &Tensor, layers: &[Conv2dParams]) -> Result<Tensor> {
    let n = layers.len();
    let mut x = conv2d(bev, &layers[0])?;
    for layer in &layers[1..] {
        relu_inplace(&mut x);
        x = conv2d(&x, layer)?;
    }
    debug_assert!(n >= 1);
    Ok(x)
}

/// Conv chain followed by channel-to-height.
pub fn flash_head(bev: &Tensor, p: &FlashHeadParams) -> Result<Tensor> {
    let x = conv_chain_2d(bev, &p.layers)?;
    channel_to_height(x, p.num_classes, p.z)
}

/// Multi-scale variant: each input gets a 1×1 projection (with ReLU), the
/// projections are concatenated and fed to a flash chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MsoHeadParams {
    pub projections: Vec<Conv2dParams>,
    pub chain: FlashHeadParams,
}

impl MsoHeadParams {
    pub fn build(
        b: &mut ParamBuilder,
        name: &str,
        input_widths: &[usize],
        projection_widths: &[usize],
        chain_widths: &[usize],
        num_classes: usize,
        z: usize,
    ) -> Result<Self> {
        if input_widths.len() != projection_widths.len() || input_widths.is_empty() {
            return Err(Error::config(
                name,
                format!(
                    "{} inputs for {} projection widths",
                    input_widths.len(),
                    projection_widths.len()
                ),
            ));
        }
        let projections = input_widths
            .iter()
            .zip(projection_widths)
            .enumerate()
            .map(|(i, (&cin, &cout))| b.conv2d(&format!("{name}.proj{i}"), cin, cout, 1, 1))
            .collect::<Result<_>>()?;
        let mut widths = vec![projection_widths.iter().sum()];
        widths.extend_from_slice(chain_widths);
        widths.push(num_classes * z);
        let chain = FlashHeadParams::build(b, &format!("{name}.chain"), &widths, num_classes, z)?;
        Ok(Self { projections, chain })
    }

    pub fn collect<'a>(&'a self, c: &mut ParamCollector<'a>, name: &str) {
        for (i, p) in self.projections.iter().enumerate() {
            c.conv2d(&format!("{name}.proj{i}"), p);
        }
        self.chain.collect(c, &format!("{name}.chain"));
    }
}

pub fn mso_head(inputs: &[&Tensor], p: &MsoHeadParams) -> Result<Tensor> {
    if inputs.len() != p.projections.len() {
        return Err(Error::shape(
            "mso_head",
            format!("{} inputs for {} projections", inputs.len(), p.projections.len()),
        ));
    }
    let projected = inputs
        .iter()
        .zip(&p.projections)
        .map(|(x, proj)| {
            let mut y = conv2d(x, proj)?;
            relu_inplace(&mut y);
            Ok(y)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor> = projected.iter().collect();
    let cat = Tensor::concat(&refs, 1)?;
    drop(projected);
    flash_head(&cat, &p.chain)
}

/// 3D reference head: `k×k×k` convs over `[B, Cv, Z, H, W]` with ReLU after
/// each, then a linear `1×1×1` classifier to `C*`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelHeadParams {
    pub layers: Vec<Conv3dParams>,
    pub classifier: Conv3dParams,
    pub z: usize,
}

impl VoxelHeadParams {
    /// Mirrors a flash chain of `widths` (input width first, `C*·Z` last):
    /// the voxel input width is `widths[0] / Z`, hidden widths are kept per
    /// location, and the final width becomes `C*`.
    pub fn mirror_flash(b: &mut ParamBuilder, name: &str, widths: &[usize], num_classes: usize, z: usize) -> Result<Self> {
        if widths.len() < 2 || z == 0 || !widths[0].is_multiple_of(z) {
            return Err(Error::config(
                name,
                format!("input width {} does not split into {z} height slices", widths.first().unwrap_or(&0)),
            ));
        }
        let mut voxel = widths.to_vec();
        voxel[0] /= z;
        *voxel.last_mut().expect("non-empty") = num_classes;
        Self::build(b, name, &voxel, num_classes, z, 3)
    }

    /// `widths` are per-voxel channel counts, input first.
    pub fn build(
        b: &mut ParamBuilder,
        name: &str,
        widths: &[usize],
        num_classes: usize,
        z: usize,
        kernel: usize,
    ) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| b.conv3d(&format!("{name}.conv{i}"), w[0], w[1], kernel))
            .collect::<Result<Vec<_>>>()?;
        let last = *widths.last().expect("non-empty");
        let classifier = b.conv3d(&format!("{name}.classifier"), last, num_classes, 1)?;
        Self::new(layers, classifier, z)
    }

    pub fn new(layers: Vec<Conv3dParams>, classifier: Conv3dParams, z: usize) -> Result<Self> {
        let chained = layers.windows(2).all(|w| w[0].cout() == w[1].cin())
            && layers.last().is_none_or(|l| l.cout() == classifier.cin());
        if !chained {
            return Err(Error::shape("voxel_head", "layer widths do not chain"));
        }
        Ok(Self { layers, classifier, z })
    }

    pub fn collect<'a>(&'a self, c: &mut ParamCollector<'a>, name: &str) {
        for (i, l) in self.layers.iter().enumerate() {
            c.conv3d(&format!("{name}.conv{i}"), l);
        }
        c.conv3d(&format!("{name}.classifier"), &self.classifier);
    }

    pub fn cin(&self) -> usize {
        self.layers.first().unwrap_or(&self.classifier).cin()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.cout()
    }
}

fn voxel_chain(data: &[f32], shape: &[usize], p: &VoxelHeadParams) -> Result<Tensor> {
    let mut x: Option<Tensor> = None;
    for layer in &p.layers {
        let mut y = match &x {
            None => conv3d_raw(data, shape, layer)?,
            Some(t) => conv3d(t, layer)?,
        };
        relu_inplace(&mut y);
        x = Some(y);
    }
    match &x {
        None => conv3d_raw(data, shape, &p.classifier),
        Some(t) => conv3d(t, &p.classifier),
    }
}

/// Runs the 3D head on a voxel feature `[B, Cv, Z, H, W]`.
pub fn voxel_head(vox: &Tensor, p: &VoxelHeadParams) -> Result<Tensor> {
    if vox.ndim() != 5 {
        return Err(Error::shape(
            "voxel_head",
            format!("expected [B, Cv, Z, H, W], got {:?}", vox.shape()),
        ));
    }
    voxel_chain(vox.data(), vox.shape(), p)
}

/// Runs the 3D head on a BEV tensor `[B, Cv·Z, H, W]` viewed as
/// `[B, Cv, Z, H, W]` without copying.
pub fn voxel_head_from_bev(bev: &Tensor, p: &VoxelHeadParams) -> Result<Tensor> {
    if bev.ndim() != 4 || !bev.dim(1).is_multiple_of(p.z) {
        return Err(Error::shape(
            "voxel_head",
            format!("BEV {:?} does not split into {} height slices", bev.shape(), p.z),
        ));
    }
    let shape = [bev.dim(0), bev.dim(1) / p.z, p.z, bev.dim(2), bev.dim(3)];
    voxel_chain(bev.data(), &shape, p)
}

/// Per-voxel argmax over classes of `[1, C*, Z, H, W]`; ties go to the lowest
/// class id.
pub fn predict_labels(logits: &Tensor) -> Result<OccupancyGrid> {
    if logits.ndim() != 5 || logits.dim(0) != 1 {
        return Err(Error::shape(
            "predict_labels",
            format!("expected [1, C*, Z, H, W], got {:?}", logits.shape()),
        ));
    }
    let (nc, z, h, w) = (logits.dim(1), logits.dim(2), logits.dim(3), logits.dim(4));
    if nc > 256 {
        return Err(Error::invalid("predict_labels", format!("{nc} classes do not fit in a byte")));
    }
    let data = logits.data();
    if let Some(index) = data.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            op: "predict_labels",
            index,
        });
    }
    let n = z * h * w;
    let mut best = data[..n].to_vec();
    let mut labels = vec![0u8; n];
    for k in 1..nc {
        for ((b, l), &v) in best.iter_mut().zip(labels.iter_mut()).zip(&data[k * n..(k + 1) * n]) {
            if v > *b {
                *b = v;
                *l = k as u8;
            }
        }
    }
    OccupancyGrid::new(w, h, z, nc, labels)
}

/// Single 1×1 layer `[C*·Z, C_in]` kept in 64-bit for training.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub cin: usize,
    pub num_classes: usize,
    pub z: usize,
    /// Row-major `[C*·Z, C_in]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(cin: usize, num_classes: usize, z: usize) -> Self {
        let cout = num_classes * z;
        Self {
            cin,
            num_classes,
            z,
            weight: vec![0.0; cout * cin],
            bias: vec![0.0; cout],
        }
    }

    pub fn cout(&self) -> usize {
        self.num_classes * self.z
    }

    pub fn to_flash_params(&self) -> Result<FlashHeadParams> {
        let weight = Tensor::new(
            &[self.cout(), self.cin, 1, 1],
            self.weight.iter().map(|&v| v as f32).collect(),
        )?;
        let bias = Tensor::new(&[self.cout()], self.bias.iter().map(|&v| v as f32).collect())?;
        FlashHeadParams::new(vec![Conv2dParams::new(weight, bias, 1, 0)?], self.num_classes, self.z)
    }
}

/// Mean per-voxel cross-entropy and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHeadGrad {
    pub loss: f64,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

fn check_training_inputs(features: &Tensor, labels: &OccupancyGrid, head: &LinearHead) -> Result<()> {
    let (w, h, z) = labels.dims();
    if features.ndim() != 4
        || features.dim(0) != 1
        || features.dim(1) != head.cin
        || features.dim(2) != h
        || features.dim(3) != w
        || z != head.z
        || labels.num_classes() != head.num_classes
    {
        return Err(Error::shape(
            "linear_head",
            format!(
                "features {:?}, labels {:?} with {} classes, head {}x{} from {}",
                features.shape(),
                labels.dims(),
                labels.num_classes(),
                head.num_classes,
                head.z,
                head.cin
            ),
        ));
    }
    Ok(())
}

pub fn linear_head_loss_and_grad(features: &Tensor, labels: &OccupancyGrid, head: &LinearHead) -> Result<LinearHeadGrad> {
    check_training_inputs(features, labels, head)?;
    let (w, h, z) = labels.dims();
    let pillars = w * h;
    let (cin, nc) = (head.cin, head.num_classes);
    let feats: Vec<f64> = features.data().iter().map(|&v| f64::from(v)).collect();
    let n_voxels = (pillars * z) as f64;

    let mut loss = 0.0;
    let mut gw = vec![0.0; head.weight.len()];
    let mut gb = vec![0.0; head.bias.len()];
    let mut logits = vec![0.0; nc];
    let mut f = vec![0.0; cin];
    for p in 0..pillars {
        for (ci, fv) in f.iter_mut().enumerate() {
            *fv = feats[ci * pillars + p];
        }
        for zi in 0..z {
            for (k, l) in logits.iter_mut().enumerate() {
                let row = k * z + zi;
                let wrow = &head.weight[row * cin..(row + 1) * cin];
                *l = head.bias[row] + wrow.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let target = usize::from(labels.labels()[zi * pillars + p]);
            loss += max + denom.ln() - logits[target];
            for (k, l) in logits.iter().enumerate() {
                let prob = (l - max).exp() / denom;
                let g = (prob - f64::from(u8::from(k == target))) / n_voxels;
                let row = k * z + zi;
                gb[row] += g;
                for (gwv, fv) in gw[row * cin..(row + 1) * cin].iter_mut().zip(&f) {
                    *gwv += g * fv;
                }
            }
        }
    }
    Ok(LinearHeadGrad {
        loss: loss / n_voxels,
        weight: gw,
        bias: gb,
    })
}

#[derive(Debug, Clone)]
pub struct TrainedLinearHead {
    pub head: LinearHead,
    pub params: FlashHeadParams,
    /// Loss before every step, then the final loss (`steps + 1` entries).
    pub losses: Vec<f64>,
}

/// Plain gradient descent on the mean voxel cross-entropy, from zero
/// weights.
pub fn train_linear_head(
    features: &Tensor,
    labels: &OccupancyGrid,
    num_classes: usize,
    z: usize,
    lr: f64,
    steps: usize,
) -> Result<TrainedLinearHead> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid("train_linear_head", format!("learning rate {lr} must be positive")));
    }
    let mut head = LinearHead::zeros(features.dim(1), num_classes, z);
    check_training_inputs(features, labels, &head)?;
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let g = linear_head_loss_and_grad(features, labels, &head)?;
        if !g.loss.is_finite() {
            return Err(Error::Divergence { step, loss: g.loss });
        }
        losses.push(g.loss);
        if step == steps {
            break;
        }
        for (w, d) in head.weight.iter_mut().zip(&g.weight) {
            *w -= lr * d;
        }
        for (b, d) in head.bias.iter_mut().zip(&g.bias) {
            *b -= lr * d;
        }
    }
    Ok(TrainedLinearHead {
        params: head.to_flash_params()?,
        head,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c2h_index_map() {
        let t = Tensor::from_fn(&[1, 6, 2, 3], |i| i as f32);
        let out = channel_to_height(t.clone(), 3, 2).unwrap();
        assert_eq!(out.shape(), &[1, 3, 2, 2, 3]);
        for k in 0..3 {
            for z in 0..2 {
                assert_eq!(out.at(&[0, k, z, 1, 2]), t.at(&[0, k * 2 + z, 1, 2]));
            }
        }
        assert_eq!(height_to_channel(out).unwrap(), t);
        assert!(channel_to_height(Tensor::zeros(&[1, 7, 2, 2]), 3, 2).is_err());
    }

    #[test]
    fn zero_flash_head_gives_zero_logits() {
        let p = FlashHeadParams::build(&mut ParamBuilder::zeros(), "h", &[4, 8, 6], 3, 2).unwrap();
        let out = flash_head(&Tensor::full(&[1, 4, 5, 5], 1.0), &p).unwrap();
        assert_eq!(out.shape(), &[1, 3, 2, 5, 5]);
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert!(FlashHeadParams::build(&mut ParamBuilder::zeros(), "h", &[4, 7], 3, 2).is_err());
    }

    #[test]
    fn voxel_head_shapes() {
        let p = VoxelHeadParams::mirror_flash(&mut ParamBuilder::seeded(1), "v", &[8, 6, 6], 3, 2).unwrap();
        assert_eq!(p.cin(), 4);
        assert_eq!(p.layers.last().unwrap().cout(), 3);
        let bev = Tensor::full(&[1, 8, 4, 5], 0.5);
        let out = voxel_head_from_bev(&bev, &p).unwrap();
        assert_eq!(out.shape(), &[1, 3, 2, 4, 5]);
        let vox = bev.reshape(&[1, 4, 2, 4, 5]).unwrap();
        assert_eq!(voxel_head(&vox, &p).unwrap(), out);
    }

    #[test]
    fn argmax_ties_and_nan() {
        let grid = predict_labels(&Tensor::zeros(&[1, 4, 2, 2, 2])).unwrap();
        assert!(grid.labels().iter().all(|&l| l == 0));
        let mut t = Tensor::zeros(&[1, 3, 1, 1, 2]);
        t.data_mut()[2 * 2 + 1] = 1.0;
        t.data_mut()[2] = 1.0;
        assert_eq!(predict_labels(&t).unwrap().labels(), &[1, 2]);
        t.data_mut()[3] = f32::NAN;
        assert!(matches!(predict_labels(&t), Err(Error::NonFinite { index: 3, .. })));
    }

    #[test]
    fn bias_learning_from_zero_features() {
        let labels = OccupancyGrid::filled(4, 4, 2, 3, 0).unwrap();
        let feats = Tensor::zeros(&[1, 2, 4, 4]);
        let run = train_linear_head(&feats, &labels, 3, 2, 1.0, 50).unwrap();
        assert!(run.losses[0] > run.losses[50]);
        assert!((run.losses[0] - 3f64.ln()).abs() < 1e-12);
        assert!(run.losses[50] < 3f64.ln());
        assert!(run.head.bias[0] > 0.0 && run.head.bias[1] > 0.0);
        assert!(train_linear_head(&feats, &labels, 3, 2, -1.0, 5).is_err());
    }
}
