//! The patch grader: a small 3D encoder-decoder with skip connections.
//!
//! For `levels = 2` the layer stack is
//!
//! ```text
//! enc0a 3^3 (1 -> b)      enc0b 3^3 (b -> b)       -> skip, 2x max pool
//! mid_a 3^3 (b -> 2b)     mid_b 3^3 (2b -> 2b)     -> 2x nearest upsample
//! dec0a 3^3 (b + 2b -> b) dec0b 3^3 (b -> b)       (input = [skip, upsampled])
//! head  1^3 (b -> 2)      no activation
//! ```
//!
//! Every 3^3 convolution is followed by a ReLU. Deeper configurations repeat
//! the encoder/decoder pair per level, doubling the width each time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{
    conv_backward, conv_forward, max_pool, max_pool_backward, relu_backward_in_place, relu_in_place,
    upsample_nearest, upsample_nearest_backward, ConvShape, Tensor,
};
use crate::error::{geometry, Error, Result};
use crate::volume::{DcMap, Dims, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraderArch {
    pub patch_dims: Dims,
    pub base_channels: usize,
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// Offset of this layer's kernel in the flat parameter vector; its biases
    /// follow the kernel.
    pub offset: usize,
}

impl LayerDescriptor {
    pub fn shape(&self) -> ConvShape {
        ConvShape {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
        }
    }

    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.shape().param_len()
    }
}

impl GraderArch {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 {
            return Err(Error::Parameter("levels and base_channels must be positive".into()));
        }
        let div = 1usize << (self.levels - 1);
        if self.patch_dims.iter().any(|&d| d == 0 || d % div != 0) {
            return Err(geometry!(
                "patch dims {:?} must be positive multiples of {div} for {} levels",
                self.patch_dims,
                self.levels
            ));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn layers(&self) -> Vec<LayerDescriptor> {
        let mut specs: Vec<(String, usize, usize, usize)> = Vec::new();
        let mut in_c = 1;
        for l in 0..self.levels - 1 {
            let w = self.width(l);
            specs.push((format!("enc{l}a"), in_c, w, 3));
            specs.push((format!("enc{l}b"), w, w, 3));
            in_c = w;
        }
        let deep = self.width(self.levels - 1);
        specs.push(("mid_a".into(), in_c, deep, 3));
        specs.push(("mid_b".into(), deep, deep, 3));
        for l in (0..self.levels - 1).rev() {
            let w = self.width(l);
            specs.push((format!("dec{l}a"), w + self.width(l + 1), w, 3));
            specs.push((format!("dec{l}b"), w, w, 3));
        }
        specs.push(("head".into(), self.base_channels, 2, 1));

        let mut offset = 0;
        specs
            .into_iter()
            .map(|(name, in_channels, out_channels, kernel)| {
                let d = LayerDescriptor {
                    name,
                    in_channels,
                    out_channels,
                    kernel,
                    offset,
                };
                offset += d.shape().param_len();
                d
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.shape().param_len()).sum()
    }
}

/// Parameters of one ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraderWeights {
    pub arch: GraderArch,
    pub layers: Vec<LayerDescriptor>,
    pub params: Vec<f64>,
    pub grid_coord: [usize; 3],
}

impl GraderWeights {
    pub fn zeros(arch: GraderArch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            layers: arch.layers(),
            params: vec![0.0; arch.param_count()],
            grid_coord: [0; 3],
        })
    }

    /// He-normal kernels, zero biases. The linear head uses unit gain.
    pub fn init(arch: GraderArch, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &w.layers {
            let shape = layer.shape();
            let fan_in = (shape.in_channels * shape.kernel.pow(3)) as f64;
            let gain = if layer.name == "head" { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
            for p in &mut w.params[layer.offset..layer.offset + shape.weight_len()] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(w)
    }

    pub fn check(&self) -> Result<()> {
        self.arch.validate()?;
        if self.layers != self.arch.layers() {
            return Err(Error::Format("layer descriptors do not match the architecture".into()));
        }
        if self.params.len() != self.arch.param_count() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                self.arch.param_count(),
                self.params.len()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Data("non-finite grader parameter".into()));
        }
        Ok(())
    }

    fn layer_params(&self, i: usize) -> &[f64] {
        &self.params[self.layers[i].param_range()]
    }

    fn check_input(&self, dims: Dims) -> Result<()> {
        if dims != self.arch.patch_dims {
            return Err(geometry!(
                "patch dims {dims:?} do not match grader dims {:?}",
                self.arch.patch_dims
            ));
        }
        Ok(())
    }

    fn conv(&self, i: usize, x: &Tensor, relu: bool) -> Result<Tensor> {
        let mut y = conv_forward(&self.layers[i].shape(), self.layer_params(i), x);
        if relu {
            relu_in_place(&mut y);
        }
        if y.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                layer: self.layers[i].name.clone(),
                message: "non-finite activation".into(),
            });
        }
        Ok(y)
    }

    fn run(&self, input: Tensor, mut cache: Option<&mut Cache>) -> Result<Tensor> {
        let levels = self.arch.levels;
        let mut layer = 0;
        let mut x = input;
        let mut skips = Vec::new();
        let mut conv = |x: Tensor, cache: &mut Option<&mut Cache>, relu: bool| -> Result<Tensor> {
            let y = self.conv(layer, &x, relu)?;
            if let Some(c) = cache.as_deref_mut() {
                c.conv_inputs.push(x);
                c.conv_outputs.push(y.clone());
            }
            layer += 1;
            Ok(y)
        };
        for _ in 0..levels - 1 {
            x = conv(x, &mut cache, true)?;
            x = conv(x, &mut cache, true)?;
            let (pooled, argmax) = max_pool(&x);
            if let Some(c) = cache.as_deref_mut() {
                c.pool_argmax.push(argmax);
                c.pool_dims.push(x.dims);
            }
            skips.push(x);
            x = pooled;
        }
        x = conv(x, &mut cache, true)?;
        x = conv(x, &mut cache, true)?;
        for _ in 0..levels - 1 {
            let skip = skips.pop().expect("one skip per level");
            x = Tensor::concat(&skip, &upsample_nearest(&x));
            x = conv(x, &mut cache, true)?;
            x = conv(x, &mut cache, true)?;
        }
        conv(x, &mut cache, false)
    }

    /// Two-channel output with the spatial dims of the input patch.
    pub fn forward(&self, patch: &Volume3D) -> Result<Tensor> {
        self.check_input(patch.dims())?;
        self.run(Tensor::from_data(1, patch.dims(), patch.data().to_vec()), None)
    }

    pub fn forward_tensor(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input.dims)?;
        self.run(input.clone(), None)
    }

    /// Gradient of `mean_b mse(forward(x_b), t_b)` with respect to every
    /// parameter, together with that loss.
    pub fn backward(&self, batch: &[(Tensor, Tensor)]) -> Result<(f64, Vec<f64>)> {
        self.backward_scaled(batch, 1.0)
    }

    /// [`Self::backward`] for the loss multiplied by `loss_scale`.
    pub fn backward_scaled(&self, batch: &[(Tensor, Tensor)], loss_scale: f64) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = loss_scale / batch.len() as f64;
        for (input, target) in batch {
            self.check_input(input.dims)?;
            let mut cache = Cache::default();
            let pred = self.run(input.clone(), Some(&mut cache))?;
            loss += scale * mse(&pred, target)?;
            let n = pred.data.len() as f64;
            let grad_out = Tensor::from_data(
                pred.channels,
                pred.dims,
                pred.data
                    .iter()
                    .zip(&target.data)
                    .map(|(p, t)| scale * 2.0 * (p - t) / n)
                    .collect(),
            );
            self.backprop(cache, grad_out, &mut grads);
        }
        Ok((loss, grads))
    }

    fn backprop(&self, mut cache: Cache, grad_out: Tensor, grads: &mut [f64]) {
        let levels = self.arch.levels;
        let mut layer = self.layers.len();
        let mut conv_back = |g: Tensor, cache: &mut Cache, relu: bool| -> Tensor {
            layer -= 1;
            let input = cache.conv_inputs.pop().expect("cached input");
            let output = cache.conv_outputs.pop().expect("cached output");
            let mut g = g;
            if relu {
                relu_backward_in_place(&mut g, &output);
            }
            let d = &self.layers[layer];
            let gi = conv_backward(
                &d.shape(),
                &self.params[d.param_range()],
                &input,
                &g,
                &mut grads[d.param_range()],
                layer > 0,
            );
            gi.unwrap_or_else(|| Tensor::zeros(input.channels, input.dims))
        };

        let mut g = conv_back(grad_out, &mut cache, false);
        let mut skip_grads = Vec::new();
        for l in 0..levels - 1 {
            g = conv_back(g, &mut cache, true);
            g = conv_back(g, &mut cache, true);
            let skip_c = self.arch.width(l);
            let (gs, gu) = g.split(skip_c);
            skip_grads.push(gs);
            g = upsample_nearest_backward(&gu);
        }
        g = conv_back(g, &mut cache, true);
        g = conv_back(g, &mut cache, true);
        for _ in 0..levels - 1 {
            let argmax = cache.pool_argmax.pop().expect("cached pool");
            let dims = cache.pool_dims.pop().expect("cached pool dims");
            g = max_pool_backward(&g, &argmax, dims);
            let gs = skip_grads.pop().expect("skip gradient");
            for (a, b) in g.data.iter_mut().zip(&gs.data) {
                *a += b;
            }
            g = conv_back(g, &mut cache, true);
            g = conv_back(g, &mut cache, true);
        }
    }
}

#[derive(Default)]
struct Cache {
    conv_inputs: Vec<Tensor>,
    conv_outputs: Vec<Tensor>,
    pool_argmax: Vec<Vec<usize>>,
    pool_dims: Vec<Dims>,
}

fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.channels != target.channels || pred.dims != target.dims {
        return Err(geometry!(
            "prediction {}x{:?} does not match target {}x{:?}",
            pred.channels,
            pred.dims,
            target.channels,
            target.dims
        ));
    }
    let sum: f64 = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.data.len() as f64)
}

/// Mean over voxels and both channels of the squared difference.
pub fn mse_loss(pred: &DcMap, target: &DcMap) -> Result<f64> {
    if pred.dims() != target.dims() {
        return Err(geometry!(
            "prediction dims {:?} do not match target dims {:?}",
            pred.dims(),
            target.dims()
        ));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.data().len() as f64)
}

pub fn tensor_mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    mse(pred, target)
}
