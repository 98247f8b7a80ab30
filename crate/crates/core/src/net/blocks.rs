//! Building blocks. Every block lists its parameters in a fixed order; that order is the
//! `<index>` part of the `<component>.<block>.<index>` checkpoint keys.

use candle_core::{DType, Device, Result, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops;

const NORM_EPS: f64 = 1e-5;
const LEAK: f64 = 0.2;

/// Seeded parameter factory.
pub(crate) struct Init<'a, R: Rng> {
    pub rng: &'a mut R,
    pub std: f64,
    pub dtype: DType,
    pub device: &'a Device,
}

impl<R: Rng> Init<'_, R> {
    fn normal(&mut self, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, self.std).expect("valid std");
        let data: Vec<f64> = (0..n).map(|_| dist.sample(self.rng)).collect();
        Var::from_tensor(&Tensor::from_vec(data, shape, self.device)?.to_dtype(self.dtype)?)
    }

    fn constant(&mut self, n: usize, value: f64) -> Result<Var> {
        Var::from_tensor(&(Tensor::ones(n, self.dtype, self.device)? * value)?)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: Var,
    pub bias: Var,
    stride: usize,
    pad: usize,
}

impl Conv {
    pub(crate) fn new<R: Rng>(init: &mut Init<R>, in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        Ok(Self {
            weight: init.normal(&[out_c, in_c, kernel, kernel])?,
            bias: init.constant(out_c, 0.0)?,
            stride,
            pad,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(x, self.weight.as_tensor(), self.bias.as_tensor(), self.stride, self.pad)
    }

    fn params(&self) -> Vec<Var> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: Var,
    pub beta: Var,
}

impl Norm {
    fn new<R: Rng>(init: &mut Init<R>, c: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant(c, 1.0)?,
            beta: init.constant(c, 0.0)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::instance_norm(x, self.gamma.as_tensor(), self.beta.as_tensor(), NORM_EPS)
    }

    fn params(&self) -> Vec<Var> {
        vec![self.gamma.clone(), self.beta.clone()]
    }
}

/// Stride-2 4×4 convolution, optional instance norm, leaky ReLU. Halves the resolution.
#[derive(Clone, Debug)]
pub struct DownBlock {
    conv: Conv,
    norm: Option<Norm>,
}

impl DownBlock {
    pub(crate) fn new<R: Rng>(init: &mut Init<R>, in_c: usize, out_c: usize, normalize: bool) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(init, in_c, out_c, 4, 2, 1)?,
            norm: if normalize { Some(Norm::new(init, out_c)?) } else { None },
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.conv.forward(x)?;
        if let Some(norm) = &self.norm {
            h = norm.forward(&h)?;
        }
        ops::leaky_relu(&h, LEAK)
    }

    pub fn params(&self) -> Vec<Var> {
        let mut p = self.conv.params();
        if let Some(n) = &self.norm {
            p.extend(n.params());
        }
        p
    }
}

/// Two 3×3 conv + instance norm layers with an identity skip.
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv,
    norm1: Norm,
    conv2: Conv,
    norm2: Norm,
}

impl ResBlock {
    pub(crate) fn new<R: Rng>(init: &mut Init<R>, c: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv::new(init, c, c, 3, 1, 1)?,
            norm1: Norm::new(init, c)?,
            conv2: Conv::new(init, c, c, 3, 1, 1)?,
            norm2: Norm::new(init, c)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(&self.conv1.forward(x)?)?.relu()?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?;
        x + h
    }

    pub fn params(&self) -> Vec<Var> {
        let mut p = self.conv1.params();
        p.extend(self.norm1.params());
        p.extend(self.conv2.params());
        p.extend(self.norm2.params());
        p
    }
}

/// Nearest ×2 upsampling, 3×3 conv, instance norm, ReLU.
#[derive(Clone, Debug)]
pub struct UpBlock {
    conv: Conv,
    norm: Norm,
}

impl UpBlock {
    pub(crate) fn new<R: Rng>(init: &mut Init<R>, in_c: usize, out_c: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(init, in_c, out_c, 3, 1, 1)?,
            norm: Norm::new(init, out_c)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv.forward(&ops::upsample2(x)?)?;
        self.norm.forward(&h)?.relu()
    }

    pub fn params(&self) -> Vec<Var> {
        let mut p = self.conv.params();
        p.extend(self.norm.params());
        p
    }
}

/// 3×3 conv to three channels, `tanh` rescaled into `[0, 1]`.
#[derive(Clone, Debug)]
pub struct OutBlock {
    conv: Conv,
}

impl OutBlock {
    pub(crate) fn new<R: Rng>(init: &mut Init<R>, in_c: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(init, in_c, 3, 3, 1, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        (self.conv.forward(x)?.tanh()? + 1.0)? * 0.5
    }

    pub fn params(&self) -> Vec<Var> {
        self.conv.params()
    }
}

/// Final 3×3 unpadded conv of a patch discriminator, producing one logit per patch.
#[derive(Clone, Debug)]
pub struct LogitBlock {
    conv: Conv,
}

impl LogitBlock {
    pub(crate) fn new<R: Rng>(init: &mut Init<R>, in_c: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(init, in_c, 1, 3, 1, 0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.conv.forward(x)
    }

    pub fn params(&self) -> Vec<Var> {
        self.conv.params()
    }
}
