//! Differentiable primitives on top of candle.
//!
//! Convolutions go through an explicit im2col/col2im pair followed by a matmul. candle's
//! native CPU conv backward routes the input gradient through a direct transposed
//! convolution, which is several times slower for the small feature maps used here.

use candle_core::{bail, backend::BackendStorage, CpuStorage, CustomOp1, Layout, Result, Shape, Tensor, D};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn cols_shape(&self) -> Shape {
        Shape::from((
            self.batch,
            self.channels * self.kernel * self.kernel,
            self.out_h * self.out_w,
        ))
    }

    fn image_shape(&self) -> Shape {
        Shape::from((self.batch, self.channels, self.height, self.width))
    }

    /// Calls `f(image_index, column_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let g = *self;
        let kk = g.kernel * g.kernel;
        let hw = g.out_h * g.out_w;
        for b in 0..g.batch {
            for c in 0..g.channels {
                let plane = (b * g.channels + c) * g.height * g.width;
                for ki in 0..g.kernel {
                    for kj in 0..g.kernel {
                        let row = (b * g.channels * kk + c * kk + ki * g.kernel + kj) * hw;
                        for oy in 0..g.out_h {
                            let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.height as isize {
                                continue;
                            }
                            let src_row = plane + iy as usize * g.width;
                            for ox in 0..g.out_w {
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if ix < 0 || ix >= g.width as isize {
                                    continue;
                                }
                                f(src_row + ix as usize, row + oy * g.out_w + ox);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Copy + Default>(&self, src: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); self.cols_shape().elem_count()];
        self.for_each_tap(|i, o| out[o] = src[i]);
        out
    }

    fn col2im<T: Copy + Default + std::ops::AddAssign>(&self, src: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); self.image_shape().elem_count()];
        self.for_each_tap(|i, o| out[i] += src[o]);
        out
    }
}

struct Im2Col(Geometry);
struct Col2Im(Geometry);

fn contiguous<'a>(storage: &'a CpuStorage, layout: &Layout) -> Result<(&'a CpuStorage, usize, usize)> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok((storage, a, b)),
        None => bail!("im2col expects a contiguous input"),
    }
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let (storage, a, b) = contiguous(storage, layout)?;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(self.0.im2col(&v[a..b])),
            CpuStorage::F64(v) => CpuStorage::F64(self.0.im2col(&v[a..b])),
            other => bail!("im2col: unsupported dtype {:?}", other.dtype()),
        };
        Ok((out, self.0.cols_shape()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Col2Im(self.0))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let (storage, a, b) = contiguous(storage, layout)?;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(self.0.col2im(&v[a..b])),
            CpuStorage::F64(v) => CpuStorage::F64(self.0.col2im(&v[a..b])),
            other => bail!("col2im: unsupported dtype {:?}", other.dtype()),
        };
        Ok((out, self.0.image_shape()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1(Im2Col(self.0))?))
    }
}

/// 2-D convolution of `x: (B, C, H, W)` with `weight: (O, C, K, K)` and `bias: (O)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (batch, channels, height, width) = x.dims4()?;
    let (out_c, in_c, kernel, kernel_w) = weight.dims4()?;
    if in_c != channels || kernel != kernel_w {
        bail!("conv2d: input has {channels} channels, weight expects {in_c} ({kernel}x{kernel_w})");
    }
    if height + 2 * pad < kernel || width + 2 * pad < kernel {
        bail!("conv2d: {height}x{width} input too small for kernel {kernel} with padding {pad}");
    }
    let geo = Geometry {
        batch,
        channels,
        height,
        width,
        kernel,
        stride,
        pad,
        out_h: (height + 2 * pad - kernel) / stride + 1,
        out_w: (width + 2 * pad - kernel) / stride + 1,
    };
    let cols = x.contiguous()?.apply_op1(Im2Col(geo))?;
    let w = weight.reshape((out_c, channels * kernel * kernel))?;
    // broadcast matmul needs a materialized batch dimension on the left operand
    let w = w.unsqueeze(0)?.repeat((batch, 1, 1))?;
    let y = w.matmul(&cols)?.reshape((batch, out_c, geo.out_h, geo.out_w))?;
    y.broadcast_add(&bias.reshape((1, out_c, 1, 1))?)
}

/// Per-sample, per-channel normalization with affine `gamma`/`beta` of shape `(C)`.
pub fn instance_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    normed
        .broadcast_mul(&gamma.reshape((1, c, 1))?)?
        .broadcast_add(&beta.reshape((1, c, 1))?)?
        .reshape((b, c, h, w))
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    x.maximum(&(x * slope)?)
}

/// `log(1 + exp(x))`, stable for large `|x|`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    x.relu()? + tail
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    x.upsample_nearest2d(2 * h, 2 * w)
}
