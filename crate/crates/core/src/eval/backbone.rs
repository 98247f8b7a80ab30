use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::image::Image3;
use crate::net::ops::conv2d;

/// Tap names, shallow to deep.
pub const TAP_NAMES: [&str; 5] = ["relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"];
/// Convolutions per stage up to the last tap.
const STAGE_CONVS: [usize; 5] = [2, 2, 4, 4, 1];
pub const VGG19_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
/// Widths of the seeded random extractor.
pub const RANDOM_WIDTHS: [usize; 5] = [16, 32, 64, 64, 64];
const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Layer indices in the usual `features.<i>` numbering of a 19-layer VGG.
fn conv_indices() -> Vec<(usize, usize, bool)> {
    // (index, stage, taps after this conv)
    let mut out = Vec::new();
    let mut idx = 0;
    for (stage, &n) in STAGE_CONVS.iter().enumerate() {
        for j in 0..n {
            out.push((idx, stage, j == 0));
            idx += 2;
        }
        idx += 1;
    }
    out
}

/// Fixed convolutional feature extractor with five ReLU taps.
#[derive(Clone, Debug)]
pub struct PerceptualBackbone {
    convs: Vec<(usize, Tensor, Tensor)>,
    source: String,
}

impl PerceptualBackbone {
    /// He-normal weights from a seeded generator.
    pub fn random(seed: u64, widths: [usize; 5]) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_c = 3;
        let mut convs = Vec::new();
        for (idx, stage, _) in conv_indices() {
            let out_c = widths[stage];
            let std = (2.0 / (in_c * 9) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("valid std");
            let w: Vec<f32> = (0..out_c * in_c * 9).map(|_| dist.sample(&mut rng) as f32).collect();
            convs.push((
                idx,
                Tensor::from_vec(w, (out_c, in_c, 3, 3), &Device::Cpu)?,
                Tensor::zeros(out_c, DType::F32, &Device::Cpu)?,
            ));
            in_c = out_c;
        }
        Ok(Self {
            convs,
            source: format!("random:{seed}"),
        })
    }

    /// Loads `features.<i>.weight` / `features.<i>.bias` arrays (f32) from a safetensors file.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let get = |name: &str| -> Result<Tensor> {
            let v = st
                .tensor(name)
                .map_err(|_| Error::Checkpoint(format!("backbone weights lack {name}")))?;
            if v.dtype() != safetensors::Dtype::F32 {
                return Err(Error::Checkpoint(format!("{name} is not f32")));
            }
            let data: Vec<f32> = v
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Tensor::from_vec(data, v.shape().to_vec(), &Device::Cpu)?)
        };
        let mut in_c = 3;
        let mut convs = Vec::new();
        for (idx, _, _) in conv_indices() {
            let w = get(&format!("features.{idx}.weight"))?;
            let b = get(&format!("features.{idx}.bias"))?;
            let (o, c, k1, k2) = w.dims4()?;
            if c != in_c || k1 != 3 || k2 != 3 || b.dims() != [o] {
                return Err(Error::Checkpoint(format!("features.{idx} has unexpected shape {:?}", w.dims())));
            }
            convs.push((idx, w, b));
            in_c = o;
        }
        Ok(Self {
            convs,
            source: path.display().to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn layer_names(&self) -> [&'static str; 5] {
        TAP_NAMES
    }

    /// Tap activations `(C, H, W)`, shallow to deep.
    pub fn features(&self, img: &Image3) -> Result<Vec<Tensor>> {
        if img.height() < 16 || img.width() < 16 {
            return Err(Error::Shape("backbone needs at least 16x16 inputs".into()));
        }
        let mean = Tensor::new(&MEAN, &Device::Cpu)?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&STD, &Device::Cpu)?.reshape((1, 3, 1, 1))?;
        let mut h = img
            .to_tensor(DType::F32, &Device::Cpu)?
            .broadcast_sub(&mean)?
            .broadcast_div(&std)?;
        let layout = conv_indices();
        let mut taps = Vec::new();
        let mut stage = 0;
        for ((_, w, b), (_, s, tap)) in self.convs.iter().zip(layout) {
            if s != stage {
                h = h.max_pool2d(2)?;
                stage = s;
            }
            h = conv2d(&h, w, b, 1, 1)?.relu()?;
            if tap {
                taps.push(h.squeeze(0)?);
            }
        }
        Ok(taps)
    }
}

fn gram(f: &Tensor) -> Result<Tensor> {
    let (c, h, w) = f.dims3()?;
    let flat = f.reshape((c, h * w))?;
    Ok((flat.matmul(&flat.t()?)? / (c * h * w) as f64)?)
}

fn mean_sq(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok((a - b)?
        .sqr()?
        .mean_all()?
        .to_dtype(DType::F64)?
        .to_scalar::<f64>()?)
}

fn paired_features(a: &Image3, b: &Image3, bb: &PerceptualBackbone) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    if !a.same_size(b) {
        return Err(Error::Shape("images differ in size".into()));
    }
    Ok((bb.features(a)?, bb.features(b)?))
}

/// Sum over taps of the mean squared feature difference.
pub fn perceptual(a: &Image3, b: &Image3, bb: &PerceptualBackbone) -> Result<f64> {
    let (fa, fb) = paired_features(a, b, bb)?;
    fa.iter().zip(&fb).map(|(x, y)| mean_sq(x, y)).sum()
}

/// Sum over taps of the mean squared difference of Gram matrices `F Fᵀ / (C·H·W)`.
pub fn style_metric(a: &Image3, b: &Image3, bb: &PerceptualBackbone) -> Result<f64> {
    let (fa, fb) = paired_features(a, b, bb)?;
    fa.iter()
        .zip(&fb)
        .map(|(x, y)| mean_sq(&gram(x)?, &gram(y)?))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_follow_the_layer_numbering() {
        let idx: Vec<usize> = conv_indices().iter().filter(|c| c.2).map(|c| c.0).collect();
        assert_eq!(idx, vec![0, 5, 10, 19, 28]);
        let bb = PerceptualBackbone::random(0, RANDOM_WIDTHS).unwrap();
        let f = bb.features(&Image3::filled(32, 32, [0.3, 0.5, 0.1])).unwrap();
        let dims: Vec<Vec<usize>> = f.iter().map(|t| t.dims().to_vec()).collect();
        assert_eq!(dims, vec![vec![16, 32, 32], vec![32, 16, 16], vec![64, 8, 8], vec![64, 4, 4], vec![64, 2, 2]]);
    }

    #[test]
    fn load_round_trip() {
        let bb = PerceptualBackbone::random(5, [4, 4, 4, 4, 4]).unwrap();
        let enc: Vec<(String, Vec<usize>, Vec<u8>)> = bb
            .convs
            .iter()
            .flat_map(|(i, w, b)| {
                [(format!("features.{i}.weight"), w), (format!("features.{i}.bias"), b)].map(|(n, t)| {
                    let bytes = t
                        .flatten_all()
                        .unwrap()
                        .to_vec1::<f32>()
                        .unwrap()
                        .iter()
                        .flat_map(|v| v.to_le_bytes())
                        .collect();
                    (n, t.dims().to_vec(), bytes)
                })
            })
            .collect();
        let views: Vec<(String, safetensors::tensor::TensorView)> = enc
            .iter()
            .map(|(n, s, b)| (n.clone(), safetensors::tensor::TensorView::new(safetensors::Dtype::F32, s.clone(), b).unwrap()))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bb.safetensors");
        std::fs::write(&path, safetensors::serialize(views, None).unwrap()).unwrap();
        let loaded = PerceptualBackbone::load(&path).unwrap();
        let img = Image3::filled(16, 16, [0.9, 0.1, 0.4]);
        let a: Vec<f32> = bb.features(&img).unwrap()[1].flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = loaded.features(&img).unwrap()[1].flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }
}
