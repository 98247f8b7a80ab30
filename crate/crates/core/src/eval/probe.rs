//! Disentanglement probe: how well small classifiers recover style and glyph labels
//! from each feature space.

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::image::Image3;
use crate::losses::mean_l1;
use crate::net::ops::conv2d;
use crate::net::{ContentEncoder, PlainAutoencoder, TransferNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Content,
    Style,
    Autoencoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Style label; classifiers are tested on glyphs they never saw.
    Style,
    /// Glyph label; classifiers are tested on a style they never saw.
    Glyph,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeOptions {
    /// Classifier training iterations.
    pub iterations: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    /// Training iterations of the reference autoencoder.
    pub ae_iterations: usize,
    pub seed: u64,
    /// Fraction of glyphs held out for the style target.
    pub held_out_glyphs: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            iterations: 300,
            eval_every: 10,
            batch_size: 16,
            lr: 1e-3,
            hidden: 32,
            ae_iterations: 300,
            seed: 0,
            held_out_glyphs: 1.0 / 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeCurve {
    pub feature: FeatureKind,
    pub target: TargetKind,
    /// `(iteration, test accuracy)`.
    pub points: Vec<(usize, f64)>,
}

impl ProbeCurve {
    pub fn final_accuracy(&self) -> f64 {
        self.points.last().map(|p| p.1).unwrap_or(0.0)
    }

    /// Mean accuracy over the last `n` evaluations.
    pub fn tail_accuracy(&self, n: usize) -> f64 {
        let k = n.min(self.points.len()).max(1);
        self.points.iter().rev().take(k).map(|p| p.1).sum::<f64>() / k as f64
    }

    /// Centered moving average of width `w`, clipped at the ends.
    pub fn smoothed(&self, w: usize) -> Vec<f64> {
        let v: Vec<f64> = self.points.iter().map(|p| p.1).collect();
        let h = w / 2;
        (0..v.len())
            .map(|i| {
                let a = i.saturating_sub(h);
                let b = (i + h + 1).min(v.len());
                v[a..b].iter().sum::<f64>() / (b - a) as f64
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub curves: Vec<ProbeCurve>,
}

impl ProbeResult {
    pub fn curve(&self, feature: FeatureKind, target: TargetKind) -> &ProbeCurve {
        self.curves
            .iter()
            .find(|c| c.feature == feature && c.target == target)
            .expect("all six curves are present")
    }
}

/// Five weight layers: three convolutions (the last two strided), global average pooling,
/// two fully connected layers.
struct Classifier {
    convs: Vec<(Var, Var, usize, usize)>,
    fc: Vec<(Var, Var)>,
}

impl Classifier {
    fn new(in_c: usize, hidden: usize, classes: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let dev = Device::Cpu;
        let mut normal = |shape: &[usize], fan_in: usize| -> Result<Var> {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            let n: usize = shape.iter().product();
            let v: Vec<f32> = (0..n).map(|_| d.sample(rng) as f32).collect();
            Ok(Var::from_tensor(&Tensor::from_vec(v, shape, &dev)?)?)
        };
        let zeros = |n: usize| -> Result<Var> { Ok(Var::zeros(n, DType::F32, &dev)?) };
        let convs = vec![
            (normal(&[hidden, in_c, 3, 3], in_c * 9)?, zeros(hidden)?, 1, 1),
            (normal(&[hidden, hidden, 3, 3], hidden * 9)?, zeros(hidden)?, 2, 1),
            (normal(&[hidden, hidden, 3, 3], hidden * 9)?, zeros(hidden)?, 2, 1),
        ];
        let fc = vec![
            (normal(&[hidden, hidden], hidden)?, zeros(hidden)?),
            (normal(&[hidden, classes], hidden)?, zeros(classes)?),
        ];
        Ok(Self { convs, fc })
    }

    fn vars(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for (w, b, _, _) in &self.convs {
            v.extend([w.clone(), b.clone()]);
        }
        for (w, b) in &self.fc {
            v.extend([w.clone(), b.clone()]);
        }
        v
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (w, b, stride, pad) in &self.convs {
            h = conv2d(&h, w.as_tensor(), b.as_tensor(), *stride, *pad)?.relu()?;
        }
        let mut h = h.mean(D::Minus1)?.mean(D::Minus1)?;
        for (i, (w, b)) in self.fc.iter().enumerate() {
            h = h.matmul(w.as_tensor())?.broadcast_add(b.as_tensor())?;
            if i + 1 < self.fc.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }
}

/// Channel statistics from the training rows.
fn standardize(features: &Tensor, train: &[usize]) -> Result<Tensor> {
    let idx = Tensor::new(train.iter().map(|&i| i as u32).collect::<Vec<_>>(), &Device::Cpu)?;
    let tr = features.index_select(&idx, 0)?;
    let (_, c, _, _) = tr.dims4()?;
    let per_c = tr.transpose(0, 1)?.reshape((c, ()))?;
    let mean = per_c.mean_keepdim(1)?;
    let std = (per_c.broadcast_sub(&mean)?.sqr()?.mean_keepdim(1)? + 1e-6)?.sqrt()?;
    Ok(features
        .broadcast_sub(&mean.reshape((1, c, 1, 1))?)?
        .broadcast_div(&std.reshape((1, c, 1, 1))?)?)
}

/// Trains one classifier on `features[train]` and records test accuracy over training.
pub fn probe_features(features: &Tensor, labels: &[usize], train: &[usize], test: &[usize], opts: &ProbeOptions) -> Result<Vec<(usize, f64)>> {
    let classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    if classes < 2 {
        return Err(Error::InvalidInput("probe targets need at least two classes".into()));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidInput("probe splits must be non-empty".into()));
    }
    let features = standardize(&features.to_dtype(DType::F32)?, train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let clf = Classifier::new(features.dims()[1], opts.hidden, classes, &mut rng)?;
    let mut opt = AdamW::new(
        clf.vars(),
        ParamsAdamW {
            lr: opts.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let select = |rows: &[usize]| -> Result<(Tensor, Tensor)> {
        let idx = Tensor::new(rows.iter().map(|&i| i as u32).collect::<Vec<_>>(), &Device::Cpu)?;
        let y = Tensor::new(rows.iter().map(|&i| labels[i] as u32).collect::<Vec<_>>(), &Device::Cpu)?;
        Ok((features.index_select(&idx, 0)?, y))
    };
    let (test_x, _) = select(test)?;
    let accuracy = |clf: &Classifier| -> Result<f64> {
        let pred: Vec<u32> = clf.logits(&test_x)?.argmax(D::Minus1)?.to_vec1()?;
        let hits = pred
            .iter()
            .zip(test)
            .filter(|(p, &i)| **p as usize == labels[i])
            .count();
        Ok(hits as f64 / test.len() as f64)
    };
    let mut order = train.to_vec();
    let mut cursor = order.len();
    let mut points = vec![(0, accuracy(&clf)?)];
    for it in 1..=opts.iterations {
        if cursor + opts.batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let rows = &order[cursor..(cursor + opts.batch_size).min(order.len())];
        cursor += opts.batch_size;
        let (x, y) = select(rows)?;
        let loss = candle_nn::loss::cross_entropy(&clf.logits(&x)?, &y)?;
        opt.backward_step(&loss)?;
        if it % opts.eval_every.max(1) == 0 || it == opts.iterations {
            points.push((it, accuracy(&clf)?));
        }
    }
    Ok(points)
}

fn batched(images: &[&Image3], f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let mut out = Vec::new();
    for chunk in images.chunks(16) {
        out.push(f(&Image3::batch_tensor(chunk, DType::F32, &Device::Cpu)?)?);
    }
    Ok(Tensor::cat(&out, 0)?)
}

/// Trains the reference autoencoder on `images` for `iterations` steps.
pub fn train_autoencoder(images: &[&Image3], model: &TransferNet, iterations: usize, seed: u64) -> Result<PlainAutoencoder> {
    let mut cfg = model.config().clone();
    cfg.seed = seed;
    let ae = PlainAutoencoder::new(&cfg, DType::F32, &Device::Cpu)?;
    let mut opt = AdamW::new(
        ae.params(),
        ParamsAdamW {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut cursor = order.len();
    let batch = 8.min(images.len());
    for _ in 0..iterations {
        if cursor + batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let chunk: Vec<&Image3> = order[cursor..cursor + batch].iter().map(|&i| images[i]).collect();
        cursor += batch;
        let x = Image3::batch_tensor(&chunk, DType::F32, &Device::Cpu)?;
        let loss = mean_l1(&ae.decode(&ae.encode(&x)?)?, &x)?;
        opt.backward_step(&loss)?;
    }
    Ok(ae)
}

/// Six curves: {content, style, autoencoder} features × {style, glyph} targets, all on
/// the styled images of `manifest`.
pub fn probe_disentanglement(model: &TransferNet, manifest: &DatasetManifest, opts: &ProbeOptions) -> Result<ProbeResult> {
    let styles = manifest.styles();
    let glyphs = manifest.glyphs();
    if styles.len() < 2 || glyphs.len() < 2 {
        return Err(Error::InvalidInput("probe needs at least two styles and two glyphs".into()));
    }
    let dataset = Dataset::load(manifest)?;
    let entries = &manifest.entries;
    let images: Vec<&Image3> = entries
        .iter()
        .map(|e| dataset.style(&e.style_id, &e.glyph_id).map(|s| &s.pixels))
        .collect::<Result<_>>()?;
    let style_label: Vec<usize> = entries
        .iter()
        .map(|e| styles.iter().position(|s| *s == e.style_id).unwrap())
        .collect();
    let glyph_label: Vec<usize> = entries
        .iter()
        .map(|e| glyphs.iter().position(|g| *g == e.glyph_id).unwrap())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut shuffled_glyphs = glyphs.clone();
    shuffled_glyphs.shuffle(&mut rng);
    let n_held = ((glyphs.len() as f64 * opts.held_out_glyphs).round() as usize).clamp(1, glyphs.len() - 1);
    let held_glyphs = &shuffled_glyphs[..n_held];
    let held_style = styles[rand::Rng::gen_range(&mut rng, 0..styles.len())].clone();
    let (mut style_train, mut style_test, mut glyph_train, mut glyph_test) = (vec![], vec![], vec![], vec![]);
    for (i, e) in entries.iter().enumerate() {
        if held_glyphs.contains(&e.glyph_id) {
            style_test.push(i);
        } else {
            style_train.push(i);
        }
        if e.style_id == held_style {
            glyph_test.push(i);
        } else {
            glyph_train.push(i);
        }
    }

    let ae = train_autoencoder(&images, model, opts.ae_iterations, opts.seed)?;
    let features = [
        (
            FeatureKind::Content,
            batched(&images, |x| model.shared_generator(&model.encode_content(x, ContentEncoder::Styled)?))?,
        ),
        (FeatureKind::Style, batched(&images, |x| Ok(model.encode_style(x)?.0))?),
        (FeatureKind::Autoencoder, batched(&images, |x| ae.encode(x))?),
    ];
    let mut curves = Vec::new();
    for (kind, feats) in &features {
        let feats = feats.detach();
        curves.push(ProbeCurve {
            feature: *kind,
            target: TargetKind::Style,
            points: probe_features(&feats, &style_label, &style_train, &style_test, opts)?,
        });
        curves.push(ProbeCurve {
            feature: *kind,
            target: TargetKind::Glyph,
            points: probe_features(&feats, &glyph_label, &glyph_train, &glyph_test, opts)?,
        });
    }
    Ok(ProbeResult { curves })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_features_are_learned() {
        // Class is the sign of channel 0.
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let noise = Normal::new(0.0, 0.3).unwrap();
        let data: Vec<f32> = (0..n)
            .flat_map(|i| {
                let sign = if labels[i] == 1 { 1.0 } else { -1.0 };
                let rng = &mut rng;
                (0..2 * 16).map(move |j| if j < 16 { sign + noise.sample(rng) } else { noise.sample(rng) }).collect::<Vec<f32>>()
            })
            .collect();
        let feats = Tensor::from_vec(data, (n, 2, 4, 4), &Device::Cpu).unwrap();
        let train: Vec<usize> = (0..30).collect();
        let test: Vec<usize> = (30..40).collect();
        let opts = ProbeOptions {
            iterations: 60,
            ..ProbeOptions::default()
        };
        let points = probe_features(&feats, &labels, &train, &test, &opts).unwrap();
        assert_eq!(points.last().unwrap().1, 1.0);
        assert!(probe_features(&feats, &vec![0; n], &train, &test, &opts).is_err());
    }

    #[test]
    fn smoothing_is_a_moving_average() {
        let c = ProbeCurve {
            feature: FeatureKind::Style,
            target: TargetKind::Glyph,
            points: vec![(0, 0.0), (1, 1.0), (2, 0.5), (3, 0.5), (4, 1.0)],
        };
        let s = c.smoothed(3);
        assert_eq!(s, vec![0.5, 0.5, 2.0 / 3.0, 2.0 / 3.0, 0.75]);
        assert_eq!(c.final_accuracy(), 1.0);
        assert_eq!(c.tail_accuracy(2), 0.75);
    }
}
