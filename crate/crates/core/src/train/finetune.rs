use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_window, OptimConfig, StepLog, Trainer};
use crate::dataset::GlyphImage;
use crate::error::{Error, Result};
use crate::image::Image3;
use crate::losses::{Batch, GuidanceMasks, LossWeights, Mode};
use crate::net::{TransferNet, DOWNSAMPLE};

/// Settings for adapting a model to one reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneOptions {
    pub iterations: usize,
    /// Crops per iteration.
    pub batch_size: usize,
    /// Crop side; defaults to half the image side, at least 32 px.
    pub crop_size: Option<usize>,
    pub seed: u64,
    pub optimizer: OptimConfig,
    pub weights: LossWeights,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        Self {
            iterations: 500,
            batch_size: 4,
            crop_size: None,
            seed: 0,
            optimizer: OptimConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

impl FinetuneOptions {
    /// Effective crop side for a `side × side` reference.
    pub fn crop_for(&self, side: usize) -> Result<usize> {
        let crop = self
            .crop_size
            .unwrap_or_else(|| (side / 2).max(32).min(side) / DOWNSAMPLE * DOWNSAMPLE);
        if crop > side {
            return Err(Error::InvalidInput(format!("crop {crop} exceeds image side {side}")));
        }
        if crop == 0 || crop % DOWNSAMPLE != 0 {
            return Err(Error::InvalidInput(format!(
                "crop {crop} must be a positive multiple of {DOWNSAMPLE}"
            )));
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch size must be positive".into()));
        }
        Ok(crop)
    }
}

/// Crop windows of one iteration: the first is shared by `x` and `y`, the second is `y'`.
pub type CropPair = ((usize, usize), (usize, usize));

pub(crate) fn sample_crops(rng: &mut ChaCha8Rng, side: usize, crop: usize, n: usize) -> Vec<CropPair> {
    (0..n)
        .map(|_| (random_window(rng, side, crop), random_window(rng, side, crop)))
        .collect()
}

fn stack(images: Vec<Image3>, net: &TransferNet) -> Result<Tensor> {
    let refs: Vec<&Image3> = images.iter().collect();
    Image3::batch_tensor(&refs, net.dtype(), net.device())
}

fn square_side(img: &Image3) -> Result<usize> {
    if img.height() != img.width() {
        return Err(Error::InvalidInput("reference images must be square".into()));
    }
    Ok(img.height())
}

/// Finetunes a copy of `base` on random crops of one `(x, y)` pair. `x` and `y` crops are
/// co-located; the `y'` crop is drawn independently from `y`.
pub fn finetune_supervised(base: &TransferNet, x: &GlyphImage, y: &Image3, opts: &FinetuneOptions, progress: &mut dyn FnMut(&StepLog) -> Result<()>) -> Result<TransferNet> {
    if !x.0.same_size(y) {
        return Err(Error::Shape("glyph and style references differ in size".into()));
    }
    let side = square_side(y)?;
    let crop = opts.crop_for(side)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trainer = Trainer::new(base.snapshot()?, &opts.optimizer, opts.weights.clone(), Mode::Core)?;
    for _ in 0..opts.iterations {
        let windows = sample_crops(&mut rng, side, crop, opts.batch_size);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut yps = Vec::new();
        for ((t, l), (tp, lp)) in windows {
            xs.push(x.0.crop(t, l, crop)?);
            ys.push(y.crop(t, l, crop)?);
            yps.push(y.crop(tp, lp, crop)?);
        }
        let net = trainer.net();
        let batch = Batch::new(stack(xs, net)?, stack(ys, net)?, stack(yps, net)?)?;
        let record = trainer.step(&batch, None, None)?;
        progress(&record)?;
    }
    Ok(trainer.into_net())
}

/// Finetunes a copy of `base` on crops of a style image alone. Its destylization, recomputed
/// from the current model every iteration, stands in for the missing glyph. Optional masks
/// `(1, 1, H, W)` guide the destylization.
pub fn finetune_unsupervised(base: &TransferNet, y: &Image3, masks: Option<&GuidanceMasks>, opts: &FinetuneOptions, progress: &mut dyn FnMut(&StepLog) -> Result<()>) -> Result<TransferNet> {
    let side = square_side(y)?;
    if let Some(m) = masks {
        if m.fg.dims() != [1, 1, y.height(), y.width()] {
            return Err(Error::Shape(format!(
                "mask {:?} does not match a {}x{} reference",
                m.fg.dims(),
                y.height(),
                y.width()
            )));
        }
    }
    let crop = opts.crop_for(side)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trainer = Trainer::new(
        base.snapshot()?,
        &opts.optimizer,
        opts.weights.clone(),
        Mode::UnsupervisedFinetune,
    )?;
    for _ in 0..opts.iterations {
        let windows = sample_crops(&mut rng, side, crop, opts.batch_size);
        let mut ys = Vec::new();
        let mut yps = Vec::new();
        let mut fgs = Vec::new();
        let mut bgs = Vec::new();
        for &((t, l), (tp, lp)) in &windows {
            ys.push(y.crop(t, l, crop)?);
            yps.push(y.crop(tp, lp, crop)?);
            if let Some(m) = masks {
                let c = m.crop(t, l, crop)?;
                fgs.push(c.fg);
                bgs.push(c.bg);
            }
        }
        let net = trainer.net();
        let batch = Batch::auxiliary(net, stack(ys, net)?, stack(yps, net)?)?;
        let cropped = if masks.is_some() {
            Some(GuidanceMasks {
                fg: Tensor::cat(&fgs, 0)?,
                bg: Tensor::cat(&bgs, 0)?,
            })
        } else {
            None
        };
        let record = trainer.step(&batch, None, cropped.as_ref())?;
        progress(&record)?;
    }
    Ok(trainer.into_net())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

/// A one-reference adaptation request and its progress.
#[derive(Clone, Debug)]
pub struct FinetuneJob {
    pub job_id: String,
    pub style: Image3,
    /// Present for supervised finetuning.
    pub glyph: Option<GlyphImage>,
    pub base_checkpoint: String,
    /// Guidance masks, only for style-only finetuning.
    pub masks: Option<GuidanceMasks>,
    pub status: JobStatus,
    pub iterations_done: usize,
}

impl FinetuneJob {
    pub fn new(job_id: String, style: Image3, glyph: Option<GlyphImage>, masks: Option<GuidanceMasks>, base_checkpoint: String) -> Result<Self> {
        if glyph.is_some() && masks.is_some() {
            return Err(Error::InvalidInput("guidance masks apply only when no glyph is given".into()));
        }
        if let Some(g) = &glyph {
            if !g.0.same_size(&style) {
                return Err(Error::Shape("glyph and style references differ in size".into()));
            }
        }
        Ok(Self {
            job_id,
            style,
            glyph,
            base_checkpoint,
            masks,
            status: JobStatus::Queued,
            iterations_done: 0,
        })
    }

    pub fn supervised(&self) -> bool {
        self.glyph.is_some()
    }

    /// Runs the job to completion, updating status and progress.
    pub fn run(&mut self, base: &TransferNet, opts: &FinetuneOptions, progress: &mut dyn FnMut(&StepLog) -> Result<()>) -> Result<TransferNet> {
        self.status = JobStatus::Running;
        let done = &mut self.iterations_done;
        let mut hook = |l: &StepLog| {
            *done = l.iter;
            progress(l)
        };
        let result = match &self.glyph {
            Some(x) => finetune_supervised(base, x, &self.style, opts, &mut hook),
            None => finetune_unsupervised(base, &self.style, self.masks.as_ref(), opts, &mut hook),
        };
        self.status = if result.is_ok() { JobStatus::Done } else { JobStatus::Failed };
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{preprocess_mask, Colormap};
    use crate::net::NetConfig;
    use candle_core::{DType, Device};

    fn reference(side: usize) -> (GlyphImage, Image3) {
        let mask: Vec<bool> = (0..side * side)
            .map(|i| {
                let (r, c) = (i / side, i % side);
                (side / 4..3 * side / 4).contains(&r) && (side / 3..side / 2).contains(&c)
            })
            .collect();
        let x = preprocess_mask(&mask, side, side).unwrap();
        let y = crate::dataset::augment_style(&x, &Colormap::constant([0.9, 0.2, 0.1]), &Colormap::gray_ramp());
        (x, y)
    }

    fn net() -> TransferNet {
        let cfg = NetConfig {
            base_channels: 4,
            content_channels: 8,
            style_channels: 4,
            disc_channels: 4,
            disc_downsamples: 2,
            ..NetConfig::default()
        };
        TransferNet::new(cfg, DType::F32, &Device::Cpu).unwrap()
    }

    #[test]
    fn crop_defaults_and_limits() {
        let o = FinetuneOptions::default();
        assert_eq!(o.crop_for(64).unwrap(), 32);
        assert_eq!(o.crop_for(128).unwrap(), 64);
        assert_eq!(o.crop_for(16).unwrap(), 16);
        let big = FinetuneOptions {
            crop_size: Some(80),
            ..o
        };
        assert!(big.crop_for(64).is_err());
    }

    #[test]
    fn crops_stay_inside_and_pairs_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = sample_crops(&mut rng, 64, 32, 200);
        assert!(w.iter().all(|((t, l), (a, b))| *t <= 32 && *l <= 32 && *a <= 32 && *b <= 32));
        assert!(w.iter().any(|(p, q)| p != q));
    }

    #[test]
    fn finetune_runs_and_leaves_base_untouched() {
        let (x, y) = reference(32);
        let base = net();
        let before: Vec<f32> = base.generator_params()[0].as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let opts = FinetuneOptions {
            iterations: 2,
            batch_size: 2,
            crop_size: Some(16),
            ..FinetuneOptions::default()
        };
        let mut seen = 0;
        let tuned = finetune_supervised(&base, &x, &y, &opts, &mut |_| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 2);
        let after: Vec<f32> = base.generator_params()[0].as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let tuned_p: Vec<f32> = tuned.generator_params()[0].as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(before, after);
        assert_ne!(before, tuned_p);

        let fg: Vec<bool> = x.mask();
        let bg: Vec<bool> = fg.iter().map(|v| !v).collect();
        let masks = GuidanceMasks::from_planes(&fg, &bg, 32, 32, DType::F32, &Device::Cpu).unwrap();
        let mut terms = Vec::new();
        finetune_unsupervised(&base, &y, Some(&masks), &opts, &mut |l| {
            terms.push(l.terms.contains_key("guid") && l.terms.contains_key("srec"));
            Ok(())
        })
        .unwrap();
        assert_eq!(terms, vec![true, true]);
    }

    #[test]
    fn job_validation_and_lifecycle() {
        let (x, y) = reference(32);
        let m = GuidanceMasks::from_planes(&x.mask(), &vec![false; 1024], 32, 32, DType::F32, &Device::Cpu).unwrap();
        assert!(FinetuneJob::new("a".into(), y.clone(), Some(x.clone()), Some(m), "base".into()).is_err());
        let mut job = FinetuneJob::new("b".into(), y, Some(x), None, "base".into()).unwrap();
        assert_eq!(job.status, JobStatus::Queued);
        let opts = FinetuneOptions {
            iterations: 1,
            batch_size: 1,
            crop_size: Some(16),
            ..FinetuneOptions::default()
        };
        job.run(&net(), &opts, &mut |_| Ok(())).unwrap();
        assert_eq!((job.status, job.iterations_done), (JobStatus::Done, 1));
    }
}
