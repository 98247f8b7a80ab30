//! Adversarial training, one-reference finetuning, semisupervised training and
//! inference helpers built on a trained model.

mod finetune;
mod infer;
mod trainer;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use finetune::{
    finetune_supervised, finetune_unsupervised, FinetuneJob, FinetuneOptions, JobStatus,
};
pub use infer::{
    destylize, font_effect_pipeline, glyph_input, interpolate_styles, stylize, stylize_with_features,
};
pub use trainer::{StepLog, Trainer};

use crate::dataset::{Dataset, DatasetManifest, Split, TripleLoader};
use crate::error::{Error, Result};
use crate::losses::{Batch, LossWeights, Mode};
use crate::net::{checkpoint, NetConfig, TransferNet, DOWNSAMPLE};

/// Adaptive-moment optimizer settings, shared by both players.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Everything a training run needs; read from a JSON file by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Paired dataset: a manifest file or the directory holding it.
    pub paired: PathBuf,
    /// Style-only data for semisupervised training; its glyph files are ignored.
    #[serde(default)]
    pub unpaired: Option<PathBuf>,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub optimizer: OptimConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub iterations: usize,
    /// Train on random crops of this side; `None` trains on full images.
    #[serde(default)]
    pub crop_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    /// Write a checkpoint every this many iterations; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Receives `train.jsonl` and checkpoints.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub net: NetConfig,
    /// Semisupervised: use an unpaired batch every this many iterations.
    #[serde(default = "default_one")]
    pub unpaired_every: usize,
}

fn default_batch() -> usize {
    4
}

fn default_one() -> usize {
    1
}

pub const LOG_FILE: &str = "train.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.safetensors";

impl RunConfig {
    pub fn new(paired: impl Into<PathBuf>, iterations: usize) -> Self {
        Self {
            paired: paired.into(),
            unpaired: None,
            weights: LossWeights::default(),
            optimizer: OptimConfig::default(),
            batch_size: default_batch(),
            iterations,
            crop_size: None,
            seed: 0,
            mode: Mode::Core,
            checkpoint_every: 0,
            out_dir: None,
            net: NetConfig::default(),
            unpaired_every: 1,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self, image_size: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.batch_size == 0 || self.unpaired_every == 0 {
            return Err(Error::Config("batch size and unpaired cadence must be positive".into()));
        }
        if let Some(c) = self.crop_size {
            if c > image_size {
                return Err(Error::Config(format!("crop size {c} exceeds image size {image_size}")));
            }
            if c == 0 || c % DOWNSAMPLE != 0 {
                return Err(Error::Config(format!("crop size {c} must be a positive multiple of {DOWNSAMPLE}")));
            }
        }
        self.optimizer.validate()?;
        self.weights.validate(self.mode == Mode::Semisupervised)
    }
}

/// Same random window on every sample of a batch tensor.
fn crop_batch(t: &Tensor, top: usize, left: usize, size: usize) -> Result<Tensor> {
    Ok(t.narrow(2, top, size)?.narrow(3, left, size)?)
}

fn random_window<R: Rng>(rng: &mut R, image: usize, size: usize) -> (usize, usize) {
    (rng.gen_range(0..=image - size), rng.gen_range(0..=image - size))
}

fn nonempty_unpaired(cfg: &RunConfig) -> Result<Option<DatasetManifest>> {
    let Some(path) = &cfg.unpaired else {
        return Ok(None);
    };
    let manifest = DatasetManifest::load(path)?;
    Ok(if manifest.entries.is_empty() { None } else { Some(manifest) })
}

/// Trains a fresh model described by `cfg.net`.
pub fn train(cfg: &RunConfig, observer: &mut dyn FnMut(&Trainer, &StepLog) -> Result<()>) -> Result<TransferNet> {
    let mut net_cfg = cfg.net.clone();
    if cfg.mode == Mode::Semisupervised {
        net_cfg.augmentation_discriminators = true;
    }
    let net = TransferNet::new(net_cfg, DType::F32, &Device::Cpu)?;
    train_from(net, cfg, observer)
}

/// Paired-data training from scratch in `Core` mode.
pub fn train_core(cfg: &RunConfig) -> Result<TransferNet> {
    let cfg = RunConfig {
        mode: Mode::Core,
        ..cfg.clone()
    };
    train(&cfg, &mut |_, _| Ok(()))
}

/// Paired plus unpaired training; runs plain `Core` training with a warning when the
/// unpaired set is missing or empty.
pub fn train_semisupervised(cfg: &RunConfig) -> Result<TransferNet> {
    let cfg = RunConfig {
        mode: Mode::Semisupervised,
        ..cfg.clone()
    };
    train(&cfg, &mut |_, _| Ok(()))
}

/// Continues training `net` with the data and schedule of `cfg`.
pub fn train_from(net: TransferNet, cfg: &RunConfig, observer: &mut dyn FnMut(&Trainer, &StepLog) -> Result<()>) -> Result<TransferNet> {
    let paired = DatasetManifest::load(&cfg.paired)?;
    let image_size = paired.image_size;
    let mut mode = cfg.mode;
    let unpaired = if mode == Mode::Semisupervised {
        let u = nonempty_unpaired(cfg)?;
        if u.is_none() {
            log::warn!("unpaired set is missing or empty; training in core mode");
            mode = Mode::Core;
        }
        u
    } else {
        None
    };
    if mode == Mode::UnsupervisedFinetune {
        return Err(Error::Config("unsupervised finetuning runs through finetune_unsupervised".into()));
    }
    let cfg = RunConfig { mode, ..cfg.clone() };
    cfg.validate(image_size)?;
    let net = if mode == Mode::Semisupervised && !net.has_augmentation_discriminators() {
        net.with_augmentation_discriminators()?
    } else {
        net
    };

    let loader = TripleLoader::new(Arc::new(Dataset::load(&paired)?), Split::Train, cfg.batch_size, cfg.seed)?;
    let unpaired_loader = unpaired
        .map(|m| -> Result<_> {
            TripleLoader::new(Arc::new(Dataset::load(&m)?), Split::Train, cfg.batch_size, cfg.seed ^ 0x5eed)
        })
        .transpose()?;
    let mut unpaired_stream = unpaired_loader.as_ref().map(|l| l.stream());

    let mut log_file = match &cfg.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            Some((
                std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?),
                path,
            ))
        }
        None => None,
    };

    let (dtype, device) = (net.dtype(), net.device().clone());
    let mut crop_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    crop_rng.set_stream(1);
    let mut trainer = Trainer::new(net, &cfg.optimizer, cfg.weights.clone(), mode)?;
    for triples in loader.stream().take(cfg.iterations) {
        let mut batch = Batch::from_triples(&triples?, dtype, &device)?;
        let mut unpaired_batch = None;
        if let Some(stream) = unpaired_stream.as_mut() {
            if trainer.iteration() % cfg.unpaired_every == 0 {
                let u = Batch::from_triples(&stream.next().expect("endless stream")?, dtype, &device)?;
                let n = u.size().min(batch.size());
                unpaired_batch = Some(Batch::new(
                    batch.x.narrow(0, 0, n)?,
                    u.y.narrow(0, 0, n)?,
                    u.y_prime.narrow(0, 0, n)?,
                )?);
            }
        }
        if let Some(c) = cfg.crop_size.filter(|&c| c < image_size) {
            let (t, l) = random_window(&mut crop_rng, image_size, c);
            let (tp, lp) = random_window(&mut crop_rng, image_size, c);
            batch = Batch::new(
                crop_batch(&batch.x, t, l, c)?,
                crop_batch(&batch.y, t, l, c)?,
                crop_batch(&batch.y_prime, tp, lp, c)?,
            )?;
            if let Some(u) = unpaired_batch.take() {
                unpaired_batch = Some(Batch::new(
                    crop_batch(&u.x, t, l, c)?,
                    crop_batch(&u.y, t, l, c)?,
                    crop_batch(&u.y_prime, tp, lp, c)?,
                )?);
            }
        }
        let record = trainer.step(&batch, unpaired_batch.as_ref(), None)?;
        if let Some((w, path)) = log_file.as_mut() {
            writeln!(w, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(&*path, e))?;
        }
        observer(&trainer, &record)?;
        if let (Some(dir), true) = (&cfg.out_dir, cfg.checkpoint_every > 0) {
            if record.iter % cfg.checkpoint_every == 0 {
                checkpoint::save(trainer.net(), &dir.join(format!("ckpt-{:06}.safetensors", record.iter)))?;
            }
        }
    }
    if let Some((mut w, path)) = log_file {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if let Some(dir) = &cfg.out_dir {
        checkpoint::save(trainer.net(), &dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(trainer.into_net())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_dataset;

    fn tiny_net() -> NetConfig {
        NetConfig {
            base_channels: 4,
            content_channels: 8,
            style_channels: 4,
            disc_channels: 4,
            disc_downsamples: 2,
            ..NetConfig::default()
        }
    }

    #[test]
    fn zero_iterations_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        synth_dataset(2, 6, 16, 1, dir.path()).unwrap();
        let cfg = RunConfig::new(dir.path(), 0);
        assert!(matches!(train_core(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn fixed_seed_gives_identical_losses_and_writes_log() {
        let dir = tempfile::tempdir().unwrap();
        synth_dataset(2, 6, 16, 1, dir.path()).unwrap();
        let run = |out: &Path| {
            let mut cfg = RunConfig::new(dir.path(), 4);
            cfg.net = tiny_net();
            cfg.batch_size = 2;
            cfg.out_dir = Some(out.to_path_buf());
            cfg.checkpoint_every = 2;
            let mut logs = Vec::new();
            train(&cfg, &mut |_, l| {
                logs.push(l.clone());
                Ok(())
            })
            .unwrap();
            logs
        };
        let a_dir = tempfile::tempdir().unwrap();
        let b_dir = tempfile::tempdir().unwrap();
        let a = run(a_dir.path());
        let b = run(b_dir.path());
        let strip = |v: &[StepLog]| -> Vec<(f64, f64, Vec<(String, f64)>)> {
            v.iter()
                .map(|l| (l.gen_total, l.disc_total, l.terms.clone().into_iter().collect()))
                .collect()
        };
        assert_eq!(strip(&a), strip(&b));
        let log = std::fs::read_to_string(a_dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 4);
        let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        for key in ["iter", "gly", "dpix", "dfeat", "dadv", "spix", "sadv", "wall_time"] {
            assert!(first.get(key).is_some(), "{key}");
        }
        assert!(a_dir.path().join("ckpt-000002.safetensors").exists());
        assert!(a_dir.path().join(FINAL_CHECKPOINT).exists());
    }

    #[test]
    fn semisupervised_without_unpaired_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        synth_dataset(2, 6, 16, 1, dir.path()).unwrap();
        let mut cfg = RunConfig::new(dir.path(), 1);
        cfg.net = tiny_net();
        cfg.batch_size = 2;
        cfg.mode = Mode::Semisupervised;
        let mut seen = None;
        train(&cfg, &mut |t, l| {
            seen = Some((t.mode(), l.terms.contains_key("daug")));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, Some((Mode::Core, false)));
    }

    #[test]
    fn semisupervised_uses_augmentation_terms() {
        let paired = tempfile::tempdir().unwrap();
        let unpaired = tempfile::tempdir().unwrap();
        synth_dataset(2, 6, 16, 1, paired.path()).unwrap();
        synth_dataset(2, 6, 16, 2, unpaired.path()).unwrap();
        let mut cfg = RunConfig::new(paired.path(), 2);
        cfg.net = tiny_net();
        cfg.batch_size = 2;
        cfg.unpaired = Some(unpaired.path().to_path_buf());
        let mut keys = Vec::new();
        let net = train_semisupervised(&cfg).unwrap();
        assert!(net.has_augmentation_discriminators());
        cfg.mode = Mode::Semisupervised;
        train(&cfg, &mut |_, l| {
            keys.push(l.terms.contains_key("d_saug") && l.terms.contains_key("saug"));
            Ok(())
        })
        .unwrap();
        assert_eq!(keys, vec![true, true]);
    }

    #[test]
    fn generator_step_leaves_discriminators_alone() {
        let dir = tempfile::tempdir().unwrap();
        synth_dataset(2, 6, 16, 1, dir.path()).unwrap();
        let cfg = RunConfig {
            net: tiny_net(),
            ..RunConfig::new(dir.path(), 1)
        };
        let net = TransferNet::new(cfg.net.clone(), DType::F32, &Device::Cpu).unwrap();
        let before: Vec<Vec<f32>> = net
            .discriminator_params()
            .iter()
            .map(|v| v.as_tensor().flatten_all().unwrap().to_vec1().unwrap())
            .collect();
        let gen_before: Vec<Vec<f32>> = net
            .generator_params()
            .iter()
            .map(|v| v.as_tensor().flatten_all().unwrap().to_vec1().unwrap())
            .collect();
        let loader = TripleLoader::from_manifest(&DatasetManifest::load(dir.path()).unwrap(), Split::Train, 2, 0).unwrap();
        let batch = Batch::from_triples(&loader.epoch(0).unwrap()[0], DType::F32, &Device::Cpu).unwrap();
        let forward = crate::losses::Forward::new(&net, &batch, false).unwrap();
        let inputs = crate::losses::ObjectiveInputs {
            batch: &batch,
            forward: &forward,
            unpaired: None,
            masks: None,
        };
        let (g, _) = crate::losses::generator_objective(&net, &inputs, Mode::Core, &cfg.weights).unwrap();
        let mut opt = <candle_nn::AdamW as candle_nn::Optimizer>::new(
            net.generator_params(),
            candle_nn::ParamsAdamW {
                lr: 1e-3,
                ..Default::default()
            },
        )
        .unwrap();
        candle_nn::Optimizer::backward_step(&mut opt, &g).unwrap();
        let after: Vec<Vec<f32>> = net
            .discriminator_params()
            .iter()
            .map(|v| v.as_tensor().flatten_all().unwrap().to_vec1().unwrap())
            .collect();
        let gen_after: Vec<Vec<f32>> = net
            .generator_params()
            .iter()
            .map(|v| v.as_tensor().flatten_all().unwrap().to_vec1().unwrap())
            .collect();
        assert_eq!(before, after);
        assert_ne!(gen_before, gen_after);
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"paired": "d", "iterations": 10}"#).unwrap();
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.optimizer, OptimConfig::default());
        assert_eq!(cfg.weights, LossWeights::default());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.crop_size = Some(128);
        assert!(bad.validate(64).is_err());
        bad.crop_size = Some(32);
        assert!(bad.validate(64).is_ok());
    }
}
