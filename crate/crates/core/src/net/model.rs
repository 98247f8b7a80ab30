use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{DownBlock, Init, LogitBlock, OutBlock, ResBlock, UpBlock};
use crate::error::{Error, Result};

/// Spatial reduction of every encoder.
pub const DOWNSAMPLE: usize = 8;

/// Architecture hyperparameters; stored in every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Width of the first encoder block; the second doubles it.
    pub base_channels: usize,
    pub content_channels: usize,
    pub style_channels: usize,
    /// Residual blocks shared between the two content encoders, and between the two generators.
    pub shared_blocks: usize,
    pub disc_channels: usize,
    /// Stride-2 blocks per discriminator before the logit layer.
    pub disc_downsamples: usize,
    /// Build the two unconditional discriminators used with unpaired data.
    pub augmentation_discriminators: bool,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            content_channels: 64,
            style_channels: 64,
            shared_blocks: 2,
            disc_channels: 16,
            disc_downsamples: 3,
            augmentation_discriminators: false,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl NetConfig {
    /// Tiny network for 16×16 inputs, used by finite-difference gradient checks.
    pub fn micro() -> Self {
        Self {
            base_channels: 2,
            content_channels: 3,
            style_channels: 2,
            shared_blocks: 2,
            disc_channels: 2,
            disc_downsamples: 2,
            augmentation_discriminators: true,
            init_std: 0.4,
            seed: 0,
        }
    }

    /// Side length of the logit grid a discriminator produces for `size × size` inputs.
    pub fn patch_grid(&self, size: usize) -> usize {
        (size >> self.disc_downsamples).saturating_sub(2)
    }
}

#[derive(Clone, Debug)]
enum Block {
    Down(DownBlock),
    Res(ResBlock),
    Up(UpBlock),
    Out(OutBlock),
    Logit(LogitBlock),
}

impl Block {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        match self {
            Block::Down(b) => b.forward(x),
            Block::Res(b) => b.forward(x),
            Block::Up(b) => b.forward(x),
            Block::Out(b) => b.forward(x),
            Block::Logit(b) => b.forward(x),
        }
    }

    fn params(&self) -> Vec<Var> {
        match self {
            Block::Down(b) => b.params(),
            Block::Res(b) => b.params(),
            Block::Up(b) => b.params(),
            Block::Out(b) => b.params(),
            Block::Logit(b) => b.params(),
        }
    }
}

/// A named sequence of blocks: one network component.
#[derive(Clone, Debug)]
pub struct Stack {
    name: &'static str,
    blocks: Vec<Block>,
}

impl Stack {
    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        Ok(h)
    }

    /// Parameters keyed `<component>.<block>.<index>`.
    pub fn named_params(&self) -> Vec<(String, Var)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(bi, b)| {
                b.params()
                    .into_iter()
                    .enumerate()
                    .map(move |(pi, v)| (format!("{}.{bi}.{pi}", self.name), v))
            })
            .collect()
    }

    pub fn params(&self) -> Vec<Var> {
        self.blocks.iter().flat_map(Block::params).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscKind {
    /// Conditional on the style image: `(x, y)`.
    X,
    /// Conditional on glyph and reference: `(x, ŷ, y')`.
    Y,
    /// Glyph realness only: `(x)`.
    XAug,
    /// Style realness against the reference: `(ŷ, y')`.
    YAug,
}

impl DiscKind {
    pub fn arity(self) -> usize {
        match self {
            DiscKind::X => 2,
            DiscKind::Y => 3,
            DiscKind::XAug => 1,
            DiscKind::YAug => 2,
        }
    }
}

/// Content feature `(B, C_c, H/8, W/8)` in the space shared by both content encoders.
#[derive(Clone, Debug)]
pub struct ContentFeature(pub Tensor);

/// Style feature `(B, C_s, H/8, W/8)`.
#[derive(Clone, Debug)]
pub struct StyleFeature(pub Tensor);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContentEncoder {
    /// Encoder for three-plane glyph images.
    Glyph,
    /// Content encoder for styled images.
    Styled,
}

pub const MODEL_VERSION: &str = "transfer-net/1";

/// Two content encoders, a style encoder, two generators and the discriminators.
///
/// The last `shared_blocks` blocks of both content encoders are the single `enc_shared`
/// component, and the first `shared_blocks` blocks of both generators are `gen_shared`:
/// the weights are one set of `Var`s used by both paths.
#[derive(Clone, Debug)]
pub struct TransferNet {
    config: NetConfig,
    dtype: DType,
    device: Device,
    enc_x: Stack,
    enc_yc: Stack,
    enc_shared: Stack,
    enc_ys: Stack,
    gen_shared: Stack,
    gen_x: Stack,
    gen_y: Stack,
    dis_x: Stack,
    dis_y: Stack,
    dis_x_aug: Option<Stack>,
    dis_y_aug: Option<Stack>,
}

fn down_stack<R: rand::Rng>(init: &mut Init<R>, name: &'static str, cfg: &NetConfig, out_c: usize) -> Result<Stack> {
    let b = cfg.base_channels;
    Ok(Stack {
        name,
        blocks: vec![
            Block::Down(DownBlock::new(init, 3, b, true)?),
            Block::Down(DownBlock::new(init, b, 2 * b, true)?),
            Block::Down(DownBlock::new(init, 2 * b, out_c, true)?),
        ],
    })
}

fn res_stack<R: rand::Rng>(init: &mut Init<R>, name: &'static str, c: usize, n: usize) -> Result<Stack> {
    Ok(Stack {
        name,
        blocks: (0..n)
            .map(|_| ResBlock::new(init, c).map(Block::Res))
            .collect::<candle_core::Result<_>>()?,
    })
}

fn up_stack<R: rand::Rng>(init: &mut Init<R>, name: &'static str, cfg: &NetConfig, in_c: usize) -> Result<Stack> {
    let b = cfg.base_channels;
    Ok(Stack {
        name,
        blocks: vec![
            Block::Up(UpBlock::new(init, in_c, 2 * b)?),
            Block::Up(UpBlock::new(init, 2 * b, b)?),
            Block::Up(UpBlock::new(init, b, b)?),
            Block::Out(OutBlock::new(init, b)?),
        ],
    })
}

fn disc_stack<R: rand::Rng>(init: &mut Init<R>, name: &'static str, cfg: &NetConfig, in_c: usize) -> Result<Stack> {
    let mut blocks = Vec::new();
    let mut c_in = in_c;
    let mut c_out = cfg.disc_channels;
    for i in 0..cfg.disc_downsamples {
        blocks.push(Block::Down(DownBlock::new(init, c_in, c_out, i > 0)?));
        c_in = c_out;
        c_out = (c_out * 2).min(cfg.disc_channels * 4);
    }
    blocks.push(Block::Logit(LogitBlock::new(init, c_in)?));
    Ok(Stack { name, blocks })
}

impl TransferNet {
    pub fn new(config: NetConfig, dtype: DType, device: &Device) -> Result<Self> {
        if config.shared_blocks == 0 || config.base_channels == 0 || config.disc_downsamples == 0 {
            return Err(Error::Config("channel widths and block counts must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = Init {
            rng: &mut rng,
            std: config.init_std,
            dtype,
            device,
        };
        let cfg = &config;
        let cc = cfg.content_channels;
        let cs = cfg.style_channels;
        let enc_x = down_stack(&mut init, "enc_x", cfg, cc)?;
        let enc_yc = down_stack(&mut init, "enc_yc", cfg, cc)?;
        let enc_shared = res_stack(&mut init, "enc_shared", cc, cfg.shared_blocks)?;
        let mut enc_ys = down_stack(&mut init, "enc_ys", cfg, cs)?;
        enc_ys.blocks.extend(res_stack(&mut init, "enc_ys", cs, cfg.shared_blocks)?.blocks);
        let gen_shared = res_stack(&mut init, "gen_shared", cc, cfg.shared_blocks)?;
        let gen_x = up_stack(&mut init, "gen_x", cfg, cc)?;
        let gen_y = up_stack(&mut init, "gen_y", cfg, cc + cs)?;
        let dis_x = disc_stack(&mut init, "dis_x", cfg, 6)?;
        let dis_y = disc_stack(&mut init, "dis_y", cfg, 9)?;
        let (dis_x_aug, dis_y_aug) = if cfg.augmentation_discriminators {
            (
                Some(disc_stack(&mut init, "dis_x_aug", cfg, 3)?),
                Some(disc_stack(&mut init, "dis_y_aug", cfg, 6)?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            config,
            dtype,
            device: device.clone(),
            enc_x,
            enc_yc,
            enc_shared,
            enc_ys,
            gen_shared,
            gen_x,
            gen_y,
            dis_x,
            dis_y,
            dis_x_aug,
            dis_y_aug,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn has_augmentation_discriminators(&self) -> bool {
        self.dis_x_aug.is_some()
    }

    fn check_input(&self, img: &Tensor) -> Result<()> {
        let (_, c, h, w) = img.dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by {DOWNSAMPLE}"
            )));
        }
        Ok(())
    }

    /// Content feature of a glyph image (`Glyph`) or a styled image (`Styled`).
    pub fn encode_content(&self, img: &Tensor, which: ContentEncoder) -> Result<ContentFeature> {
        self.check_input(img)?;
        let private = match which {
            ContentEncoder::Glyph => &self.enc_x,
            ContentEncoder::Styled => &self.enc_yc,
        };
        Ok(ContentFeature(self.enc_shared.forward(&private.forward(img)?)?))
    }

    pub fn encode_style(&self, img: &Tensor) -> Result<StyleFeature> {
        self.check_input(img)?;
        Ok(StyleFeature(self.enc_ys.forward(img)?))
    }

    /// Output of the generator layers shared by both generators.
    pub fn shared_generator(&self, c: &ContentFeature) -> Result<Tensor> {
        self.gen_shared.forward(&c.0)
    }

    pub fn generate_glyph(&self, c: &ContentFeature) -> Result<Tensor> {
        self.glyph_from_shared(&self.shared_generator(c)?)
    }

    pub fn generate_style(&self, c: &ContentFeature, s: &StyleFeature) -> Result<Tensor> {
        self.style_from_shared(&self.shared_generator(c)?, s)
    }

    pub(crate) fn glyph_from_shared(&self, shared: &Tensor) -> Result<Tensor> {
        self.gen_x.forward(shared)
    }

    pub(crate) fn style_from_shared(&self, shared: &Tensor, s: &StyleFeature) -> Result<Tensor> {
        let (b1, _, h1, w1) = shared.dims4()?;
        let (b2, _, h2, w2) = s.0.dims4()?;
        if (b1, h1, w1) != (b2, h2, w2) {
            return Err(Error::Shape(format!(
                "content {b1}x{h1}x{w1} and style {b2}x{h2}x{w2} features are not aligned"
            )));
        }
        self.gen_y.forward(&Tensor::cat(&[shared, &s.0], 1)?)
    }

    pub fn discriminator(&self, kind: DiscKind) -> Result<&Stack> {
        match kind {
            DiscKind::X => Some(&self.dis_x),
            DiscKind::Y => Some(&self.dis_y),
            DiscKind::XAug => self.dis_x_aug.as_ref(),
            DiscKind::YAug => self.dis_y_aug.as_ref(),
        }
        .ok_or_else(|| Error::Config("augmentation discriminators are not enabled".into()))
    }

    /// Patch logits `(B, 1, g, g)` for the channel-concatenated `inputs`.
    pub fn discriminate(&self, kind: DiscKind, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs.len() != kind.arity() {
            return Err(Error::InvalidInput(format!(
                "{kind:?} takes {} images, got {}",
                kind.arity(),
                inputs.len()
            )));
        }
        let d = self.discriminator(kind)?;
        for t in inputs {
            self.check_input(t)?;
        }
        let x = Tensor::cat(inputs, 1)?;
        d.forward(&x)
    }

    fn generator_stacks(&self) -> Vec<&Stack> {
        vec![
            &self.enc_x,
            &self.enc_yc,
            &self.enc_shared,
            &self.enc_ys,
            &self.gen_shared,
            &self.gen_x,
            &self.gen_y,
        ]
    }

    fn discriminator_stacks(&self) -> Vec<&Stack> {
        let mut v = vec![&self.dis_x, &self.dis_y];
        v.extend(self.dis_x_aug.iter());
        v.extend(self.dis_y_aug.iter());
        v
    }

    /// Component by name, e.g. `"enc_shared"`.
    pub fn component(&self, name: &str) -> Option<&Stack> {
        self.generator_stacks()
            .into_iter()
            .chain(self.discriminator_stacks())
            .find(|s| s.name == name)
    }

    /// Encoder and generator parameters (everything the generator step updates).
    pub fn generator_params(&self) -> Vec<Var> {
        self.generator_stacks().iter().flat_map(|s| s.params()).collect()
    }

    pub fn discriminator_params(&self) -> Vec<Var> {
        self.discriminator_stacks()
            .iter()
            .flat_map(|s| s.params())
            .collect()
    }

    pub fn named_params(&self) -> Vec<(String, Var)> {
        self.generator_stacks()
            .into_iter()
            .chain(self.discriminator_stacks())
            .flat_map(|s| s.named_params())
            .collect()
    }

    /// Deep copy with independent parameter storage.
    pub fn snapshot(&self) -> Result<TransferNet> {
        let copy = TransferNet::new(self.config.clone(), self.dtype, &self.device)?;
        copy.load_params(
            self.named_params()
                .iter()
                .map(|(k, v)| (k.clone(), v.as_tensor().clone())),
        )?;
        Ok(copy)
    }

    /// Copies parameter values in by name; every parameter must be provided with a matching shape.
    pub fn load_params(&self, values: impl IntoIterator<Item = (String, Tensor)>) -> Result<()> {
        let mut map: std::collections::HashMap<String, Tensor> = values.into_iter().collect();
        for (name, var) in self.named_params() {
            let t = map
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    var.dims(),
                    t.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        if let Some(extra) = map.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    /// Copy of this model with the augmentation discriminators added (fresh) or kept.
    pub fn with_augmentation_discriminators(&self) -> Result<TransferNet> {
        if self.has_augmentation_discriminators() {
            return self.snapshot();
        }
        let mut cfg = self.config.clone();
        cfg.augmentation_discriminators = true;
        let copy = TransferNet::new(cfg, self.dtype, &self.device)?;
        let mine: std::collections::HashMap<String, Var> = self.named_params().into_iter().collect();
        for (name, var) in copy.named_params() {
            if let Some(src) = mine.get(&name) {
                var.set(src.as_tensor())?;
            }
        }
        Ok(copy)
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, v)| v.elem_count()).sum()
    }
}

/// Plain convolutional autoencoder with the same downsampling as the content encoders;
/// a reference point for what an unconstrained bottleneck captures.
#[derive(Clone, Debug)]
pub struct PlainAutoencoder {
    encoder: Stack,
    decoder: Stack,
}

impl PlainAutoencoder {
    pub fn new(config: &NetConfig, dtype: DType, device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = Init {
            rng: &mut rng,
            std: config.init_std,
            dtype,
            device,
        };
        let mut encoder = down_stack(&mut init, "ae_enc", config, config.content_channels)?;
        encoder
            .blocks
            .extend(res_stack(&mut init, "ae_enc", config.content_channels, config.shared_blocks)?.blocks);
        let decoder = up_stack(&mut init, "ae_dec", config, config.content_channels)?;
        Ok(Self { encoder, decoder })
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.forward(x)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.forward(z)
    }

    pub fn params(&self) -> Vec<Var> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(b: usize, size: usize, dtype: DType) -> Tensor {
        Tensor::rand(0f32, 1.0, (b, 3, size, size), &Device::Cpu)
            .unwrap()
            .to_dtype(dtype)
            .unwrap()
    }

    fn small() -> TransferNet {
        let cfg = NetConfig {
            base_channels: 4,
            content_channels: 8,
            style_channels: 6,
            augmentation_discriminators: true,
            ..NetConfig::default()
        };
        TransferNet::new(cfg, DType::F32, &Device::Cpu).unwrap()
    }

    #[test]
    fn feature_and_output_shapes() {
        let net = small();
        let x = input(2, 64, DType::F32);
        let c = net.encode_content(&x, ContentEncoder::Glyph).unwrap();
        assert_eq!(c.0.dims(), &[2, 8, 8, 8]);
        let s = net.encode_style(&x).unwrap();
        assert_eq!(s.0.dims(), &[2, 6, 8, 8]);
        assert_eq!(net.generate_glyph(&c).unwrap().dims(), &[2, 3, 64, 64]);
        assert_eq!(net.generate_style(&c, &s).unwrap().dims(), &[2, 3, 64, 64]);
        let logits = net.discriminate(DiscKind::X, &[&x, &x]).unwrap();
        assert_eq!(logits.dims(), &[2, 1, 6, 6]);
        assert_eq!(net.config().patch_grid(64), 6);
        assert_eq!(net.discriminate(DiscKind::YAug, &[&x, &x]).unwrap().dims(), &[2, 1, 6, 6]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = small();
        let x = input(1, 60, DType::F32);
        assert!(matches!(net.encode_content(&x, ContentEncoder::Glyph), Err(Error::Shape(_))));
        let ok = input(1, 64, DType::F32);
        assert!(net.discriminate(DiscKind::Y, &[&ok, &ok]).is_err());
        let c = net.encode_content(&ok, ContentEncoder::Glyph).unwrap();
        let s = net.encode_style(&input(1, 32, DType::F32)).unwrap();
        assert!(matches!(net.generate_style(&c, &s), Err(Error::Shape(_))));
    }

    #[test]
    fn generated_images_are_bounded() {
        let cfg = NetConfig {
            init_std: 1.0,
            ..NetConfig::micro()
        };
        let net = TransferNet::new(cfg, DType::F32, &Device::Cpu).unwrap();
        let c = ContentFeature(Tensor::randn(0f32, 50.0, (3, 3, 2, 2), &Device::Cpu).unwrap());
        let out: Vec<f32> = net.generate_glyph(&c).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn shared_blocks_are_one_parameter_set() {
        let net = small();
        let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
        let unique: std::collections::BTreeSet<&String> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert!(names.iter().any(|n| n == "enc_shared.0.0"));
        assert!(names.iter().all(|n| n.split('.').count() == 3));

        let x = input(1, 32, DType::F32);
        let before = net.encode_content(&x, ContentEncoder::Styled).unwrap().0;
        let shared = net.component("enc_shared").unwrap().params()[0].clone();
        shared.set(&(shared.as_tensor() * 3.0).unwrap()).unwrap();
        let after = net.encode_content(&x, ContentEncoder::Styled).unwrap().0;
        let diff: f32 = (before - after).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert!(diff > 0.0);
    }

    #[test]
    fn generator_and_discriminator_sets_are_disjoint() {
        let net = small();
        let g: std::collections::HashSet<_> = net.generator_params().iter().map(|v| v.id()).collect();
        assert!(net.discriminator_params().iter().all(|v| !g.contains(&v.id())));
        assert_eq!(
            g.len() + net.discriminator_params().len(),
            net.named_params().len()
        );
    }

    #[test]
    fn batch_permutation_commutes_with_discriminator() {
        let net = small();
        let a = input(3, 32, DType::F32);
        let b = input(3, 32, DType::F32);
        let out = net.discriminate(DiscKind::X, &[&a, &b]).unwrap();
        let idx = Tensor::new(&[2u32, 0, 1], &Device::Cpu).unwrap();
        let pa = a.index_select(&idx, 0).unwrap();
        let pb = b.index_select(&idx, 0).unwrap();
        let permuted = net.discriminate(DiscKind::X, &[&pa, &pb]).unwrap();
        let expect = out.index_select(&idx, 0).unwrap();
        let diff: f32 = (permuted - expect).unwrap().abs().unwrap().max_all().unwrap().to_scalar().unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn inference_is_deterministic() {
        let net = small();
        let x = input(1, 32, DType::F32);
        let a: Vec<f32> = net.encode_style(&x).unwrap().0.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = net.encode_style(&x).unwrap().0.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }
}
