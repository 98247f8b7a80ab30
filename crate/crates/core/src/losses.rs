//! Training objectives.
//!
//! Every term function returns its weighted contribution (λ times the raw term). L1 terms
//! are per-element means. Adversarial terms use the non-saturating generator loss.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingTriple;
use crate::error::{Error, Result};
use crate::image::Image3;
use crate::net::ops::softplus;
use crate::net::{ContentEncoder, DiscKind, TransferNet};

/// λ for every objective term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Glyph autoencoder reconstruction.
    pub gly: f64,
    /// Destylization pixel term.
    pub dpix: f64,
    /// Destylization term in the shared feature space.
    pub dfeat: f64,
    pub dadv: f64,
    /// Stylization pixel term.
    pub spix: f64,
    pub sadv: f64,
    /// Style image self-reconstruction.
    pub srec: f64,
    pub daug: f64,
    pub saug: f64,
    /// Mask guidance on destylization.
    pub guid: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gly: 100.0,
            dpix: 100.0,
            dfeat: 10.0,
            dadv: 1.0,
            spix: 100.0,
            sadv: 1.0,
            srec: 100.0,
            daug: 1.0,
            saug: 1.0,
            guid: 100.0,
        }
    }
}

impl LossWeights {
    /// All weights 1.
    pub fn unit() -> Self {
        Self {
            gly: 1.0,
            dpix: 1.0,
            dfeat: 1.0,
            dadv: 1.0,
            spix: 1.0,
            sadv: 1.0,
            srec: 1.0,
            daug: 1.0,
            saug: 1.0,
            guid: 1.0,
        }
    }

    pub fn validate(&self, augmentation: bool) -> Result<()> {
        let all = [
            ("gly", self.gly),
            ("dpix", self.dpix),
            ("dfeat", self.dfeat),
            ("dadv", self.dadv),
            ("spix", self.spix),
            ("sadv", self.sadv),
            ("srec", self.srec),
            ("daug", self.daug),
            ("saug", self.saug),
            ("guid", self.guid),
        ];
        if let Some((name, v)) = all.iter().find(|(_, v)| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weight {name} = {v} must be finite and >= 0")));
        }
        let mut adversarial = vec![("dadv", self.dadv), ("sadv", self.sadv)];
        if augmentation {
            adversarial.extend([("daug", self.daug), ("saug", self.saug)]);
        }
        if let Some((name, _)) = adversarial.iter().find(|(_, v)| *v <= 0.0) {
            return Err(Error::Config(format!(
                "adversarial weight {name} must be positive while its discriminator is enabled"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Core,
    UnsupervisedFinetune,
    Semisupervised,
}

/// Image tensors `(B, 3, H, W)` of one batch of triples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub y_prime: Tensor,
}

impl Batch {
    pub fn new(x: Tensor, y: Tensor, y_prime: Tensor) -> Result<Self> {
        if x.dims() != y.dims() || y.dims() != y_prime.dims() || x.rank() != 4 {
            return Err(Error::Shape(format!(
                "batch tensors differ: {:?} {:?} {:?}",
                x.dims(),
                y.dims(),
                y_prime.dims()
            )));
        }
        Ok(Self { x, y, y_prime })
    }

    pub fn from_triples(triples: &[TrainingTriple], dtype: DType, device: &Device) -> Result<Self> {
        let xs: Vec<&Image3> = triples.iter().map(|t| &t.x.0).collect();
        let ys: Vec<&Image3> = triples.iter().map(|t| &t.y.pixels).collect();
        let yps: Vec<&Image3> = triples.iter().map(|t| &t.y_prime.pixels).collect();
        Self::new(
            Image3::batch_tensor(&xs, dtype, device)?,
            Image3::batch_tensor(&ys, dtype, device)?,
            Image3::batch_tensor(&yps, dtype, device)?,
        )
    }

    /// Batch for style-only data: `x` is the current destylization of `y`, held constant.
    pub fn auxiliary(net: &TransferNet, y: Tensor, y_prime: Tensor) -> Result<Self> {
        let c = net.encode_content(&y, ContentEncoder::Styled)?;
        let x = net.generate_glyph(&c)?.detach();
        Self::new(x, y, y_prime)
    }

    pub fn size(&self) -> usize {
        self.x.dims()[0]
    }
}

/// Model outputs shared by the loss terms of one batch.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Shared generator features of the glyph, the target of the feature term.
    pub z: Tensor,
    /// Glyph autoencoder output.
    pub x_rec: Tensor,
    /// Shared generator features of the styled image's content.
    pub styled_shared: Tensor,
    /// Destylized `y`.
    pub x_hat: Tensor,
    /// `x` stylized with the style of `y'`.
    pub y_hat: Tensor,
    /// `y` rebuilt from its own content and style features.
    pub y_rec: Option<Tensor>,
}

impl Forward {
    pub fn new(net: &TransferNet, b: &Batch, with_reconstruction: bool) -> Result<Self> {
        let z = net.shared_generator(&net.encode_content(&b.x, ContentEncoder::Glyph)?)?;
        let x_rec = net.glyph_from_shared(&z)?;
        let styled_shared = net.shared_generator(&net.encode_content(&b.y, ContentEncoder::Styled)?)?;
        let x_hat = net.glyph_from_shared(&styled_shared)?;
        let y_hat = net.style_from_shared(&z, &net.encode_style(&b.y_prime)?)?;
        let y_rec = if with_reconstruction {
            Some(net.style_from_shared(&styled_shared, &net.encode_style(&b.y)?)?)
        } else {
            None
        };
        Ok(Self {
            z,
            x_rec,
            styled_shared,
            x_hat,
            y_hat,
            y_rec,
        })
    }
}

/// Mean absolute difference over all elements.
pub fn mean_l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

pub fn glyph_autoencoder_loss(f: &Forward, b: &Batch, w: &LossWeights) -> Result<Tensor> {
    Ok((mean_l1(&f.x_rec, &b.x)? * w.gly)?)
}

pub fn destylize_pixel_loss(f: &Forward, b: &Batch, w: &LossWeights) -> Result<Tensor> {
    Ok((mean_l1(&f.x_hat, &b.x)? * w.dpix)?)
}

/// The glyph's shared features are a constant target: no gradient reaches the glyph encoder.
pub fn destylize_feature_loss(f: &Forward, w: &LossWeights) -> Result<Tensor> {
    Ok((mean_l1(&f.styled_shared, &f.z.detach())? * w.dfeat)?)
}

pub fn stylize_pixel_loss(f: &Forward, b: &Batch, w: &LossWeights) -> Result<Tensor> {
    Ok((mean_l1(&f.y_hat, &b.y)? * w.spix)?)
}

pub fn style_reconstruction_loss(f: &Forward, b: &Batch, w: &LossWeights) -> Result<Tensor> {
    let y_rec = f
        .y_rec
        .as_ref()
        .ok_or_else(|| Error::Config("forward pass was built without reconstruction".into()))?;
    Ok((mean_l1(y_rec, &b.y)? * w.srec)?)
}

/// Foreground/background guidance planes `(B, 1, H, W)`, binary and disjoint.
#[derive(Clone, Debug)]
pub struct GuidanceMasks {
    pub fg: Tensor,
    pub bg: Tensor,
}

impl GuidanceMasks {
    pub fn new(fg: Tensor, bg: Tensor) -> Result<Self> {
        if fg.dims() != bg.dims() || fg.rank() != 4 || fg.dims()[1] != 1 {
            return Err(Error::Shape(format!(
                "masks must be (B,1,H,W) and equal: {:?} vs {:?}",
                fg.dims(),
                bg.dims()
            )));
        }
        let f: Vec<f64> = fg.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        let g: Vec<f64> = bg.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        if f.iter().chain(&g).any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput("masks must be binary".into()));
        }
        if f.iter().zip(&g).any(|(a, b)| a * b != 0.0) {
            return Err(Error::InvalidInput("foreground and background masks overlap".into()));
        }
        Ok(Self { fg, bg })
    }

    pub fn from_planes(fg: &[bool], bg: &[bool], height: usize, width: usize, dtype: DType, device: &Device) -> Result<Self> {
        if fg.len() != height * width || bg.len() != height * width {
            return Err(Error::Shape("mask plane size does not match dimensions".into()));
        }
        let plane = |m: &[bool]| -> Result<Tensor> {
            let v: Vec<f32> = m.iter().map(|&b| b as u8 as f32).collect();
            Ok(Tensor::from_vec(v, (1, 1, height, width), device)?.to_dtype(dtype)?)
        };
        Self::new(plane(fg)?, plane(bg)?)
    }

    /// Decodes a painted mask: red strokes mark foreground, blue strokes background.
    /// A pixel that is both strongly red and strongly blue is an overlap error.
    pub fn from_image(img: &Image3, dtype: DType, device: &Device) -> Result<Self> {
        let (fg, bg) = decode_mask_image(img);
        Self::from_planes(&fg, &bg, img.height(), img.width(), dtype, device)
    }

    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Self> {
        Ok(Self {
            fg: self.fg.narrow(2, top, size)?.narrow(3, left, size)?,
            bg: self.bg.narrow(2, top, size)?.narrow(3, left, size)?,
        })
    }

    /// Repeats a single mask over a batch.
    pub fn repeat(&self, batch: usize) -> Result<Self> {
        Ok(Self {
            fg: self.fg.repeat((batch, 1, 1, 1))?,
            bg: self.bg.repeat((batch, 1, 1, 1))?,
        })
    }
}

/// Red/blue mask planes of a painted image; channel values above one half count as set.
pub fn decode_mask_image(img: &Image3) -> (Vec<bool>, Vec<bool>) {
    let r = img.plane(0);
    let b = img.plane(2);
    (
        r.iter().map(|&v| v > 0.5).collect(),
        b.iter().map(|&v| v > 0.5).collect(),
    )
}

/// Encodes masks the way the UI paints them.
pub fn encode_mask_image(fg: &[bool], bg: &[bool], height: usize, width: usize) -> Result<Image3> {
    if fg.len() != height * width || bg.len() != height * width {
        return Err(Error::Shape("mask plane size does not match dimensions".into()));
    }
    let mut img = Image3::zeros(height, width);
    for i in 0..height * width {
        if fg[i] {
            img.plane_mut(0)[i] = 1.0;
        }
        if bg[i] {
            img.plane_mut(2)[i] = 1.0;
        }
    }
    Ok(img)
}

/// Pulls the destylized glyph toward 1 on foreground strokes and 0 on background strokes.
/// Only the first plane is constrained: it carries the glyph's binary shape.
pub fn guidance_loss(x_hat: &Tensor, masks: &GuidanceMasks, w: &LossWeights) -> Result<Tensor> {
    let p = x_hat.narrow(1, 0, 1)?;
    if p.dims() != masks.fg.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs mask {:?}",
            p.dims(),
            masks.fg.dims()
        )));
    }
    let fg_term = ((&p * &masks.fg)? - &masks.fg)?.abs()?.mean_all()?;
    let bg_term = (&p * &masks.bg)?.abs()?.mean_all()?;
    Ok(((fg_term + bg_term)? * w.guid)?)
}

/// Both sides of one adversarial game.
#[derive(Clone, Debug)]
pub struct AdvTerms {
    /// Generator side: `softplus(-D(fake))`.
    pub gen: Tensor,
    /// Discriminator side on real inputs: `softplus(-D(real))`.
    pub disc_real: Tensor,
    /// Discriminator side on generated inputs: `softplus(D(fake))`, fakes detached.
    pub disc_fake: Tensor,
}

impl AdvTerms {
    pub fn disc(&self) -> Result<Tensor> {
        Ok((&self.disc_real + &self.disc_fake)?)
    }
}

/// Discriminator objective; the fake inputs are detached here.
pub fn disc_term(net: &TransferNet, kind: DiscKind, real: &[&Tensor], fake: &[&Tensor], weight: f64) -> Result<(Tensor, Tensor)> {
    let fake: Vec<Tensor> = fake.iter().map(|t| t.detach()).collect();
    let fake: Vec<&Tensor> = fake.iter().collect();
    let r = softplus(&net.discriminate(kind, real)?.neg()?)?.mean_all()?;
    let f = softplus(&net.discriminate(kind, &fake)?)?.mean_all()?;
    Ok(((r * weight)?, (f * weight)?))
}

pub fn gen_term(net: &TransferNet, kind: DiscKind, fake: &[&Tensor], weight: f64) -> Result<Tensor> {
    Ok((softplus(&net.discriminate(kind, fake)?.neg()?)?.mean_all()? * weight)?)
}

fn adversarial(net: &TransferNet, kind: DiscKind, real: &[&Tensor], fake: &[&Tensor], weight: f64) -> Result<AdvTerms> {
    let (disc_real, disc_fake) = disc_term(net, kind, real, fake, weight)?;
    Ok(AdvTerms {
        gen: gen_term(net, kind, fake, weight)?,
        disc_real,
        disc_fake,
    })
}

fn destylize_pairs<'a>(f: &'a Forward, b: &'a Batch) -> ([&'a Tensor; 2], [&'a Tensor; 2]) {
    ([&b.x, &b.y], [&f.x_hat, &b.y])
}

fn stylize_pairs<'a>(f: &'a Forward, b: &'a Batch) -> ([&'a Tensor; 3], [&'a Tensor; 3]) {
    ([&b.x, &b.y, &b.y_prime], [&b.x, &f.y_hat, &b.y_prime])
}

pub fn destylize_adv_loss(net: &TransferNet, f: &Forward, b: &Batch, w: &LossWeights) -> Result<AdvTerms> {
    let (real, fake) = destylize_pairs(f, b);
    adversarial(net, DiscKind::X, &real, &fake, w.dadv)
}

pub fn stylize_adv_loss(net: &TransferNet, f: &Forward, b: &Batch, w: &LossWeights) -> Result<AdvTerms> {
    let (real, fake) = stylize_pairs(f, b);
    adversarial(net, DiscKind::Y, &real, &fake, w.sadv)
}

/// Unpaired styled data `y`, `y'` (same style) and glyphs `x` unrelated to `y`.
#[derive(Clone, Debug)]
pub struct UnpairedForward {
    pub x_hat: Tensor,
    pub y_hat: Tensor,
}

impl UnpairedForward {
    pub fn new(net: &TransferNet, b: &Batch) -> Result<Self> {
        let c = net.encode_content(&b.y, ContentEncoder::Styled)?;
        let x_hat = net.generate_glyph(&c)?;
        let cx = net.encode_content(&b.x, ContentEncoder::Glyph)?;
        let y_hat = net.generate_style(&cx, &net.encode_style(&b.y_prime)?)?;
        Ok(Self { x_hat, y_hat })
    }
}

/// Augmentation games: `(glyph realness, style realness)`.
pub fn aug_adv_losses(net: &TransferNet, u: &UnpairedForward, b: &Batch, w: &LossWeights) -> Result<(AdvTerms, AdvTerms)> {
    if !net.has_augmentation_discriminators() {
        return Err(Error::Config("augmentation discriminators are not enabled".into()));
    }
    let glyph = adversarial(net, DiscKind::XAug, &[&b.x], &[&u.x_hat], w.daug)?;
    let style = adversarial(net, DiscKind::YAug, &[&b.y, &b.y_prime], &[&u.y_hat, &b.y_prime], w.saug)?;
    Ok((glyph, style))
}

/// Inputs of one objective evaluation.
pub struct ObjectiveInputs<'a> {
    pub batch: &'a Batch,
    pub forward: &'a Forward,
    /// Unpaired batch and its outputs; used in semisupervised mode.
    pub unpaired: Option<(&'a Batch, &'a UnpairedForward)>,
    /// Guidance for the destylization of `batch.y`; used in unsupervised finetuning.
    pub masks: Option<&'a GuidanceMasks>,
}

fn ensure_mode(net: &TransferNet, inp: &ObjectiveInputs, mode: Mode) -> Result<()> {
    if mode == Mode::Semisupervised && inp.unpaired.is_some() && !net.has_augmentation_discriminators() {
        return Err(Error::Config("semisupervised mode needs augmentation discriminators".into()));
    }
    if mode == Mode::UnsupervisedFinetune && inp.forward.y_rec.is_none() {
        return Err(Error::Config("unsupervised finetuning needs the reconstruction pass".into()));
    }
    Ok(())
}

/// Named generator-side terms and their sum for the given mode.
pub fn generator_objective(net: &TransferNet, inp: &ObjectiveInputs, mode: Mode, w: &LossWeights) -> Result<(Tensor, Vec<(&'static str, Tensor)>)> {
    ensure_mode(net, inp, mode)?;
    let (f, b) = (inp.forward, inp.batch);
    let (_, dfake) = destylize_pairs(f, b);
    let (_, sfake) = stylize_pairs(f, b);
    let mut terms = vec![
        ("gly", glyph_autoencoder_loss(f, b, w)?),
        ("dpix", destylize_pixel_loss(f, b, w)?),
        ("dfeat", destylize_feature_loss(f, w)?),
        ("dadv", gen_term(net, DiscKind::X, &dfake, w.dadv)?),
        ("spix", stylize_pixel_loss(f, b, w)?),
        ("sadv", gen_term(net, DiscKind::Y, &sfake, w.sadv)?),
    ];
    match mode {
        Mode::Core => {}
        Mode::UnsupervisedFinetune => {
            terms.push(("srec", style_reconstruction_loss(f, b, w)?));
            if let Some(m) = inp.masks {
                terms.push(("guid", guidance_loss(&f.x_hat, m, w)?));
            }
        }
        Mode::Semisupervised => {
            if let Some((ub, uf)) = inp.unpaired {
                terms.push(("daug", gen_term(net, DiscKind::XAug, &[&uf.x_hat], w.daug)?));
                terms.push((
                    "saug",
                    gen_term(net, DiscKind::YAug, &[&uf.y_hat, &ub.y_prime], w.saug)?,
                ));
            }
        }
    }
    Ok((sum(&terms)?, terms))
}

/// Named discriminator-side terms (fakes detached) and their sum.
pub fn discriminator_objective(net: &TransferNet, inp: &ObjectiveInputs, mode: Mode, w: &LossWeights) -> Result<(Tensor, Vec<(&'static str, Tensor)>)> {
    ensure_mode(net, inp, mode)?;
    let (f, b) = (inp.forward, inp.batch);
    let (dreal, dfake) = destylize_pairs(f, b);
    let (sreal, sfake) = stylize_pairs(f, b);
    let (dr, df) = disc_term(net, DiscKind::X, &dreal, &dfake, w.dadv)?;
    let (sr, sf) = disc_term(net, DiscKind::Y, &sreal, &sfake, w.sadv)?;
    let mut terms = vec![("d_dadv", (dr + df)?), ("d_sadv", (sr + sf)?)];
    if let (Mode::Semisupervised, Some((ub, uf))) = (mode, inp.unpaired) {
        let (gr, gf) = disc_term(net, DiscKind::XAug, &[&ub.x], &[&uf.x_hat], w.daug)?;
        let (yr, yf) = disc_term(
            net,
            DiscKind::YAug,
            &[&ub.y, &ub.y_prime],
            &[&uf.y_hat, &ub.y_prime],
            w.saug,
        )?;
        terms.push(("d_daug", (gr + gf)?));
        terms.push(("d_saug", (yr + yf)?));
    }
    Ok((sum(&terms)?, terms))
}

/// `(generator total, discriminator total)`.
pub fn total_objective(net: &TransferNet, inp: &ObjectiveInputs, mode: Mode, w: &LossWeights) -> Result<(Tensor, Tensor)> {
    Ok((
        generator_objective(net, inp, mode, w)?.0,
        discriminator_objective(net, inp, mode, w)?.0,
    ))
}

fn sum(terms: &[(&'static str, Tensor)]) -> Result<Tensor> {
    let mut it = terms.iter();
    let first = it
        .next()
        .ok_or_else(|| Error::InvalidInput("no terms".into()))?
        .1
        .clone();
    it.try_fold(first, |acc, (_, t)| Ok((acc + t)?))
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
