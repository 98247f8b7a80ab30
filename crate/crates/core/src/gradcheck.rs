//! Central finite-difference checks of analytic parameter gradients.

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{
    destylize_pixel_loss, disc_term, gen_term, glyph_autoencoder_loss, guidance_loss, mean_l1, scalar, stylize_pixel_loss,
    style_reconstruction_loss, Batch, Forward, GuidanceMasks, LossWeights, UnpairedForward,
};
use crate::net::{ContentEncoder, DiscKind, NetConfig, TransferNet};

/// Below this magnitude both gradients count as zero-scale; relative error is measured
/// against it instead.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub term: String,
    pub probes: usize,
    pub worst: Probe,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.rel_err
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(MAGNITUDE_FLOOR)
}

fn nudge(var: &Var, index: usize, delta: f64) -> Result<()> {
    let mut v: Vec<f64> = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    v[index] += delta;
    let t = Tensor::from_vec(v, var.dims(), var.device())?.to_dtype(var.dtype())?;
    var.set(&t)?;
    Ok(())
}

/// Compares the analytic gradient of `loss` with central differences at `probes` random
/// coordinates of the parameters that receive a gradient.
pub fn check(term: &str, params: &[(String, Var)], loss: &dyn Fn() -> Result<Tensor>, probes: usize, step: f64, seed: u64) -> Result<GradCheckReport> {
    let grads = loss()?.backward()?;
    let live: Vec<(&String, &Var, Tensor)> = params
        .iter()
        .filter_map(|(n, v)| grads.get(v.as_tensor()).map(|g| (n, v, g.clone())))
        .collect();
    if live.is_empty() {
        return Err(Error::InvalidInput(format!("{term}: no parameter receives a gradient")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<Probe> = None;
    for _ in 0..probes {
        let (name, var, grad) = &live[rng.gen_range(0..live.len())];
        let index = rng.gen_range(0..var.elem_count());
        let analytic: f64 = grad.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?[index];
        nudge(var, index, step)?;
        let plus = scalar(&loss()?)?;
        nudge(var, index, -2.0 * step)?;
        let minus = scalar(&loss()?)?;
        nudge(var, index, step)?;
        let numeric = (plus - minus) / (2.0 * step);
        let probe = Probe {
            param: name.to_string(),
            index,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        };
        if worst.as_ref().is_none_or(|w| probe.rel_err > w.rel_err) {
            worst = Some(probe);
        }
    }
    Ok(GradCheckReport {
        term: term.to_string(),
        probes,
        worst: worst.ok_or_else(|| Error::InvalidInput("probes must be positive".into()))?,
    })
}

/// Micro-model in double precision with augmentation discriminators.
pub fn micro_model(seed: u64) -> Result<TransferNet> {
    TransferNet::new(
        NetConfig {
            seed,
            ..NetConfig::micro()
        },
        DType::F64,
        &Device::Cpu,
    )
}

/// Every objective term on a 3×16×16 batch: pixel, feature, reconstruction and guidance
/// terms plus both sides of all four adversarial games. Constant targets (detached
/// features, detached fakes on the discriminator side) are computed once and held fixed.
pub fn full_suite(probes: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    let net = micro_model(seed)?;
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let mut rand_t = |b: usize| -> Result<Tensor> {
        let v: Vec<f64> = (0..b * 3 * 16 * 16).map(|_| rng.gen()).collect();
        Ok(Tensor::from_vec(v, (b, 3, 16, 16), &dev)?)
    };
    let b = Batch::new(rand_t(2)?, rand_t(2)?, rand_t(2)?)?;
    let u = Batch::new(rand_t(2)?, rand_t(2)?, rand_t(2)?)?;
    let fg: Vec<bool> = (0..256).map(|i| i % 7 == 0).collect();
    let bg: Vec<bool> = (0..256).map(|i| i % 7 == 3).collect();
    let masks = GuidanceMasks::from_planes(&fg, &bg, 16, 16, DType::F64, &dev)?.repeat(2)?;
    let w = LossWeights::unit();
    let params = net.named_params();
    let step = 1e-6;

    let fixed = Forward::new(&net, &b, true)?;
    let z = fixed.z.detach();
    let x_hat = fixed.x_hat.detach();
    let y_hat = fixed.y_hat.detach();
    let fixed_u = UnpairedForward::new(&net, &u)?;
    let ux_hat = fixed_u.x_hat.detach();
    let uy_hat = fixed_u.y_hat.detach();

    let fwd = || Forward::new(&net, &b, true);
    let ufwd = || UnpairedForward::new(&net, &u);
    let sum = |p: (Tensor, Tensor)| -> Result<Tensor> { Ok((p.0 + p.1)?) };
    let terms: Vec<(&str, Box<dyn Fn() -> Result<Tensor> + '_>)> = vec![
        ("glyph_autoencoder", Box::new(|| glyph_autoencoder_loss(&fwd()?, &b, &w))),
        ("destylize_pixel", Box::new(|| destylize_pixel_loss(&fwd()?, &b, &w))),
        (
            "destylize_feature",
            Box::new(|| {
                let s = net.shared_generator(&net.encode_content(&b.y, ContentEncoder::Styled)?)?;
                mean_l1(&s, &z)
            }),
        ),
        (
            "destylize_adv_gen",
            Box::new(|| gen_term(&net, DiscKind::X, &[&fwd()?.x_hat, &b.y], w.dadv)),
        ),
        (
            "destylize_adv_disc",
            Box::new(|| sum(disc_term(&net, DiscKind::X, &[&b.x, &b.y], &[&x_hat, &b.y], w.dadv)?)),
        ),
        ("stylize_pixel", Box::new(|| stylize_pixel_loss(&fwd()?, &b, &w))),
        (
            "stylize_adv_gen",
            Box::new(|| gen_term(&net, DiscKind::Y, &[&b.x, &fwd()?.y_hat, &b.y_prime], w.sadv)),
        ),
        (
            "stylize_adv_disc",
            Box::new(|| {
                sum(disc_term(
                    &net,
                    DiscKind::Y,
                    &[&b.x, &b.y, &b.y_prime],
                    &[&b.x, &y_hat, &b.y_prime],
                    w.sadv,
                )?)
            }),
        ),
        ("style_reconstruction", Box::new(|| style_reconstruction_loss(&fwd()?, &b, &w))),
        (
            "glyph_aug_adv_gen",
            Box::new(|| gen_term(&net, DiscKind::XAug, &[&ufwd()?.x_hat], w.daug)),
        ),
        (
            "glyph_aug_adv_disc",
            Box::new(|| sum(disc_term(&net, DiscKind::XAug, &[&u.x], &[&ux_hat], w.daug)?)),
        ),
        (
            "style_aug_adv_gen",
            Box::new(|| gen_term(&net, DiscKind::YAug, &[&ufwd()?.y_hat, &u.y_prime], w.saug)),
        ),
        (
            "style_aug_adv_disc",
            Box::new(|| {
                sum(disc_term(
                    &net,
                    DiscKind::YAug,
                    &[&u.y, &u.y_prime],
                    &[&uy_hat, &u.y_prime],
                    w.saug,
                )?)
            }),
        ),
        ("guidance", Box::new(|| guidance_loss(&fwd()?.x_hat, &masks, &w))),
    ];
    terms
        .iter()
        .enumerate()
        .map(|(i, (name, f))| check(name, &params, f.as_ref(), probes, step, seed + i as u64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.001) - 0.001 / 1.001).abs() < 1e-12);
        assert!((relative_error(1e-9, 2e-9) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn quadratic_gradient_matches() {
        let v = Var::from_tensor(&Tensor::new(&[0.3f64, -1.2, 2.0], &Device::Cpu).unwrap()).unwrap();
        let params = vec![("v".to_string(), v.clone())];
        let r = check("quad", &params, &|| Ok((v.as_tensor().sqr()? * 1.5)?.sum_all()?), 10, 1e-6, 0).unwrap();
        assert!(r.max_rel_err() < 1e-8);
    }
}
