use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use super::OptimConfig;
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_objective, generator_objective, Batch, Forward, GuidanceMasks, LossWeights,
    Mode, ObjectiveInputs, UnpairedForward,
};
use crate::net::TransferNet;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iter: usize,
    pub gen_total: f64,
    pub disc_total: f64,
    /// Every weighted term by name.
    #[serde(flatten)]
    pub terms: BTreeMap<String, f64>,
    /// Seconds since the trainer was created.
    pub wall_time: f64,
}

/// Alternating discriminator/generator updates on one model.
pub struct Trainer {
    net: TransferNet,
    gen_opt: AdamW,
    disc_opt: AdamW,
    weights: LossWeights,
    mode: Mode,
    iteration: usize,
    started: Instant,
}

fn adam(vars: Vec<candle_core::Var>, o: &OptimConfig) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: 0.0,
        },
    )?)
}

fn to_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn tensor_stats(name: &str, t: &Tensor) -> String {
    let flat = t.flatten_all().and_then(|f| f.to_dtype(candle_core::DType::F64));
    match flat.and_then(|f| f.to_vec1::<f64>()) {
        Ok(v) => {
            let finite = v.iter().filter(|x| x.is_finite()).count();
            let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
            format!("{name}: shape {:?} min {min:.4} max {max:.4} mean {mean:.4} finite {finite}/{}", t.dims(), v.len())
        }
        Err(e) => format!("{name}: unreadable ({e})"),
    }
}

impl Trainer {
    pub fn new(net: TransferNet, optim: &OptimConfig, weights: LossWeights, mode: Mode) -> Result<Self> {
        optim.validate()?;
        weights.validate(mode == Mode::Semisupervised)?;
        if mode == Mode::Semisupervised && !net.has_augmentation_discriminators() {
            return Err(Error::Config("semisupervised training needs augmentation discriminators".into()));
        }
        Ok(Self {
            gen_opt: adam(net.generator_params(), optim)?,
            disc_opt: adam(net.discriminator_params(), optim)?,
            net,
            weights,
            mode,
            iteration: 0,
            started: Instant::now(),
        })
    }

    pub fn net(&self) -> &TransferNet {
        &self.net
    }

    pub fn into_net(self) -> TransferNet {
        self.net
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// One discriminator step on detached fakes, then one generator step against the
    /// updated discriminators. A non-finite objective aborts before any update of that side.
    pub fn step(&mut self, batch: &Batch, unpaired: Option<&Batch>, masks: Option<&GuidanceMasks>) -> Result<StepLog> {
        let net = &self.net;
        let forward = Forward::new(net, batch, self.mode == Mode::UnsupervisedFinetune)?;
        let unpaired_fwd = match (self.mode, unpaired) {
            (Mode::Semisupervised, Some(u)) => Some(UnpairedForward::new(net, u)?),
            _ => None,
        };
        let inputs = ObjectiveInputs {
            batch,
            forward: &forward,
            unpaired: unpaired.zip(unpaired_fwd.as_ref()),
            masks: if self.mode == Mode::UnsupervisedFinetune { masks } else { None },
        };
        let mut terms = BTreeMap::new();

        let (disc_total, disc_terms) = discriminator_objective(net, &inputs, self.mode, &self.weights)?;
        for (name, t) in &disc_terms {
            terms.insert(name.to_string(), to_f64(t)?);
        }
        let disc_value = to_f64(&disc_total)?;
        self.check_finite(disc_value, &terms, batch, unpaired)?;
        self.disc_opt.backward_step(&disc_total)?;

        let (gen_total, gen_terms) = generator_objective(net, &inputs, self.mode, &self.weights)?;
        for (name, t) in &gen_terms {
            terms.insert(name.to_string(), to_f64(t)?);
        }
        let gen_value = to_f64(&gen_total)?;
        self.check_finite(gen_value, &terms, batch, unpaired)?;
        self.gen_opt.backward_step(&gen_total)?;

        self.iteration += 1;
        Ok(StepLog {
            iter: self.iteration,
            gen_total: gen_value,
            disc_total: disc_value,
            terms,
            wall_time: self.started.elapsed().as_secs_f64(),
        })
    }

    fn check_finite(&self, total: f64, terms: &BTreeMap<String, f64>, batch: &Batch, unpaired: Option<&Batch>) -> Result<()> {
        if total.is_finite() {
            return Ok(());
        }
        let mut lines = vec![format!("terms: {terms:?}")];
        lines.push(tensor_stats("x", &batch.x));
        lines.push(tensor_stats("y", &batch.y));
        lines.push(tensor_stats("y_prime", &batch.y_prime));
        if let Some(u) = unpaired {
            lines.push(tensor_stats("unpaired.y", &u.y));
        }
        Err(Error::NonFinite {
            iteration: self.iteration + 1,
            diagnostic: lines.join("\n"),
        })
    }
}
