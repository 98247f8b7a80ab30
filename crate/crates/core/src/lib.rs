//! Text-effect transfer toolkit.
//!
//! The crate is organised around the pipeline a text-effect model goes through:
//!
//! * [`dataset`] renders procedural glyphs, turns them into three-plane distance images,
//!   synthesizes styled counterparts and streams training triples.
//! * [`net`] holds the encoder/generator/discriminator graph with shared content layers.
//! * [`losses`] implements every training objective as a differentiable function.
//! * [`train`] runs adversarial training, one-reference finetuning, semisupervised
//!   training and the joint font/effect pipeline.
//! * [`eval`] provides PSNR/SSIM/perceptual/style metrics, manifest reports and the
//!   disentanglement probe.
//! * [`gradcheck`] compares analytic gradients of every objective term with central
//!   differences.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod image;
pub mod losses;
pub mod net;
pub mod train;

pub use error::{Error, Result};
pub use image::Image3;
