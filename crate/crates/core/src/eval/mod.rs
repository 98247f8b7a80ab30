//! Image quality metrics, manifest reports and the disentanglement probe.

mod backbone;
mod metrics;
mod probe;
mod report;

pub use backbone::{perceptual, style_metric, PerceptualBackbone, RANDOM_WIDTHS, TAP_NAMES, VGG19_WIDTHS};
pub use metrics::{
    gray, psnr, psnr_values, ssim, ssim_global, ssim_global_gray, ssim_gray, PSNR_CAP, SSIM_C1, SSIM_C2,
    SSIM_WINDOW,
};
pub use probe::{
    probe_disentanglement, probe_features, train_autoencoder, FeatureKind, ProbeCurve, ProbeOptions, ProbeResult,
    TargetKind,
};
pub use report::{evaluate_manifest, mean_test_l1, predict, reference_glyph, MetricMeans, MetricReport, MetricRow, Task};
