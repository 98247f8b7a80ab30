use serde::{Deserialize, Serialize};

use super::backbone::{perceptual, style_metric, PerceptualBackbone};
use super::metrics::{psnr, ssim};
use crate::dataset::{Dataset, DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::image::Image3;
use crate::train::{destylize, stylize};
use crate::net::TransferNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Render the test glyph in the style of a reference image of the same style.
    Stylize,
    /// Recover the test glyph from its styled image.
    Destylize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub style_id: String,
    pub glyph_id: String,
    /// Glyph of the style reference used (stylization only).
    pub reference_glyph: Option<String>,
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub style: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub style: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub model_tag: String,
    pub manifest_hash: String,
    pub backbone: String,
    pub rows: Vec<MetricRow>,
    pub mean: MetricMeans,
}

impl MetricReport {
    fn means(rows: &[MetricRow]) -> MetricMeans {
        let n = rows.len().max(1) as f64;
        let avg = |f: fn(&MetricRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        MetricMeans {
            l1: avg(|r| r.l1),
            psnr: avg(|r| r.psnr),
            ssim: avg(|r| r.ssim),
            perceptual: avg(|r| r.perceptual),
            style: avg(|r| r.style),
        }
    }

    /// Plain-text table, one row per image plus the means.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "task {:?}  model {}  manifest {}  backbone {}\n",
            self.task,
            self.model_tag,
            &self.manifest_hash[..self.manifest_hash.len().min(12)],
            self.backbone
        );
        out.push_str(&format!(
            "{:<10} {:<8} {:>8} {:>8} {:>8} {:>12} {:>12}\n",
            "style", "glyph", "L1", "PSNR", "SSIM", "perceptual", "style"
        ));
        let line = |s: &str, g: &str, l1: f64, p: f64, ss: f64, pe: f64, st: f64| {
            format!("{s:<10} {g:<8} {l1:>8.4} {p:>8.3} {ss:>8.4} {pe:>12.5} {st:>12.6}\n")
        };
        for r in &self.rows {
            out.push_str(&line(&r.style_id, &r.glyph_id, r.l1, r.psnr, r.ssim, r.perceptual, r.style));
        }
        let m = &self.mean;
        out.push_str(&line("mean", "", m.l1, m.psnr, m.ssim, m.perceptual, m.style));
        out
    }
}

/// Reference glyph for stylizing `entry`: the first train glyph of its style, or failing
/// that the first other glyph of the style.
pub fn reference_glyph(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<String> {
    let mut same_style: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| e.style_id == entry.style_id && e.glyph_id != entry.glyph_id)
        .collect();
    same_style.sort_by(|a, b| (a.split != Split::Train, &a.glyph_id).cmp(&(b.split != Split::Train, &b.glyph_id)));
    same_style
        .first()
        .map(|e| e.glyph_id.clone())
        .ok_or_else(|| Error::InvalidInput(format!("style {} has a single glyph", entry.style_id)))
}

/// Output and target image for one test entry.
pub fn predict(model: &TransferNet, dataset: &Dataset, entry: &ManifestEntry, task: Task) -> Result<(Image3, Image3, Option<String>)> {
    let glyph = dataset.glyph(&entry.glyph_id)?;
    let styled = dataset.style(&entry.style_id, &entry.glyph_id)?;
    Ok(match task {
        Task::Stylize => {
            let r = reference_glyph(&dataset.manifest, entry)?;
            let reference = dataset.style(&entry.style_id, &r)?;
            (stylize(model, glyph, &reference.pixels)?, styled.pixels.clone(), Some(r))
        }
        Task::Destylize => (destylize(model, &styled.pixels)?, glyph.0.clone(), None),
    })
}

/// Mean absolute error over the test split.
pub fn mean_test_l1(model: &TransferNet, dataset: &Dataset, task: Task) -> Result<f64> {
    let entries = dataset.manifest.split(Split::Test);
    if entries.is_empty() {
        return Err(Error::InvalidInput("test split is empty".into()));
    }
    let mut total = 0.0;
    for e in &entries {
        let (out, target, _) = predict(model, dataset, e, task)?;
        total += out.mean_abs_diff(&target)?;
    }
    Ok(total / entries.len() as f64)
}

/// Runs `task` on every test entry and aggregates all metrics.
pub fn evaluate_manifest(model: &TransferNet, manifest: &DatasetManifest, backbone: &PerceptualBackbone, task: Task, model_tag: &str) -> Result<MetricReport> {
    let dataset = Dataset::load(manifest)?;
    let entries = manifest.split(Split::Test);
    if entries.is_empty() {
        return Err(Error::InvalidInput("test split is empty".into()));
    }
    let mut rows = Vec::new();
    for e in entries {
        let (out, target, reference_glyph) = predict(model, &dataset, e, task)?;
        rows.push(MetricRow {
            style_id: e.style_id.clone(),
            glyph_id: e.glyph_id.clone(),
            reference_glyph,
            l1: out.mean_abs_diff(&target)?,
            psnr: psnr(&out, &target)?,
            ssim: ssim(&out, &target)?,
            perceptual: perceptual(&out, &target, backbone)?,
            style: style_metric(&out, &target, backbone)?,
        });
    }
    let mean = MetricReport::means(&rows);
    Ok(MetricReport {
        task,
        model_tag: model_tag.to_string(),
        manifest_hash: manifest.hash(),
        backbone: backbone.source().to_string(),
        rows,
        mean,
    })
}
