use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, GlyphImage, ManifestEntry, Split, StyleImage, TrainingTriple};
use crate::error::{Error, Result};
use crate::image::Image3;

/// All images of a manifest, decoded into memory.
#[derive(Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    glyphs: HashMap<String, GlyphImage>,
    styles: HashMap<(String, String), StyleImage>,
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        let mut glyphs = HashMap::new();
        let mut styles = HashMap::new();
        for e in &manifest.entries {
            if !glyphs.contains_key(&e.glyph_id) {
                let img = Image3::load_png(&manifest.root.join(&e.glyph_file))?;
                glyphs.insert(e.glyph_id.clone(), GlyphImage(img));
            }
            let pixels = Image3::load_png(&manifest.root.join(&e.style_file))?;
            styles.insert(
                (e.style_id.clone(), e.glyph_id.clone()),
                StyleImage {
                    pixels,
                    style_id: e.style_id.clone(),
                    glyph_id: e.glyph_id.clone(),
                },
            );
        }
        Ok(Self {
            manifest: manifest.clone(),
            glyphs,
            styles,
        })
    }

    pub fn glyph(&self, glyph_id: &str) -> Result<&GlyphImage> {
        self.glyphs
            .get(glyph_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown glyph {glyph_id}")))
    }

    pub fn style(&self, style_id: &str, glyph_id: &str) -> Result<&StyleImage> {
        self.styles
            .get(&(style_id.to_string(), glyph_id.to_string()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown style image {style_id}/{glyph_id}")))
    }

    pub fn triple(&self, entry: &ManifestEntry, y_prime_glyph: &str) -> Result<TrainingTriple> {
        TrainingTriple::new(
            self.glyph(&entry.glyph_id)?.clone(),
            self.style(&entry.style_id, &entry.glyph_id)?.clone(),
            self.style(&entry.style_id, y_prime_glyph)?.clone(),
        )
    }
}

/// Seeded stream of `(x, y, y')` batches over one split of a dataset.
///
/// Every epoch visits each entry of the split once in a seed-determined order; `y'` is
/// drawn uniformly among the other glyphs of the same style within the split.
pub struct TripleLoader {
    dataset: Arc<Dataset>,
    entries: Vec<ManifestEntry>,
    by_style: BTreeMap<String, Vec<String>>,
    batch: usize,
    seed: u64,
}

impl TripleLoader {
    pub fn new(dataset: Arc<Dataset>, split: Split, batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        let entries: Vec<ManifestEntry> = dataset
            .manifest
            .entries
            .iter()
            .filter(|e| e.split == split)
            .cloned()
            .collect();
        if entries.is_empty() {
            return Err(Error::InvalidInput(format!("split {split:?} is empty")));
        }
        let mut by_style: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for e in &entries {
            by_style
                .entry(e.style_id.clone())
                .or_default()
                .push(e.glyph_id.clone());
        }
        if let Some((style, _)) = by_style.iter().find(|(_, g)| g.len() < 2) {
            return Err(Error::InvalidInput(format!(
                "style {style} has a single glyph in {split:?}; no y' can be drawn"
            )));
        }
        Ok(Self {
            dataset,
            entries,
            by_style,
            batch,
            seed,
        })
    }

    pub fn from_manifest(manifest: &DatasetManifest, split: Split, batch: usize, seed: u64) -> Result<Self> {
        Self::new(Arc::new(Dataset::load(manifest)?), split, batch, seed)
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.entries.len().div_ceil(self.batch)
    }

    /// All batches of epoch `epoch`; the last batch may be short.
    pub fn epoch(&self, epoch: u64) -> Result<Vec<Vec<TrainingTriple>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.shuffle(&mut rng);
        order
            .chunks(self.batch)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&i| {
                        let e = &self.entries[i];
                        let candidates: Vec<&String> = self.by_style[&e.style_id]
                            .iter()
                            .filter(|g| **g != e.glyph_id)
                            .collect();
                        let pick = candidates[rng.gen_range(0..candidates.len())];
                        self.dataset.triple(e, pick)
                    })
                    .collect()
            })
            .collect()
    }

    /// Endless batch stream cycling through epochs `0, 1, 2, …`.
    pub fn stream(&self) -> impl Iterator<Item = Result<Vec<TrainingTriple>>> + '_ {
        (0u64..).flat_map(move |epoch| match self.epoch(epoch) {
            Ok(batches) => batches.into_iter().map(Ok).collect::<Vec<_>>(),
            Err(e) => vec![Err(e)],
        })
    }
}
