use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{glyphs, preprocess_glyph, FontStyle, StyleRecipe};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const GLYPH_DIR: &str = "_glyphs";
const TEST_FRACTION: f64 = 0.13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub style_id: String,
    pub glyph_id: String,
    pub split: Split,
    /// Path of the three-plane glyph image, relative to the dataset root.
    pub glyph_file: String,
    /// Path of the styled image, relative to the dataset root.
    pub style_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub version: u32,
    pub seed: u64,
    pub image_size: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Loads `manifest.json` from a dataset directory (or the file itself).
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.root = file
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self) -> Result<()> {
        self.save_as(MANIFEST_FILE).map(|_| ())
    }

    /// Writes the manifest under another file name in the same root, so several
    /// sub-manifests can share one set of images. Returns the file path.
    pub fn save_as(&self, file_name: &str) -> Result<PathBuf> {
        let file = self.root.join(file_name);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&file, text).map_err(|e| Error::io(&file, e))?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert((&e.style_id, &e.glyph_id)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate manifest entry ({}, {})",
                    e.style_id, e.glyph_id
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the serialized entries; identifies the dataset in reports.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        let digest = Sha256::digest(bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn styles(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.entries.iter().map(|e| &e.style_id).collect();
        set.into_iter().cloned().collect()
    }

    pub fn glyphs(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.entries.iter().map(|e| &e.glyph_id).collect();
        set.into_iter().cloned().collect()
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// Sub-manifest restricted to the given styles (same root).
    pub fn with_styles(&self, styles: &[&str]) -> DatasetManifest {
        let mut out = self.clone();
        out.entries.retain(|e| styles.contains(&e.style_id.as_str()));
        out
    }

    /// Sub-manifest restricted to the given glyphs (same root).
    pub fn with_glyphs(&self, glyphs: &[&str]) -> DatasetManifest {
        let mut out = self.clone();
        out.entries.retain(|e| glyphs.contains(&e.glyph_id.as_str()));
        out
    }

    /// Marks every entry as `split`.
    pub fn all_as(&self, split: Split) -> DatasetManifest {
        let mut out = self.clone();
        for e in &mut out.entries {
            e.split = split;
        }
        out
    }
}

/// Options for [`synth_dataset`] beyond the required counts.
#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub n_styles: usize,
    pub n_glyphs: usize,
    pub size: usize,
    pub seed: u64,
    /// Allow outline / shadow decorations on top of the colormaps.
    pub decorations: bool,
    /// Offset into the glyph index space; lets two datasets use disjoint glyphs.
    pub first_glyph: usize,
    /// Prefix for generated style ids.
    pub style_prefix: String,
}

impl SynthOptions {
    pub fn new(n_styles: usize, n_glyphs: usize, size: usize, seed: u64) -> Self {
        Self {
            n_styles,
            n_glyphs,
            size,
            seed,
            decorations: true,
            first_glyph: 0,
            style_prefix: "s".into(),
        }
    }
}

fn check_counts(n_styles: usize, n_glyphs: usize, size: usize) -> Result<()> {
    if n_styles < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 styles, got {n_styles}"
        )));
    }
    if n_glyphs < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 glyphs, got {n_glyphs}"
        )));
    }
    if size < 16 {
        return Err(Error::InvalidInput(format!(
            "image size must be at least 16, got {size}"
        )));
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Per-style test glyph count: 13% rounded to the nearest item, leaving ≥ 2 for training.
pub fn test_count(n_glyphs: usize) -> usize {
    ((n_glyphs as f64 * TEST_FRACTION).round() as usize).min(n_glyphs.saturating_sub(2))
}

fn split_glyphs(glyph_ids: &[String], rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    let mut order: Vec<&String> = glyph_ids.iter().collect();
    order.shuffle(rng);
    order
        .into_iter()
        .take(test_count(glyph_ids.len()))
        .cloned()
        .collect()
}

/// Writes `n_styles × n_glyphs` styled images plus the glyph images and manifest.
pub fn synth_dataset(n_styles: usize, n_glyphs: usize, size: usize, seed: u64, out: &Path) -> Result<DatasetManifest> {
    synth_with(&SynthOptions::new(n_styles, n_glyphs, size, seed), out)
}

pub fn synth_with(opts: &SynthOptions, out: &Path) -> Result<DatasetManifest> {
    check_counts(opts.n_styles, opts.n_glyphs, opts.size)?;
    create_dir(&out.join(GLYPH_DIR))?;
    let anchor = FontStyle::anchor();
    let glyph_images: Vec<_> = (opts.first_glyph..opts.first_glyph + opts.n_glyphs)
        .map(|i| preprocess_glyph(&glyphs::render_glyph(i, opts.size, &anchor, opts.seed)))
        .collect::<Result<_>>()?;
    let glyph_ids: Vec<String> = (opts.first_glyph..opts.first_glyph + opts.n_glyphs)
        .map(glyphs::glyph_id)
        .collect();
    for (id, img) in glyph_ids.iter().zip(&glyph_images) {
        img.0.save_png(&out.join(GLYPH_DIR).join(format!("{id}.png")))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::new();
    for s in 0..opts.n_styles {
        let style_id = format!("{}{s:02}", opts.style_prefix);
        let mut recipe = StyleRecipe::random(&mut rng);
        if !opts.decorations {
            recipe.outline = None;
            recipe.shadow = None;
        }
        create_dir(&out.join(&style_id))?;
        let test = split_glyphs(&glyph_ids, &mut rng);
        for (id, img) in glyph_ids.iter().zip(&glyph_images) {
            let styled = recipe.render(img);
            let style_file = format!("{style_id}/{id}.png");
            styled.save_png(&out.join(&style_file))?;
            entries.push(ManifestEntry {
                style_id: style_id.clone(),
                glyph_id: id.clone(),
                split: if test.contains(id) { Split::Test } else { Split::Train },
                glyph_file: format!("{GLYPH_DIR}/{id}.png"),
                style_file,
            });
        }
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        version: MANIFEST_VERSION,
        seed: opts.seed,
        image_size: opts.size,
        entries,
    };
    manifest.save()?;
    Ok(manifest)
}

/// Font-transfer dataset: `x` is the glyph in the anchor font, the "style" images are
/// the same glyph preprocessed in each font of `fonts`.
pub fn synth_font_dataset(fonts: &[FontStyle], n_glyphs: usize, size: usize, seed: u64, out: &Path) -> Result<DatasetManifest> {
    check_counts(fonts.len().max(2), n_glyphs, size)?;
    if fonts.is_empty() {
        return Err(Error::InvalidInput("no fonts given".into()));
    }
    create_dir(&out.join(GLYPH_DIR))?;
    let anchor = FontStyle::anchor();
    let glyph_ids: Vec<String> = (0..n_glyphs).map(glyphs::glyph_id).collect();
    for (i, id) in glyph_ids.iter().enumerate() {
        let img = preprocess_glyph(&glyphs::render_glyph(i, size, &anchor, seed))?;
        img.0.save_png(&out.join(GLYPH_DIR).join(format!("{id}.png")))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for font in fonts {
        create_dir(&out.join(&font.id))?;
        let test = split_glyphs(&glyph_ids, &mut rng);
        for (i, id) in glyph_ids.iter().enumerate() {
            let img = preprocess_glyph(&glyphs::render_glyph(i, size, font, seed))?;
            let style_file = format!("{}/{id}.png", font.id);
            img.0.save_png(&out.join(&style_file))?;
            entries.push(ManifestEntry {
                style_id: font.id.clone(),
                glyph_id: id.clone(),
                split: if test.contains(id) { Split::Test } else { Split::Train },
                glyph_file: format!("{GLYPH_DIR}/{id}.png"),
                style_file,
            });
        }
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        version: MANIFEST_VERSION,
        seed,
        image_size: size,
        entries,
    };
    manifest.save()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_rule_matches_rounded_thirteen_percent() {
        assert_eq!(test_count(30), 4);
        assert_eq!(test_count(4), 1);
        assert_eq!(test_count(100), 13);
    }

    #[test]
    fn counts_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        assert!(synth_dataset(1, 10, 32, 0, dir.path()).is_err());
        assert!(synth_dataset(2, 3, 32, 0, dir.path()).is_err());
        assert!(synth_dataset(2, 10, 8, 0, dir.path()).is_err());
    }

    #[test]
    fn duplicates_are_rejected() {
        let e = ManifestEntry {
            style_id: "s".into(),
            glyph_id: "A".into(),
            split: Split::Train,
            glyph_file: String::new(),
            style_file: String::new(),
        };
        let m = DatasetManifest {
            root: PathBuf::new(),
            version: 1,
            seed: 0,
            image_size: 16,
            entries: vec![e.clone(), e],
        };
        assert!(m.validate().is_err());
    }
}
