//! Synthetic paired text-effect data.
//!
//! Raw binary glyphs are lifted to three planes: the glyph mask, the distance of every
//! foreground pixel to the background, and the distance of every background pixel to
//! the glyph. Styled counterparts are produced by tinting foreground and background
//! with independent colormaps indexed by those distance planes.

mod colormap;
pub mod edt;
pub mod glyphs;
mod loader;
mod manifest;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use colormap::Colormap;
pub use glyphs::{glyph_id, render_glyph, FontStyle, FONT_GLYPHS};
pub use loader::{Dataset, TripleLoader};
pub use manifest::{
    synth_dataset, synth_font_dataset, synth_with, test_count, DatasetManifest, ManifestEntry, Split,
    SynthOptions, GLYPH_DIR, MANIFEST_FILE,
};

use crate::error::{Error, Result};
use crate::image::Image3;

/// Binarization threshold for raw grayscale glyphs.
pub const BINARIZE_THRESHOLD: u8 = 128;

/// Grayscale glyph bitmap, white glyph on black background.
#[derive(Clone, Debug, PartialEq)]
pub struct RawGlyph {
    pub bitmap: Vec<u8>,
    pub height: usize,
    pub width: usize,
    pub glyph_id: String,
    pub font_id: String,
}

impl RawGlyph {
    pub fn from_mask(mask: &[bool], height: usize, width: usize) -> Self {
        Self {
            bitmap: mask.iter().map(|&m| if m { 255 } else { 0 }).collect(),
            height,
            width,
            glyph_id: String::new(),
            font_id: String::new(),
        }
    }

    /// Foreground mask after thresholding at [`BINARIZE_THRESHOLD`].
    pub fn mask(&self) -> Vec<bool> {
        self.bitmap.iter().map(|&v| v >= BINARIZE_THRESHOLD).collect()
    }
}

/// Three-plane glyph image: R = binary glyph, G = distance to background, B = distance
/// to foreground, distances divided by the image diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphImage(pub Image3);

impl GlyphImage {
    pub fn image(&self) -> &Image3 {
        &self.0
    }

    /// Glyph mask read from the R plane (threshold 0.5).
    pub fn mask(&self) -> Vec<bool> {
        self.0.plane(0).iter().map(|&v| v >= 0.5).collect()
    }

    /// Checks the plane invariants exactly; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let r = self.0.plane(0);
        let g = self.0.plane(1);
        let b = self.0.plane(2);
        for i in 0..r.len() {
            if r[i] != 0.0 && r[i] != 1.0 {
                return Err(format!("R[{i}] = {} is not binary", r[i]));
            }
            if r[i] == 0.0 && g[i] != 0.0 {
                return Err(format!("G[{i}] = {} on background", g[i]));
            }
            if r[i] == 1.0 && b[i] != 0.0 {
                return Err(format!("B[{i}] = {} on foreground", b[i]));
            }
            if !(0.0..=1.0).contains(&g[i]) || !(0.0..=1.0).contains(&b[i]) {
                return Err(format!("distance out of range at {i}"));
            }
        }
        Ok(())
    }
}

/// Rendered text-effect image paired with the glyph it styles.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleImage {
    pub pixels: Image3,
    pub style_id: String,
    pub glyph_id: String,
}

/// `(x, y, y')`: a glyph, its styled version, and the same style on another glyph.
#[derive(Clone, Debug)]
pub struct TrainingTriple {
    pub x: GlyphImage,
    pub y: StyleImage,
    pub y_prime: StyleImage,
}

impl TrainingTriple {
    pub fn new(x: GlyphImage, y: StyleImage, y_prime: StyleImage) -> Result<Self> {
        if y.style_id != y_prime.style_id {
            return Err(Error::InvalidInput(format!(
                "y and y' styles differ: {} vs {}",
                y.style_id, y_prime.style_id
            )));
        }
        if y.glyph_id == y_prime.glyph_id {
            return Err(Error::InvalidInput(format!(
                "y' must show a different glyph than y ({})",
                y.glyph_id
            )));
        }
        if !x.0.same_size(&y.pixels) || !x.0.same_size(&y_prime.pixels) {
            return Err(Error::Shape("triple images differ in size".into()));
        }
        Ok(Self { x, y, y_prime })
    }
}

/// Unnormalized Euclidean distance planes of a binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMaps {
    /// Distance from each foreground pixel to the nearest background pixel (0 on background).
    pub to_background: Vec<f64>,
    /// Distance from each background pixel to the nearest foreground pixel (0 on foreground).
    pub to_foreground: Vec<f64>,
}

pub fn distance_maps(mask: &[bool], height: usize, width: usize) -> Result<DistanceMaps> {
    if mask.len() != height * width {
        return Err(Error::Shape(format!(
            "mask of {} pixels for {height}x{width}",
            mask.len()
        )));
    }
    let fg = mask.iter().filter(|&&m| m).count();
    if fg == 0 || fg == mask.len() {
        return Err(Error::InvalidInput(
            "glyph mask needs both foreground and background pixels".into(),
        ));
    }
    let background: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let to_background = edt::squared_distance(&background, height, width)
        .into_iter()
        .map(f64::sqrt)
        .collect();
    let to_foreground = edt::squared_distance(mask, height, width)
        .into_iter()
        .map(f64::sqrt)
        .collect();
    Ok(DistanceMaps {
        to_background,
        to_foreground,
    })
}

/// Lifts a raw glyph to the three-plane representation.
pub fn preprocess_glyph(raw: &RawGlyph) -> Result<GlyphImage> {
    preprocess_mask(&raw.mask(), raw.height, raw.width)
}

pub fn preprocess_mask(mask: &[bool], height: usize, width: usize) -> Result<GlyphImage> {
    let maps = distance_maps(mask, height, width)?;
    let diag = ((height * height + width * width) as f64).sqrt();
    let n = height * width;
    let mut data = vec![0.0f32; 3 * n];
    for i in 0..n {
        data[i] = if mask[i] { 1.0 } else { 0.0 };
        data[n + i] = (maps.to_background[i] / diag) as f32;
        data[2 * n + i] = (maps.to_foreground[i] / diag) as f32;
    }
    Ok(GlyphImage(Image3::from_planar(height, width, data)?))
}

/// Tints the glyph with `fg_map` (indexed by the G plane) and the background with
/// `bg_map` (indexed by the B plane).
pub fn augment_style(x: &GlyphImage, fg_map: &Colormap, bg_map: &Colormap) -> Image3 {
    let img = &x.0;
    let mut out = Image3::zeros(img.height(), img.width());
    for y in 0..img.height() {
        for xx in 0..img.width() {
            let color = if img.get(0, y, xx) >= 0.5 {
                fg_map.eval(img.get(1, y, xx))
            } else {
                bg_map.eval(img.get(2, y, xx))
            };
            out.set_pixel(y, xx, color);
        }
    }
    out
}

/// A synthetic text effect: distance colormaps plus optional outline and drop shadow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleRecipe {
    pub fg: Colormap,
    pub bg: Colormap,
    /// Outline thickness in pixels and its color.
    pub outline: Option<(f32, [f32; 3])>,
    /// Shadow offset `(dy, dx)` in pixels and its color.
    pub shadow: Option<((i32, i32), [f32; 3])>,
}

impl StyleRecipe {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let fg = Colormap::random(rng, 4);
        let bg = Colormap::random(rng, 4);
        let outline = rng
            .gen_bool(0.5)
            .then(|| (rng.gen_range(1.0..2.5), [rng.gen(), rng.gen(), rng.gen()]));
        let shadow = rng
            .gen_bool(0.3)
            .then(|| ((2, 2), [rng.gen::<f32>() * 0.3, rng.gen::<f32>() * 0.3, rng.gen::<f32>() * 0.3]));
        Self {
            fg,
            bg,
            outline,
            shadow,
        }
    }

    pub fn render(&self, x: &GlyphImage) -> Image3 {
        let mut out = augment_style(x, &self.fg, &self.bg);
        let img = &x.0;
        let (h, w) = (img.height(), img.width());
        let diag = ((h * h + w * w) as f32).sqrt();
        if let Some(((dy, dx), color)) = self.shadow {
            for y in 0..h {
                for xx in 0..w {
                    let sy = y as i32 - dy;
                    let sx = xx as i32 - dx;
                    let casts = sy >= 0
                        && sx >= 0
                        && (sy as usize) < h
                        && (sx as usize) < w
                        && img.get(0, sy as usize, sx as usize) >= 0.5;
                    if casts && img.get(0, y, xx) < 0.5 {
                        out.set_pixel(y, xx, color);
                    }
                }
            }
        }
        if let Some((thickness, color)) = self.outline {
            for y in 0..h {
                for xx in 0..w {
                    let d = img.get(2, y, xx) * diag;
                    if img.get(0, y, xx) < 0.5 && d <= thickness + 0.5 {
                        out.set_pixel(y, xx, color);
                    }
                }
            }
        }
        out
    }
}
