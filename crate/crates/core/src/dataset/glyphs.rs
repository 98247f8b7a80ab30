//! Procedural glyph rasterizer: a 5×7 stroke font for `A–Z0–9` plus seeded random
//! stroke shapes for anything beyond those 36 characters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RawGlyph;

const FONT_5X7: [(char, [&str; 7]); 36] = [
    ('A', ["01110", "10001", "10001", "11111", "10001", "10001", "10001"]),
    ('B', ["11110", "10001", "10001", "11110", "10001", "10001", "11110"]),
    ('C', ["01110", "10001", "10000", "10000", "10000", "10001", "01110"]),
    ('D', ["11100", "10010", "10001", "10001", "10001", "10010", "11100"]),
    ('E', ["11111", "10000", "10000", "11110", "10000", "10000", "11111"]),
    ('F', ["11111", "10000", "10000", "11110", "10000", "10000", "10000"]),
    ('G', ["01110", "10001", "10000", "10111", "10001", "10001", "01111"]),
    ('H', ["10001", "10001", "10001", "11111", "10001", "10001", "10001"]),
    ('I', ["01110", "00100", "00100", "00100", "00100", "00100", "01110"]),
    ('J', ["00111", "00010", "00010", "00010", "00010", "10010", "01100"]),
    ('K', ["10001", "10010", "10100", "11000", "10100", "10010", "10001"]),
    ('L', ["10000", "10000", "10000", "10000", "10000", "10000", "11111"]),
    ('M', ["10001", "11011", "10101", "10101", "10001", "10001", "10001"]),
    ('N', ["10001", "10001", "11001", "10101", "10011", "10001", "10001"]),
    ('O', ["01110", "10001", "10001", "10001", "10001", "10001", "01110"]),
    ('P', ["11110", "10001", "10001", "11110", "10000", "10000", "10000"]),
    ('Q', ["01110", "10001", "10001", "10001", "10101", "10010", "01101"]),
    ('R', ["11110", "10001", "10001", "11110", "10100", "10010", "10001"]),
    ('S', ["01111", "10000", "10000", "01110", "00001", "00001", "11110"]),
    ('T', ["11111", "00100", "00100", "00100", "00100", "00100", "00100"]),
    ('U', ["10001", "10001", "10001", "10001", "10001", "10001", "01110"]),
    ('V', ["10001", "10001", "10001", "10001", "10001", "01010", "00100"]),
    ('W', ["10001", "10001", "10001", "10101", "10101", "10101", "01010"]),
    ('X', ["10001", "10001", "01010", "00100", "01010", "10001", "10001"]),
    ('Y', ["10001", "10001", "01010", "00100", "00100", "00100", "00100"]),
    ('Z', ["11111", "00001", "00010", "00100", "01000", "10000", "11111"]),
    ('0', ["01110", "10001", "10011", "10101", "11001", "10001", "01110"]),
    ('1', ["00100", "01100", "00100", "00100", "00100", "00100", "01110"]),
    ('2', ["01110", "10001", "00001", "00010", "00100", "01000", "11111"]),
    ('3', ["11111", "00010", "00100", "00010", "00001", "10001", "01110"]),
    ('4', ["00010", "00110", "01010", "10010", "11111", "00010", "00010"]),
    ('5', ["11111", "10000", "11110", "00001", "00001", "10001", "01110"]),
    ('6', ["00110", "01000", "10000", "11110", "10001", "10001", "01110"]),
    ('7', ["11111", "00001", "00010", "00100", "01000", "01000", "01000"]),
    ('8', ["01110", "10001", "10001", "01110", "10001", "10001", "01110"]),
    ('9', ["01110", "10001", "10001", "01111", "00001", "00010", "01100"]),
];

/// Number of glyphs backed by the built-in stroke font.
pub const FONT_GLYPHS: usize = FONT_5X7.len();

/// Geometric variant of the stroke font. The anchor font is [`FontStyle::anchor`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FontStyle {
    pub id: String,
    /// Stroke radius as a fraction of the image side.
    pub stroke: f32,
    /// Horizontal shear per unit of height (positive leans right).
    pub slant: f32,
    /// Horizontal compression around the glyph center.
    pub x_scale: f32,
}

impl FontStyle {
    pub fn anchor() -> Self {
        Self {
            id: "anchor".into(),
            stroke: 0.06,
            slant: 0.0,
            x_scale: 1.0,
        }
    }

    /// A small family of fonts distinct from the anchor: bold, oblique, condensed.
    pub fn family() -> Vec<FontStyle> {
        vec![
            FontStyle {
                id: "bold".into(),
                stroke: 0.095,
                slant: 0.0,
                x_scale: 1.0,
            },
            FontStyle {
                id: "oblique".into(),
                stroke: 0.06,
                slant: 0.3,
                x_scale: 0.9,
            },
            FontStyle {
                id: "condensed".into(),
                stroke: 0.05,
                slant: 0.0,
                x_scale: 0.65,
            },
        ]
    }
}

/// Identifier of the `index`-th synthetic glyph.
pub fn glyph_id(index: usize) -> String {
    match FONT_5X7.get(index) {
        Some((ch, _)) => ch.to_string(),
        None => format!("p{index:03}"),
    }
}

type Segment = ((f32, f32), (f32, f32));

fn font_segments(rows: &[&str; 7]) -> Vec<Segment> {
    let on = |r: isize, c: isize| -> bool {
        (0..7).contains(&r) && (0..5).contains(&c) && rows[r as usize].as_bytes()[c as usize] == b'1'
    };
    let mut segs = Vec::new();
    for r in 0..7isize {
        for c in 0..5isize {
            if !on(r, c) {
                continue;
            }
            let p = (c as f32, r as f32);
            let mut linked = false;
            for (dr, dc) in [(0, 1), (1, 0), (1, 1), (1, -1), (0, -1), (-1, 0), (-1, -1), (-1, 1)] {
                if !on(r + dr, c + dc) {
                    continue;
                }
                let diagonal = dr != 0 && dc != 0;
                if diagonal && (on(r + dr, c) || on(r, c + dc)) {
                    continue;
                }
                linked = true;
                // each edge once
                if (dr, dc) > (0, 0) {
                    segs.push((p, ((c + dc) as f32, (r + dr) as f32)));
                }
            }
            if !linked {
                segs.push((p, p));
            }
        }
    }
    segs
}

fn random_segments(seed: u64, index: usize) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let strokes = rng.gen_range(2..=3);
    let mut segs = Vec::new();
    for _ in 0..strokes {
        let points = rng.gen_range(2..=3);
        let mut prev = (rng.gen_range(0.0..4.0), rng.gen_range(0.0..6.0));
        for _ in 1..points {
            let next = (rng.gen_range(0.0..4.0), rng.gen_range(0.0..6.0));
            segs.push((prev, next));
            prev = next;
        }
    }
    segs
}

fn dist_to_segment(p: (f32, f32), s: &Segment) -> f32 {
    let ((ax, ay), (bx, by)) = *s;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (ax + t * dx, ay + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Rasterizes glyph `index` (see [`glyph_id`]) at `size × size` in the given font.
///
/// `seed` only affects procedural glyphs past the built-in font.
pub fn render_glyph(index: usize, size: usize, font: &FontStyle, seed: u64) -> RawGlyph {
    let segs = match FONT_5X7.get(index) {
        Some((_, rows)) => font_segments(rows),
        None => random_segments(seed, index),
    };
    let s = size as f32;
    let margin = 0.2 * s;
    let step_x = (s - 2.0 * margin) / 4.0 * 0.75;
    let step_y = (s - 2.0 * margin) / 6.0;
    let cx = s / 2.0;
    let cy = s / 2.0;
    let to_image = |(c, r): (f32, f32)| -> (f32, f32) {
        let x = cx + (c - 2.0) * step_x * font.x_scale;
        let y = cy + (r - 3.0) * step_y;
        (x + font.slant * (cy - y), y)
    };
    let segs: Vec<Segment> = segs
        .iter()
        .map(|&(a, b)| (to_image(a), to_image(b)))
        .collect();
    let radius = font.stroke * s;
    let mut bitmap = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let p = (x as f32 + 0.5, y as f32 + 0.5);
            if segs.iter().any(|sg| dist_to_segment(p, sg) <= radius) {
                bitmap[y * size + x] = 255;
            }
        }
    }
    RawGlyph {
        bitmap,
        height: size,
        width: size,
        glyph_id: glyph_id(index),
        font_id: font.id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_glyph_is_distinct_and_non_degenerate() {
        let font = FontStyle::anchor();
        let glyphs: Vec<RawGlyph> = (0..FONT_GLYPHS).map(|i| render_glyph(i, 32, &font, 0)).collect();
        for g in &glyphs {
            let fg = g.bitmap.iter().filter(|&&v| v == 255).count();
            assert!(fg > 0 && fg < g.bitmap.len(), "{} degenerate", g.glyph_id);
        }
        for i in 0..glyphs.len() {
            for j in i + 1..glyphs.len() {
                assert_ne!(glyphs[i].bitmap, glyphs[j].bitmap, "{} == {}", glyphs[i].glyph_id, glyphs[j].glyph_id);
            }
        }
    }

    #[test]
    fn procedural_glyphs_are_seeded() {
        let font = FontStyle::anchor();
        let a = render_glyph(40, 32, &font, 1);
        assert_eq!(a.bitmap, render_glyph(40, 32, &font, 1).bitmap);
        assert_ne!(a.bitmap, render_glyph(40, 32, &font, 2).bitmap);
        assert_eq!(a.glyph_id, "p040");
    }

    #[test]
    fn fonts_change_the_shape() {
        let anchor = render_glyph(0, 32, &FontStyle::anchor(), 0);
        for font in FontStyle::family() {
            assert_ne!(render_glyph(0, 32, &font, 0).bitmap, anchor.bitmap, "{}", font.id);
        }
    }
}
