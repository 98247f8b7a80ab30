use std::cmp::Ordering;

use candle_core::{DType, Tensor};

use crate::dataset::{preprocess_mask, GlyphImage};
use crate::error::{Error, Result};
use crate::image::Image3;
use crate::net::{ContentEncoder, ContentFeature, StyleFeature, TransferNet};

/// Accepts either a plain black-and-white glyph (any image whose three planes are equal),
/// which is binarized at one half and lifted to the three-plane form, or an image that
/// already satisfies the three-plane invariants.
pub fn glyph_input(img: &Image3) -> Result<GlyphImage> {
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let gray = r.iter().zip(g).zip(b).all(|((a, b1), c)| a == b1 && b1 == c);
    if gray {
        let mask: Vec<bool> = r.iter().map(|&v| v >= 0.5).collect();
        return preprocess_mask(&mask, img.height(), img.width());
    }
    let glyph = GlyphImage(img.clone());
    glyph
        .check_invariants()
        .map_err(|e| Error::InvalidInput(format!("not a glyph image: {e}")))?;
    Ok(glyph)
}

/// Re-derives the distance planes from the thresholded first plane of a predicted glyph.
/// Falls back to the raw prediction when the mask is empty or full.
fn snap(pred: Image3) -> Image3 {
    let mask: Vec<bool> = pred.plane(0).iter().map(|&v| v >= 0.5).collect();
    match preprocess_mask(&mask, pred.height(), pred.width()) {
        Ok(g) => g.0,
        Err(_) => pred,
    }
}

fn single(net: &TransferNet, img: &Image3) -> Result<Tensor> {
    img.to_tensor(net.dtype(), net.device())
}

pub fn stylize(net: &TransferNet, glyph: &GlyphImage, style: &Image3) -> Result<Image3> {
    if !glyph.0.same_size(style) {
        return Err(Error::Shape(format!(
            "glyph {}x{} and style {}x{} differ",
            glyph.0.height(),
            glyph.0.width(),
            style.height(),
            style.width()
        )));
    }
    let c = net.encode_content(&single(net, &glyph.0)?, ContentEncoder::Glyph)?;
    let s = net.encode_style(&single(net, style)?)?;
    stylize_with_features(net, &c, &s)
}

pub fn stylize_with_features(net: &TransferNet, c: &ContentFeature, s: &StyleFeature) -> Result<Image3> {
    Image3::from_tensor(&net.generate_style(c, s)?)
}

pub fn destylize(net: &TransferNet, style: &Image3) -> Result<Image3> {
    let c = net.encode_content(&single(net, style)?, ContentEncoder::Styled)?;
    Image3::from_tensor(&net.generate_glyph(&c)?)
}

fn feature_values(s: &StyleFeature) -> Result<Vec<f64>> {
    Ok(s.0.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?)
}

/// Decodes `c` with the convex combination of `styles`.
///
/// Terms are summed in a canonical order (by feature values, then weight) with zero
/// weights skipped, so a unit weight reproduces that style exactly and reordering the
/// input never changes a bit of the output.
pub fn interpolate_styles(net: &TransferNet, c: &ContentFeature, styles: &[(StyleFeature, f64)]) -> Result<Image3> {
    if styles.is_empty() {
        return Err(Error::InvalidInput("no styles to interpolate".into()));
    }
    if styles.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
    }
    let total: f64 = styles.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!("weights sum to {total}, expected 1")));
    }
    let dims = styles[0].0 .0.dims().to_vec();
    if styles.iter().any(|(s, _)| s.0.dims() != dims.as_slice()) {
        return Err(Error::Shape("style features differ in shape".into()));
    }
    let mut keyed = Vec::new();
    for (s, w) in styles.iter().filter(|(_, w)| *w > 0.0) {
        keyed.push((feature_values(s)?, *w, s));
    }
    keyed.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(a.1.total_cmp(&b.1))
    });
    let mut acc: Option<Tensor> = None;
    for (_, w, s) in keyed {
        let term = (&s.0 * w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => (a + term)?,
        });
    }
    let mixed = StyleFeature(acc.expect("at least one positive weight"));
    stylize_with_features(net, c, &mixed)
}

/// Renders `text` (a glyph in the anchor font) in the font and effect of `style`.
///
/// The effect model destylizes `style` into its glyph, the font model redraws `text` in
/// that glyph's font, and the effect model stylizes the result with `style`.
pub fn font_effect_pipeline(text: &GlyphImage, style: &Image3, font_model: &TransferNet, effect_model: &TransferNet) -> Result<Image3> {
    if !text.0.same_size(style) {
        return Err(Error::Shape("text and style images differ in resolution".into()));
    }
    let reference = snap(destylize(effect_model, style)?);
    let c = font_model.encode_content(&single(font_model, &text.0)?, ContentEncoder::Glyph)?;
    let s = font_model.encode_style(&single(font_model, &reference)?)?;
    let redrawn = GlyphImage(snap(stylize_with_features(font_model, &c, &s)?));
    stylize(effect_model, &redrawn, style)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use candle_core::Device;

    fn net(seed: u64) -> TransferNet {
        let cfg = NetConfig {
            base_channels: 4,
            content_channels: 8,
            style_channels: 4,
            seed,
            ..NetConfig::default()
        };
        TransferNet::new(cfg, DType::F32, &Device::Cpu).unwrap()
    }

    fn noise(seed: u64) -> Image3 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image3::from_planar(16, 16, (0..768).map(|_| rng.gen()).collect()).unwrap()
    }

    fn square_glyph() -> GlyphImage {
        let mask: Vec<bool> = (0..256).map(|i| (4..12).contains(&(i / 16)) && (5..11).contains(&(i % 16))).collect();
        preprocess_mask(&mask, 16, 16).unwrap()
    }

    #[test]
    fn interpolation_endpoints_and_symmetry() {
        let n = net(1);
        let g = square_glyph();
        let c = n
            .encode_content(&g.0.to_tensor(DType::F32, &Device::Cpu).unwrap(), ContentEncoder::Glyph)
            .unwrap();
        let feats: Vec<StyleFeature> = (0..4)
            .map(|i| n.encode_style(&noise(i).to_tensor(DType::F32, &Device::Cpu).unwrap()).unwrap())
            .collect();
        let alone = stylize_with_features(&n, &c, &feats[2]).unwrap();
        let one_hot: Vec<_> = feats.iter().cloned().zip([0.0, 0.0, 1.0, 0.0]).collect();
        assert_eq!(interpolate_styles(&n, &c, &one_hot).unwrap(), alone);

        let twin = vec![(feats[2].clone(), 0.5), (feats[2].clone(), 0.5)];
        assert_eq!(interpolate_styles(&n, &c, &twin).unwrap(), alone);

        let mixed: Vec<_> = feats.iter().cloned().zip([0.1, 0.2, 0.3, 0.4]).collect();
        let mut reversed = mixed.clone();
        reversed.reverse();
        reversed.swap(0, 2);
        assert_eq!(
            interpolate_styles(&n, &c, &mixed).unwrap(),
            interpolate_styles(&n, &c, &reversed).unwrap()
        );

        let bad: Vec<_> = feats.iter().cloned().zip([0.5, 0.2, 0.2, 0.2]).collect();
        assert!(interpolate_styles(&n, &c, &bad).is_err());
    }

    #[test]
    fn pipeline_preserves_size() {
        let out = font_effect_pipeline(&square_glyph(), &noise(9), &net(2), &net(3)).unwrap();
        assert_eq!((out.height(), out.width()), (16, 16));
        assert!(font_effect_pipeline(&square_glyph(), &Image3::zeros(24, 24), &net(2), &net(3)).is_err());
    }

    #[test]
    fn glyph_input_accepts_plain_and_three_plane() {
        let g = square_glyph();
        let plain = Image3::from_planar(16, 16, g.0.plane(0).repeat(3)).unwrap();
        assert_eq!(glyph_input(&plain).unwrap(), g);
        assert_eq!(glyph_input(&g.0).unwrap(), g);
        assert!(glyph_input(&noise(0)).is_err());
    }

    #[test]
    fn stylize_is_deterministic_and_size_checked() {
        let n = net(4);
        let a = stylize(&n, &square_glyph(), &noise(1)).unwrap();
        let b = stylize(&n, &square_glyph(), &noise(1)).unwrap();
        assert_eq!(a, b);
        assert!(stylize(&n, &square_glyph(), &Image3::zeros(24, 24)).is_err());
        assert_eq!(destylize(&n, &noise(2)).unwrap().height(), 16);
    }
}
