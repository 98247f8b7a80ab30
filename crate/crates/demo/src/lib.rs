//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Images cross the boundary as row-major RGBA bytes, the layout of canvas `ImageData`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use texfx_core::dataset::{preprocess_mask, StyleRecipe};
use texfx_core::eval::{psnr, ssim};
use texfx_core::Image3;
use wasm_bindgen::prelude::*;

fn check_len(rgba: &[u8], width: usize, height: usize) -> Result<(), String> {
    if rgba.len() != width * height * 4 {
        return Err(format!("expected {} RGBA bytes for {width}x{height}, got {}", width * height * 4, rgba.len()));
    }
    Ok(())
}

/// Pixels whose red channel is at least half intensity belong to the glyph.
pub fn mask_from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<Vec<bool>, String> {
    check_len(rgba, width, height)?;
    Ok(rgba.chunks_exact(4).map(|p| p[0] >= 128).collect())
}

pub fn image_from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<Image3, String> {
    check_len(rgba, width, height)?;
    let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    Image3::from_rgb8(height, width, &rgb).map_err(|e| e.to_string())
}

pub fn image_to_rgba(img: &Image3) -> Vec<u8> {
    img.to_rgb8()
        .chunks_exact(3)
        .flat_map(|p| [p[0], p[1], p[2], 255])
        .collect()
}

/// Three-plane glyph image: binary mask, inside distance, outside distance.
pub fn glyph_planes(rgba: &[u8], width: usize, height: usize) -> Result<Vec<u8>, String> {
    let mask = mask_from_rgba(rgba, width, height)?;
    let glyph = preprocess_mask(&mask, height, width).map_err(|e| e.to_string())?;
    Ok(image_to_rgba(&glyph.0))
}

/// Renders the drawn glyph with the synthetic effect selected by `seed`.
pub fn synth_effect(rgba: &[u8], width: usize, height: usize, seed: u32) -> Result<Vec<u8>, String> {
    let mask = mask_from_rgba(rgba, width, height)?;
    let glyph = preprocess_mask(&mask, height, width).map_err(|e| e.to_string())?;
    let recipe = StyleRecipe::random(&mut ChaCha8Rng::seed_from_u64(seed as u64));
    Ok(image_to_rgba(&recipe.render(&glyph)))
}

/// `[psnr_db, ssim]` of two images of the same size.
pub fn compare_images(a: &[u8], b: &[u8], width: usize, height: usize) -> Result<Vec<f64>, String> {
    let a = image_from_rgba(a, width, height)?;
    let b = image_from_rgba(b, width, height)?;
    Ok(vec![
        psnr(&a, &b).map_err(|e| e.to_string())?,
        ssim(&a, &b).map_err(|e| e.to_string())?,
    ])
}

#[wasm_bindgen(js_name = glyphPlanes)]
pub fn glyph_planes_js(rgba: &[u8], width: usize, height: usize) -> Result<Vec<u8>, JsError> {
    glyph_planes(rgba, width, height).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = synthEffect)]
pub fn synth_effect_js(rgba: &[u8], width: usize, height: usize, seed: u32) -> Result<Vec<u8>, JsError> {
    synth_effect(rgba, width, height, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = compareImages)]
pub fn compare_images_js(a: &[u8], b: &[u8], width: usize, height: usize) -> Result<Vec<f64>, JsError> {
    compare_images(a, b, width, height).map_err(|e| JsError::new(&e))
}
