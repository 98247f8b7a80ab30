//! Pixel metrics on the 0–255 scale.

use crate::error::{Error, Result};
use crate::image::Image3;

/// Returned for identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_C1: f64 = 6.5025;
pub const SSIM_C2: f64 = 58.5225;
pub const SSIM_WINDOW: usize = 8;

fn check_same(a: &Image3, b: &Image3) -> Result<()> {
    if !a.same_size(b) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// PSNR of two value slices already on the 0–255 scale.
pub fn psnr_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("{} vs {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP))
}

/// `10·log10(255² / MSE)` over all channels; identical images give [`PSNR_CAP`].
pub fn psnr(a: &Image3, b: &Image3) -> Result<f64> {
    check_same(a, b)?;
    let scale = |img: &Image3| img.data().iter().map(|&v| v as f64 * 255.0).collect::<Vec<_>>();
    psnr_values(&scale(a), &scale(b))
}

/// Channel-averaged intensity on the 0–255 scale.
pub fn gray(img: &Image3) -> Vec<f64> {
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    (0..img.pixels())
        .map(|i| (r[i] as f64 + g[i] as f64 + b[i] as f64) / 3.0 * 255.0)
        .collect()
}

fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cov: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Summed-area table with a zero border: `(h + 1) × (w + 1)`.
fn integral(v: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut s = vec![0.0; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut row = 0.0;
        for c in 0..w {
            row += v[r * w + c];
            s[(r + 1) * (w + 1) + c + 1] = s[r * (w + 1) + c + 1] + row;
        }
    }
    s
}

fn window_sum(s: &[f64], w: usize, r: usize, c: usize, k: usize) -> f64 {
    let w1 = w + 1;
    s[(r + k) * w1 + c + k] - s[r * w1 + c + k] - s[(r + k) * w1 + c] + s[r * w1 + c]
}

/// Mean SSIM over every `8×8` window (stride 1) of two gray planes, with population moments.
pub fn ssim_gray(x: &[f64], y: &[f64], height: usize, width: usize) -> Result<f64> {
    let k = SSIM_WINDOW;
    if height < k || width < k {
        return Err(Error::Shape(format!("{height}x{width} is smaller than the {k}x{k} window")));
    }
    if x.len() != height * width || y.len() != height * width {
        return Err(Error::Shape("plane size does not match dimensions".into()));
    }
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (sx, sy) = (integral(x, height, width), integral(y, height, width));
    let (sxx, syy, sxy) = (
        integral(&xx, height, width),
        integral(&yy, height, width),
        integral(&xy, height, width),
    );
    let n = (k * k) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=height - k {
        for c in 0..=width - k {
            let mx = window_sum(&sx, width, r, c, k) / n;
            let my = window_sum(&sy, width, r, c, k) / n;
            let vx = (window_sum(&sxx, width, r, c, k) / n - mx * mx).max(0.0);
            let vy = (window_sum(&syy, width, r, c, k) / n - my * my).max(0.0);
            let cov = window_sum(&sxy, width, r, c, k) / n - mx * my;
            total += ssim_from_moments(mx, my, vx, vy, cov);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Windowed SSIM of the channel-averaged images.
pub fn ssim(a: &Image3, b: &Image3) -> Result<f64> {
    check_same(a, b)?;
    ssim_gray(&gray(a), &gray(b), a.height(), a.width())
}

/// SSIM with a single window covering the whole image.
pub fn ssim_global_gray(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    Ok(ssim_from_moments(mx, my, vx, vy, cov))
}

pub fn ssim_global(a: &Image3, b: &Image3) -> Result<f64> {
    check_same(a, b)?;
    ssim_global_gray(&gray(a), &gray(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let a = vec![10.0; 64];
        let b = vec![11.0; 64];
        assert!((psnr_values(&a, &b).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-12);
        assert!((psnr_values(&vec![0.0; 9], &vec![255.0; 9]).unwrap()).abs() < 1e-12);
        assert_eq!(psnr_values(&a, &a).unwrap(), PSNR_CAP);
        let img = Image3::filled(8, 8, [0.2, 0.4, 0.6]);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP);
        assert!(psnr(&img, &Image3::zeros(8, 9)).is_err());
    }

    #[test]
    fn ssim_closed_forms() {
        let black = Image3::zeros(16, 16);
        let white = Image3::filled(16, 16, [1.0, 1.0, 1.0]);
        let expect = SSIM_C1 / (255.0 * 255.0 + SSIM_C1);
        assert!((ssim_global(&black, &white).unwrap() - expect).abs() < 1e-12);
        assert!((ssim(&black, &white).unwrap() - expect).abs() < 1e-12);
        assert!((ssim(&white, &white).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&Image3::zeros(7, 7), &Image3::zeros(7, 7)).is_err());
    }
}
