//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::Rng;
use texfx_core::Image3;

pub fn random_image<R: Rng>(rng: &mut R, h: usize, w: usize) -> Image3 {
    let bytes: Vec<u8> = (0..h * w * 3).map(|_| rng.gen()).collect();
    Image3::from_rgb8(h, w, &bytes).unwrap()
}

/// Random mask with at least one pixel of each class.
pub fn random_mask<R: Rng>(rng: &mut R, h: usize, w: usize) -> Vec<bool> {
    let density: f64 = rng.gen_range(0.05..0.95);
    let mut m: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(density)).collect();
    let a = rng.gen_range(0..h * w);
    let mut b = rng.gen_range(0..h * w);
    if a == b {
        b = (a + 1) % (h * w);
    }
    m[a] = true;
    m[b] = false;
    m
}

/// Mean squared error over every channel of every pixel, on the 0–255 scale.
pub fn psnr_ref(a: &Image3, b: &Image3) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for c in 0..3 {
        for y in 0..a.height() {
            for x in 0..a.width() {
                let d = a.get(c, y, x) as f64 * 255.0 - b.get(c, y, x) as f64 * 255.0;
                sum += d * d;
                n += 1.0;
            }
        }
    }
    let mse = sum / n;
    if mse == 0.0 {
        100.0
    } else {
        (10.0 * (255.0 * 255.0 / mse).log10()).min(100.0)
    }
}

fn gray_at(img: &Image3, y: usize, x: usize) -> f64 {
    (img.get(0, y, x) as f64 + img.get(1, y, x) as f64 + img.get(2, y, x) as f64) / 3.0 * 255.0
}

/// Mean over all 8×8 windows, each scored with two-pass population moments.
pub fn ssim_ref(a: &Image3, b: &Image3) -> f64 {
    let (c1, c2) = (6.5025, 58.5225);
    let k = 8;
    let mut total = 0.0;
    let mut windows = 0.0;
    for r in 0..=a.height() - k {
        for c in 0..=a.width() - k {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for y in r..r + k {
                for x in c..c + k {
                    xs.push(gray_at(a, y, x));
                    ys.push(gray_at(b, y, x));
                }
            }
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let mut vx = 0.0;
            let mut vy = 0.0;
            let mut cov = 0.0;
            for i in 0..xs.len() {
                vx += (xs[i] - mx) * (xs[i] - mx);
                vy += (ys[i] - my) * (ys[i] - my);
                cov += (xs[i] - mx) * (ys[i] - my);
            }
            vx /= n;
            vy /= n;
            cov /= n;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            windows += 1.0;
        }
    }
    total / windows
}

/// For every pixel, the distance to the nearest pixel of the other class, found by
/// checking every pair. Returns `(to_background, to_foreground)`; each is 0 on the
/// class it measures from.
pub fn brute_distances(mask: &[bool], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut to_bg = vec![0.0; h * w];
    let mut to_fg = vec![0.0; h * w];
    for p in 0..h * w {
        let mut best = i64::MAX;
        for q in 0..h * w {
            if mask[q] != mask[p] {
                let dy = (p / w) as i64 - (q / w) as i64;
                let dx = (p % w) as i64 - (q % w) as i64;
                best = best.min(dy * dy + dx * dx);
            }
        }
        let d = (best as f64).sqrt();
        if mask[p] {
            to_bg[p] = d;
        } else {
            to_fg[p] = d;
        }
    }
    (to_bg, to_fg)
}
