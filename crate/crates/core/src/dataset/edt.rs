//! Exact Euclidean distance transform.
//!
//! Separable lower-envelope-of-parabolas algorithm (Felzenszwalb & Huttenlocher): one
//! pass along columns, one along rows. Squared distances of integer grids stay exact in
//! `f64`, so the result equals a brute-force search bit for bit.

// Large enough to never win a minimum, small enough that `q²` additions stay finite.
const FAR: f64 = 1e20;

/// Squared distance from each pixel to the nearest pixel with `seed[i] == true`.
///
/// Pixels that are seeds get 0. If there are no seeds at all every value is `FAR`.
pub fn squared_distance(seed: &[bool], height: usize, width: usize) -> Vec<f64> {
    assert_eq!(seed.len(), height * width, "seed mask size");
    let mut grid: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { FAR }).collect();

    let mut line = vec![0.0; height.max(width)];
    let mut out = vec![0.0; height.max(width)];
    let mut scratch = Envelope::with_capacity(height.max(width));

    for x in 0..width {
        for y in 0..height {
            line[y] = grid[y * width + x];
        }
        scratch.transform(&line[..height], &mut out[..height]);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        line[..width].copy_from_slice(row);
        scratch.transform(&line[..width], &mut out[..width]);
        row.copy_from_slice(&out[..width]);
    }
    grid
}

struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            vertices: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }

    /// 1-D squared distance transform of a sampled function `f`.
    fn transform(&mut self, f: &[f64], d: &mut [f64]) {
        let n = f.len();
        if n == 0 {
            return;
        }
        let v = &mut self.vertices;
        let z = &mut self.bounds;
        let mut k = 0usize;
        v[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for q in 1..n {
            let qf = q as f64;
            let mut s;
            loop {
                let pf = v[k] as f64;
                s = ((f[q] + qf * qf) - (f[v[k]] + pf * pf)) / (2.0 * qf - 2.0 * pf);
                // z[0] is -inf, so this stops at k == 0 at the latest
                if s <= z[k] {
                    k -= 1;
                } else {
                    break;
                }
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        k = 0;
        for (q, out) in d.iter_mut().enumerate() {
            let qf = q as f64;
            while z[k + 1] < qf {
                k += 1;
            }
            let p = v[k];
            let diff = qf - p as f64;
            *out = diff * diff + f[p];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(seed: &[bool], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![FAR; h * w];
        for y in 0..h {
            for x in 0..w {
                for sy in 0..h {
                    for sx in 0..w {
                        if seed[sy * w + sx] {
                            let dy = y as f64 - sy as f64;
                            let dx = x as f64 - sx as f64;
                            out[y * w + x] = out[y * w + x].min(dy * dy + dx * dx);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn single_seed_gives_squared_radius() {
        let mut seed = vec![false; 25];
        seed[12] = true;
        let d = squared_distance(&seed, 5, 5);
        assert_eq!(d[0], 8.0);
        assert_eq!(d[12], 0.0);
        assert_eq!(d[7], 1.0);
        assert_eq!(d[24], 8.0);
    }

    #[test]
    fn matches_brute_force_on_irregular_shapes() {
        let h = 7;
        let w = 11;
        let seed: Vec<bool> = (0..h * w).map(|i| (i * 37 + i / 3) % 11 == 0).collect();
        assert_eq!(squared_distance(&seed, h, w), brute(&seed, h, w));
    }

    #[test]
    fn tie_heavy_pattern_matches_brute_force() {
        let h = 6;
        let w = 6;
        let seed: Vec<bool> = (0..h * w).map(|i| (i / w + i % w) % 4 == 0).collect();
        assert_eq!(squared_distance(&seed, h, w), brute(&seed, h, w));
    }
}
