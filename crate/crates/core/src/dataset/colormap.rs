use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear map from a distance value in `[0, 1]` to an RGB color.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Colormap {
    points: Vec<(f32, [f32; 3])>,
}

impl Colormap {
    /// Control points must start at 0, end at 1 and be strictly increasing.
    pub fn new(points: Vec<(f32, [f32; 3])>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput(
                "a colormap needs at least two control points".into(),
            ));
        }
        if points[0].0 != 0.0 || points[points.len() - 1].0 != 1.0 {
            return Err(Error::InvalidInput(
                "colormap control points must span [0, 1]".into(),
            ));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidInput(
                "colormap control points must be strictly increasing".into(),
            ));
        }
        if points
            .iter()
            .flat_map(|(_, c)| c.iter())
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidInput("colormap colors must lie in [0,1]".into()));
        }
        Ok(Self { points })
    }

    pub fn constant(color: [f32; 3]) -> Self {
        Self {
            points: vec![(0.0, color), (1.0, color)],
        }
    }

    /// Black at 0 to white at 1.
    pub fn gray_ramp() -> Self {
        Self {
            points: vec![(0.0, [0.0; 3]), (1.0, [1.0; 3])],
        }
    }

    /// `n ≥ 2` control points; colors uniform in the RGB cube.
    ///
    /// Interior positions are drawn as squared uniforms so that more control points land
    /// at small distances, where diagonal-normalized distance values concentrate.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Self {
        let n = n.max(2);
        let mut interior: Vec<f32> = (0..n - 2)
            .map(|_| {
                let u: f32 = rng.gen_range(0.02..0.98);
                u * u
            })
            .collect();
        interior.sort_by(f32::total_cmp);
        interior.dedup();
        let mut positions = vec![0.0];
        positions.extend(interior.into_iter().filter(|p| *p > 0.0 && *p < 1.0));
        positions.push(1.0);
        let points = positions
            .into_iter()
            .map(|p| (p, [rng.gen(), rng.gen(), rng.gen()]))
            .collect();
        Self { points }
    }

    pub fn points(&self) -> &[(f32, [f32; 3])] {
        &self.points
    }

    /// Evaluates the map; inputs outside `[0, 1]` are clamped.
    pub fn eval(&self, t: f32) -> [f32; 3] {
        let t = t.clamp(0.0, 1.0);
        let idx = self
            .points
            .windows(2)
            .position(|w| t <= w[1].0)
            .unwrap_or(self.points.len() - 2);
        let (t0, c0) = self.points[idx];
        let (t1, c1) = self.points[idx + 1];
        let a = (t - t0) / (t1 - t0);
        [
            c0[0] + a * (c1[0] - c0[0]),
            c0[1] + a * (c1[1] - c0[1]),
            c0[2] + a * (c1[2] - c0[2]),
        ]
    }
}
