//! Planar three-channel float images and their PNG / tensor conversions.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// A three-plane image stored channel-major (`C × H × W`), values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image3 {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image3 {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn from_planar(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "planar buffer of {} values does not fit 3x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, color: [f32; 3]) -> Self {
        let mut img = Self::zeros(height, width);
        for (c, value) in color.iter().enumerate() {
            img.plane_mut(c).fill(*value);
        }
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.set(c, y, x, v);
        }
    }

    pub fn same_size(&self, other: &Image3) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Square crop with top-left corner at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Image3> {
        if top + size > self.height || left + size > self.width {
            return Err(Error::Shape(format!(
                "crop {size}px at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Image3::zeros(size, size);
        for c in 0..3 {
            for y in 0..size {
                let src = ((c * self.height) + top + y) * self.width + left;
                let dst = (c * size + y) * size;
                out.data[dst..dst + size].copy_from_slice(&self.data[src..src + size]);
            }
        }
        Ok(out)
    }

    /// Mean absolute difference over all planes.
    pub fn mean_abs_diff(&self, other: &Image3) -> Result<f64> {
        if !self.same_size(other) {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.pixels();
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                out.push(quantize(self.data[c * n + i]));
            }
        }
        out
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let n = height * width;
        if bytes.len() != 3 * n {
            return Err(Error::Shape(format!(
                "rgb buffer of {} bytes does not fit {height}x{width}",
                bytes.len()
            )));
        }
        let mut img = Image3::zeros(height, width);
        for i in 0..n {
            for c in 0..3 {
                img.data[c * n + i] = bytes[3 * i + c] as f32 / 255.0;
            }
        }
        Ok(img)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let buf = ::image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .ok_or_else(|| Error::Shape("rgb buffer size".into()))?;
        buf.write_to(&mut std::io::Cursor::new(&mut out), ::image::ImageFormat::Png)?;
        Ok(out)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = ::image::load_from_memory_with_format(bytes, ::image::ImageFormat::Png)?.to_rgb8();
        Self::from_rgb8(img.height() as usize, img.width() as usize, img.as_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_png(&bytes)
    }

    /// `(1, 3, H, W)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (1, 3, self.height, self.width), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Stacks images of identical size into a `(B, 3, H, W)` tensor.
    pub fn batch_tensor(images: &[&Image3], dtype: DType, device: &Device) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if !img.same_size(first) {
                return Err(Error::Shape("images in a batch must share a size".into()));
            }
            data.extend_from_slice(&img.data);
        }
        let t = Tensor::from_vec(data, (images.len(), 3, first.height, first.width), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Splits a `(B, 3, H, W)` tensor into images.
    pub fn from_batch_tensor(t: &Tensor) -> Result<Vec<Image3>> {
        let (b, c, h, w) = t.dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        flat.chunks(3 * h * w)
            .take(b)
            .map(|chunk| Image3::from_planar(h, w, chunk.to_vec()))
            .collect()
    }

    pub fn from_tensor(t: &Tensor) -> Result<Image3> {
        let t = if t.rank() == 3 { t.unsqueeze(0)? } else { t.clone() };
        Self::from_batch_tensor(&t)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Shape("empty tensor".into()))
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_quantized_values() {
        let mut img = Image3::zeros(4, 5);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 256) as f32 / 255.0;
        }
        let back = Image3::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn crop_out_of_bounds_is_rejected() {
        let img = Image3::zeros(8, 8);
        assert!(img.crop(4, 4, 5).is_err());
        assert_eq!(img.crop(4, 4, 4).unwrap().height(), 4);
    }

    #[test]
    fn tensor_round_trip() {
        let img = Image3::filled(2, 3, [0.25, 0.5, 1.0]);
        let t = Image3::batch_tensor(&[&img, &img], DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims4().unwrap(), (2, 3, 2, 3));
        let back = Image3::from_batch_tensor(&t).unwrap();
        assert_eq!(back, vec![img.clone(), img]);
    }
}
