//! Float pixel grids with 8-bit PNG input and output.

use std::io::{Cursor, Write};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};

/// Row-major interleaved pixels with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, &vec![0.0; channels])
    }

    pub fn filled(height: usize, width: usize, value: &[f32]) -> Self {
        let mut data = Vec::with_capacity(height * width * value.len());
        for _ in 0..height * width {
            data.extend_from_slice(value);
        }
        Self {
            height,
            width,
            channels: value.len(),
            data,
        }
    }

    pub fn from_fn<F>(height: usize, width: usize, channels: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize, &mut [f32]),
    {
        let mut r = Self::new(height, width, channels);
        for row in 0..height {
            for col in 0..width {
                f(row, col, r.pixel_mut(row, col));
            }
        }
        r
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Whether the last channel is alpha (2 or 4 channels).
    pub fn has_alpha(&self) -> bool {
        self.channels == 2 || self.channels == 4
    }

    /// Bilinear sample at fractional `(row, col)`; both axes clamp at the
    /// border.
    pub fn sample_clamped(&self, row: f64, col: f64, out: &mut [f32]) {
        let row = row.clamp(0.0, (self.height - 1) as f64);
        let col = col.clamp(0.0, (self.width - 1) as f64);
        let r0 = row.floor() as usize;
        let c0 = col.floor() as usize;
        let r1 = (r0 + 1).min(self.height - 1);
        let c1 = (c0 + 1).min(self.width - 1);
        let fr = (row - r0 as f64) as f32;
        let fc = (col - c0 as f64) as f32;
        blend4(self, [(r0, c0), (r0, c1), (r1, c0), (r1, c1)], fr, fc, out);
    }

    pub fn mean_abs_diff(&self, other: &Raster) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "raster shapes differ");
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        sum / self.data.len().max(1) as f64
    }

    pub fn from_dynamic(img: DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, bytes) = match img {
            DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
            DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
            DynamicImage::ImageRgba8(b) => (4, b.into_raw()),
            other if other.color().has_alpha() => (4, other.to_rgba8().into_raw()),
            other if other.color().channel_count() == 1 => (1, other.to_luma8().into_raw()),
            other => (3, other.to_rgb8().into_raw()),
        };
        Self {
            height: h,
            width: w,
            channels,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        Ok(Self::from_dynamic(image::open(path)?))
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        Ok(Self::from_dynamic(image::load_from_memory_with_format(
            bytes,
            image::ImageFormat::Png,
        )?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn write_png<W: Write>(&self, w: W) -> Result<()> {
        let color = match self.channels {
            1 => ExtendedColorType::L8,
            2 => ExtendedColorType::La8,
            3 => ExtendedColorType::Rgb8,
            4 => ExtendedColorType::Rgba8,
            n => {
                return Err(Error::ChannelMismatch(format!(
                    "cannot encode {n} channels as PNG"
                )))
            }
        };
        PngEncoder::new(w).write_image(
            &self.to_bytes(),
            self.width as u32,
            self.height as u32,
            color,
        )?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.write_png(&mut buf)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_png(file)
    }
}

#[inline]
pub(crate) fn blend4(r: &Raster, corners: [(usize, usize); 4], fr: f32, fc: f32, out: &mut [f32]) {
    let w = [
        (1.0 - fr) * (1.0 - fc),
        (1.0 - fr) * fc,
        fr * (1.0 - fc),
        fr * fc,
    ];
    for (ch, o) in out.iter_mut().enumerate().take(r.channels) {
        let mut acc = 0.0f32;
        for (k, &(row, col)) in corners.iter().enumerate() {
            acc += w[k] * r.data[(row * r.width + col) * r.channels + ch];
        }
        *o = acc.clamp(0.0, 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_preserves_quantized_values() {
        for channels in [1, 2, 3, 4] {
            let r = Raster::from_fn(5, 7, channels, |row, col, px| {
                for (k, v) in px.iter_mut().enumerate() {
                    *v = ((row * 7 + col + k * 3) % 256) as f32 / 255.0;
                }
            });
            let bytes = r.encode_png().unwrap();
            let back = Raster::decode_png(&bytes).unwrap();
            let expected_channels = if channels == 2 { 4 } else { channels };
            assert_eq!(back.channels, expected_channels);
            if channels != 2 {
                assert!(r.mean_abs_diff(&back) < 1e-6);
            }
        }
    }

    #[test]
    fn clamped_sampling() {
        let r = Raster::from_fn(2, 2, 1, |row, col, px| px[0] = (row * 2 + col) as f32 / 3.0);
        let mut out = [0.0];
        r.sample_clamped(0.5, 0.5, &mut out);
        assert!((out[0] - 0.5).abs() < 1e-6);
        r.sample_clamped(-3.0, 9.0, &mut out);
        assert!((out[0] - 1.0 / 3.0).abs() < 1e-6);
    }
}
