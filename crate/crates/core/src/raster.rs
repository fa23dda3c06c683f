//! Floating-point images and 8-bit PNG IO.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image size mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize, usize), (usize, usize, usize)),
    #[error("factor {factor} does not divide {width}x{height}")]
    BadFactor { factor: usize, width: usize, height: usize },
    #[error("png error for {path}: {source}")]
    Png { path: String, source: image::ImageError },
}

/// Row-major image with interleaved channels, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn filled(width: usize, height: usize, value: &[f64]) -> Self {
        let mut data = Vec::with_capacity(width * height * value.len());
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self { width, height, channels: value.len(), data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    /// The first `n` channels.
    pub fn take_channels(&self, n: usize) -> Image {
        let mut out = Image::new(self.width, self.height, n);
        for (dst, src) in out.data.chunks_exact_mut(n).zip(self.data.chunks_exact(self.channels)) {
            dst.copy_from_slice(&src[..n]);
        }
        out
    }

    /// Exact `factor × factor` box means.
    pub fn box_downsample(&self, factor: usize) -> Result<Image, RasterError> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(RasterError::BadFactor { factor, width: self.width, height: self.height });
        }
        let (w, h, c) = (self.width / factor, self.height / factor, self.channels);
        let mut out = Image::new(w, h, c);
        let norm = 1.0 / (factor * factor) as f64;
        for y in 0..h {
            for x in 0..w {
                let dst = &mut out.data[(y * w + x) * c..(y * w + x + 1) * c];
                for yy in y * factor..(y + 1) * factor {
                    for xx in x * factor..(x + 1) * factor {
                        for (d, s) in dst.iter_mut().zip(self.pixel(yy, xx)) {
                            *d += s;
                        }
                    }
                }
                dst.iter_mut().for_each(|d| *d *= norm);
            }
        }
        Ok(out)
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64, RasterError> {
        if self.shape() != other.shape() {
            return Err(RasterError::Shape(self.shape(), other.shape()));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.data.len().max(1) as f64)
    }

    /// Straight clamp-and-quantize to 8 bits, no transfer curve.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Self {
        Self { width, height, channels, data: bytes.iter().map(|&b| b as f64 / 255.0).collect() }
    }

    /// Write as 8-bit RGB or RGBA PNG (1 and 2 channel images are written
    /// as gray and gray-alpha).
    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            2 => image::ExtendedColorType::La8,
            3 => image::ExtendedColorType::Rgb8,
            _ => image::ExtendedColorType::Rgba8,
        };
        let bytes = if self.channels > 4 { self.take_channels(4).to_u8() } else { self.to_u8() };
        image::save_buffer_with_format(path, &bytes, self.width as u32, self.height as u32, color, image::ImageFormat::Png)
            .map_err(|source| RasterError::Png { path: path.display().to_string(), source })
    }

    /// Load a PNG as RGBA in `[0, 1]`.
    pub fn load_rgba(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path).map_err(|source| RasterError::Png { path: path.display().to_string(), source })?;
        let rgba = img.to_rgba8();
        Ok(Self::from_u8(rgba.width() as usize, rgba.height() as usize, 4, rgba.as_raw()))
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
