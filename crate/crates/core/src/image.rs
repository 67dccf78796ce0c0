//! Minimal owned image type: row-major, channel-interleaved `f32` pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    Gray,
    Rgb,
}

impl ColorMode {
    pub fn channels(self) -> usize {
        match self {
            ColorMode::Gray => 1,
            ColorMode::Rgb => 3,
        }
    }

    pub fn from_channels(channels: usize) -> Option<Self> {
        match channels {
            1 => Some(ColorMode::Gray),
            3 => Some(ColorMode::Rgb),
            _ => None,
        }
    }
}

/// Pixel intensities nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    mode: ColorMode,
    data: Vec<f32>,
}

impl Image {
    pub fn from_vec(width: usize, height: usize, mode: ColorMode, data: Vec<f32>) -> Result<Self> {
        let expected = width * height * mode.channels();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{width}x{height}x{} = {expected} values", mode.channels()),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Image {
            width,
            height,
            mode,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, mode: ColorMode, value: f32) -> Self {
        Image {
            width,
            height,
            mode,
            data: vec![value; width * height * mode.channels()],
        }
    }

    /// Grayscale image from a function of `(x, y)`.
    pub fn gray_from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            mode: ColorMode::Gray,
            data,
        }
    }

    pub fn from_gray_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Image::from_vec(width, height, ColorMode::Gray, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mode(&self) -> ColorMode {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.mode.channels()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels() + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        let ch = self.channels();
        self.data[(y * self.width + x) * ch + c] = v;
    }

    /// Luma conversion with weights 0.299 / 0.587 / 0.114. Gray images are
    /// returned unchanged.
    pub fn to_gray(&self) -> Image {
        match self.mode {
            ColorMode::Gray => self.clone(),
            ColorMode::Rgb => {
                let data = self
                    .data
                    .chunks_exact(3)
                    .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                    .collect();
                Image {
                    width: self.width,
                    height: self.height,
                    mode: ColorMode::Gray,
                    data,
                }
            }
        }
    }

    /// Bilinear resize with pixel-center alignment and clamped borders.
    /// Resizing to the current size returns an identical image.
    pub fn resize(&self, new_width: usize, new_height: usize) -> Image {
        if new_width == self.width && new_height == self.height {
            return self.clone();
        }
        let ch = self.channels();
        let mut out = Vec::with_capacity(new_width * new_height * ch);
        let sx = self.width as f32 / new_width as f32;
        let sy = self.height as f32 / new_height as f32;
        for y in 0..new_height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            for x in 0..new_width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                for c in 0..ch {
                    out.push(self.sample_bilinear(fx, fy, c));
                }
            }
        }
        Image {
            width: new_width,
            height: new_height,
            mode: self.mode,
            data: out,
        }
    }

    /// Bilinear sample at continuous pixel coordinates; callers keep
    /// `fx`, `fy` within `[0, width-1] x [0, height-1]`.
    #[inline]
    pub fn sample_bilinear(&self, fx: f32, fy: f32, c: usize) -> f32 {
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = fx - x0 as f32;
        let ay = fy - y0 as f32;
        let top = self.get(x0, y0, c) * (1.0 - ax) + self.get(x1, y0, c) * ax;
        let bottom = self.get(x0, y1, c) * (1.0 - ax) + self.get(x1, y1, c) * ax;
        top * (1.0 - ay) + bottom * ay
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::InvalidConfig(format!(
                "crop ({x},{y},{w},{h}) outside {}x{}",
                self.width, self.height
            )));
        }
        let ch = self.channels();
        let mut data = Vec::with_capacity(w * h * ch);
        for yy in y..y + h {
            let start = (yy * self.width + x) * ch;
            data.extend_from_slice(&self.data[start..start + w * ch]);
        }
        Ok(Image {
            width: w,
            height: h,
            mode: self.mode,
            data,
        })
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Snap every value onto the 8-bit grid `k / 255` so that PNG storage
    /// is lossless.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            *v = quantize(*v) as f32 / 255.0;
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    /// Pixels as a channel-major (`C x H x W`) vector, the layout the
    /// network consumes.
    pub fn to_chw(&self) -> Vec<f32> {
        let ch = self.channels();
        if ch == 1 {
            return self.data.clone();
        }
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * ch];
        for (i, px) in self.data.chunks_exact(ch).enumerate() {
            for c in 0..ch {
                out[c * plane + i] = px[c];
            }
        }
        out
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
