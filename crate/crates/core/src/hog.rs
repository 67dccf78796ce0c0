//! Histogram-of-oriented-gradients features.
//!
//! Pipeline: grayscale, bilinear resize to `s x s`, centered `(-1, 0, +1)`
//! differences with replicated borders, per-pixel magnitude/orientation,
//! magnitude-weighted votes split linearly between the two nearest bin
//! centers (bin `i` is centered on `i * 180/n` degrees, or `i * 360/n` when
//! signed), per-cell histograms, then overlapping blocks of `b x b` cells
//! normalized by `v / sqrt(|v|^2 + eps^2)`.
//!
//! Output order: blocks row-major, cells row-major within a block, bins by
//! increasing angle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ColorMode, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HogConfig {
    /// Side of the square the image is resized to, in pixels.
    pub resize_side: usize,
    /// Cell side in pixels.
    pub cell_size: usize,
    /// Block side in cells.
    pub block_size: usize,
    /// Overlap of neighboring blocks in cells.
    pub block_overlap: usize,
    pub num_bins: usize,
    pub signed_orientations: bool,
    pub epsilon: f64,
}

impl Default for HogConfig {
    /// `s = 100, c = 10, b = 2, o = 1, n = 12`, giving 3888 features.
    fn default() -> Self {
        HogConfig {
            resize_side: 100,
            cell_size: 10,
            block_size: 2,
            block_overlap: 1,
            num_bins: 12,
            signed_orientations: false,
            epsilon: 1e-5,
        }
    }
}

impl HogConfig {
    /// Same parameters with a different resize side.
    pub fn with_side(self, resize_side: usize) -> Self {
        HogConfig {
            resize_side,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.cell_size == 0 || self.resize_side == 0 {
            return bad("resize_side and cell_size must be positive".into());
        }
        if !self.resize_side.is_multiple_of(self.cell_size) {
            return bad(format!(
                "resize_side {} is not a multiple of cell_size {}",
                self.resize_side, self.cell_size
            ));
        }
        if self.block_size == 0 || self.block_overlap >= self.block_size {
            return bad(format!(
                "need block_size > block_overlap >= 0, got b={} o={}",
                self.block_size, self.block_overlap
            ));
        }
        if self.num_bins < 2 {
            return bad(format!("num_bins must be >= 2, got {}", self.num_bins));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        let cells = self.cells_per_side();
        if cells < self.block_size {
            return bad(format!(
                "{cells} cells per side cannot hold a block of {}",
                self.block_size
            ));
        }
        if !(cells - self.block_size).is_multiple_of(self.block_stride()) {
            return bad(format!(
                "block stride {} does not tile {cells} cells with blocks of {}",
                self.block_stride(),
                self.block_size
            ));
        }
        Ok(())
    }

    pub fn cells_per_side(&self) -> usize {
        self.resize_side / self.cell_size
    }

    pub fn block_stride(&self) -> usize {
        self.block_size - self.block_overlap
    }

    pub fn blocks_per_side(&self) -> usize {
        (self.cells_per_side() - self.block_size) / self.block_stride() + 1
    }

    /// Feature length `k`.
    pub fn dimension(&self) -> Result<usize> {
        self.validate()?;
        let blocks = self.blocks_per_side();
        Ok(blocks * blocks * self.block_size * self.block_size * self.num_bins)
    }

    fn angle_range(&self) -> f64 {
        if self.signed_orientations {
            360.0
        } else {
            180.0
        }
    }
}

/// Feature length for `config`; see [`HogConfig::dimension`].
pub fn dimension(config: &HogConfig) -> Result<usize> {
    config.dimension()
}

/// Per-cell orientation histograms, before block normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub cells_per_side: usize,
    pub num_bins: usize,
    /// `cells_per_side^2 * num_bins` values, cells row-major.
    pub bins: Vec<f64>,
}

impl CellGrid {
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cells_per_side + col) * self.num_bins;
        &self.bins[start..start + self.num_bins]
    }
}

/// Grayscale image resized to `s x s`, row-major, computed in f64.
fn prepare(image: &Image, config: &HogConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let (w, h) = (image.width(), image.height());
    if w < 2 || h < 2 {
        return Err(Error::DegenerateImage(format!("{w}x{h} image is smaller than 2x2")));
    }
    let px = image.data();
    let luma: Vec<f64> = match image.mode() {
        ColorMode::Gray => px.iter().map(|&v| v as f64).collect(),
        ColorMode::Rgb => px
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect(),
    };
    let s = config.resize_side;
    if w == s && h == s {
        return Ok(luma);
    }
    // bilinear, pixel centers aligned, coordinates clamped to the image
    let (sx, sy) = (w as f64 / s as f64, h as f64 / s as f64);
    let mut out = Vec::with_capacity(s * s);
    for y in 0..s {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ay = fy - y0 as f64;
        for x in 0..s {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let ax = fx - x0 as f64;
            let top = luma[y0 * w + x0] * (1.0 - ax) + luma[y0 * w + x1] * ax;
            let bottom = luma[y1 * w + x0] * (1.0 - ax) + luma[y1 * w + x1] * ax;
            out.push(top * (1.0 - ay) + bottom * ay);
        }
    }
    Ok(out)
}

/// Orientation histograms for every cell of the resized grayscale image.
pub fn cell_histograms(image: &Image, config: &HogConfig) -> Result<CellGrid> {
    let px = prepare(image, config)?;
    let side = config.resize_side;
    let at = |x: usize, y: usize| px[y * side + x];

    let n = config.num_bins;
    let cells = config.cells_per_side();
    let range = config.angle_range();
    let bin_width = range / n as f64;
    let mut bins = vec![0.0f64; cells * cells * n];

    for y in 0..side {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(side - 1);
        let cell_row = y / config.cell_size;
        for x in 0..side {
            let left = x.saturating_sub(1);
            let right = (x + 1).min(side - 1);
            let gx = at(right, y) - at(left, y);
            let gy = at(x, down) - at(x, up);
            let magnitude = (gx * gx + gy * gy).sqrt();
            if magnitude == 0.0 {
                continue;
            }
            let angle = fold_angle(gy.atan2(gx).to_degrees(), range);
            let pos = angle / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = (lo as usize) % n;
            let hi = (lo + 1) % n;
            let cell = cell_row * cells + x / config.cell_size;
            bins[cell * n + lo] += magnitude * (1.0 - frac);
            bins[cell * n + hi] += magnitude * frac;
        }
    }
    Ok(CellGrid {
        cells_per_side: cells,
        num_bins: n,
        bins,
    })
}

fn fold_angle(degrees: f64, range: f64) -> f64 {
    let a = degrees.rem_euclid(range);
    // rem_euclid can round up to exactly `range`
    if a >= range {
        0.0
    } else {
        a
    }
}

/// Block-normalized HOG descriptor of length `config.dimension()`.
pub fn extract_raw(image: &Image, config: &HogConfig) -> Result<Vec<f32>> {
    let grid = cell_histograms(image, config)?;
    Ok(normalize_blocks(&grid, config))
}

fn normalize_blocks(grid: &CellGrid, config: &HogConfig) -> Vec<f32> {
    let b = config.block_size;
    let stride = config.block_stride();
    let blocks = config.blocks_per_side();
    let eps2 = config.epsilon * config.epsilon;
    let mut out = Vec::with_capacity(blocks * blocks * b * b * grid.num_bins);
    let mut block = Vec::with_capacity(b * b * grid.num_bins);
    for by in 0..blocks {
        for bx in 0..blocks {
            block.clear();
            for cy in 0..b {
                for cx in 0..b {
                    block.extend_from_slice(grid.cell(by * stride + cy, bx * stride + cx));
                }
            }
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + eps2).sqrt();
            out.extend(block.iter().map(|v| (v / norm) as f32));
        }
    }
    out
}

/// A `k`-dimensional embedding; unit L2 norm when produced by
/// [`embed_prototype`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }
}

/// Unit-norm HOG embedding of a prototype image. Fails with
/// `DegeneratePrototype` when the image has no gradients at all.
pub fn embed_prototype(image: &Image, config: &HogConfig) -> Result<EmbeddingVector> {
    let raw = extract_raw(image, config)?;
    let norm = raw
        .iter()
        .map(|&v| v as f64 * v as f64)
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Err(Error::DegeneratePrototype(String::new()));
    }
    Ok(EmbeddingVector {
        values: raw.iter().map(|&v| (v as f64 / norm) as f32).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ColorMode;

    fn cfg(s: usize, c: usize, b: usize, o: usize, n: usize) -> HogConfig {
        HogConfig {
            resize_side: s,
            cell_size: c,
            block_size: b,
            block_overlap: o,
            num_bins: n,
            ..HogConfig::default()
        }
    }

    #[test]
    fn dimension_examples() {
        assert_eq!(cfg(100, 10, 2, 1, 12).dimension().unwrap(), 3888);
        assert_eq!(cfg(20, 10, 2, 1, 12).dimension().unwrap(), 48);
        assert_eq!(cfg(100, 10, 2, 0, 12).dimension().unwrap(), 1200);
    }

    #[test]
    fn invalid_configs_rejected() {
        // side not a multiple of the cell
        assert!(cfg(95, 10, 2, 1, 12).dimension().is_err());
        // 9 cells, stride 2, block 2: (9-2) % 2 != 0
        assert!(cfg(90, 10, 2, 0, 12).dimension().is_err());
        assert!(cfg(100, 10, 2, 2, 12).dimension().is_err());
        assert!(cfg(100, 10, 2, 1, 1).dimension().is_err());
        let c = HogConfig {
            epsilon: 0.0,
            ..HogConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn constant_image_gives_zero_vector() {
        let img = Image::filled(100, 100, ColorMode::Gray, 0.5);
        let raw = extract_raw(&img, &HogConfig::default()).unwrap();
        assert_eq!(raw.len(), 3888);
        assert!(raw.iter().all(|&v| v == 0.0));
        assert!(matches!(
            embed_prototype(&img, &HogConfig::default()),
            Err(Error::DegeneratePrototype(_))
        ));
    }

    #[test]
    fn tiny_image_is_degenerate() {
        let img = Image::filled(1, 5, ColorMode::Gray, 0.5);
        assert!(matches!(
            extract_raw(&img, &HogConfig::default()),
            Err(Error::DegenerateImage(_))
        ));
    }

    #[test]
    fn fold_angle_wraps() {
        assert_eq!(fold_angle(-180.0, 180.0), 0.0);
        assert_eq!(fold_angle(180.0, 180.0), 0.0);
        assert!((fold_angle(-90.0, 360.0) - 270.0).abs() < 1e-12);
        assert!((fold_angle(-1e-17, 180.0)) < 180.0);
    }
}
