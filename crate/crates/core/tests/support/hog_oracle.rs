//! Naive pixel-loop HOG in f64.

use protoprior::hog::HogConfig;
use protoprior::image::{ColorMode, Image};

fn luma(img: &Image) -> Vec<Vec<f64>> {
    let (w, h) = (img.width(), img.height());
    let mut out = vec![vec![0.0; w]; h];
    for (y, row) in out.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = match img.mode() {
                ColorMode::Gray => img.get(x, y, 0) as f64,
                ColorMode::Rgb => {
                    0.299 * img.get(x, y, 0) as f64 + 0.587 * img.get(x, y, 1) as f64 + 0.114 * img.get(x, y, 2) as f64
                }
            };
        }
    }
    out
}

/// Bilinear resampling; output pixel centers map onto input pixel centers,
/// coordinates clamped to the valid range.
fn resize(src: &[Vec<f64>], side: usize) -> Vec<Vec<f64>> {
    let h = src.len();
    let w = src[0].len();
    if h == side && w == side {
        return src.to_vec();
    }
    let mut out = vec![vec![0.0; side]; side];
    for (oy, row) in out.iter_mut().enumerate() {
        let fy = ((oy as f64 + 0.5) * h as f64 / side as f64 - 0.5).max(0.0).min((h - 1) as f64);
        for (ox, v) in row.iter_mut().enumerate() {
            let fx = ((ox as f64 + 0.5) * w as f64 / side as f64 - 0.5).max(0.0).min((w - 1) as f64);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            *v = (1.0 - ay) * ((1.0 - ax) * src[y0][x0] + ax * src[y0][x1])
                + ay * ((1.0 - ax) * src[y1][x0] + ax * src[y1][x1]);
        }
    }
    out
}

/// Weight a vote at `angle` gives to each bin: triangular kernel of one bin
/// width around every bin center, on the circle.
fn bin_weights(angle: f64, n: usize, range: f64) -> Vec<f64> {
    let width = range / n as f64;
    (0..n)
        .map(|b| {
            let center = b as f64 * width;
            let mut d = (angle - center).abs() % range;
            if d > range / 2.0 {
                d = range - d;
            }
            (1.0 - d / width).max(0.0)
        })
        .collect()
}

/// Per-cell histograms `[cell_row][cell_col][bin]`.
pub fn cells(img: &Image, cfg: &HogConfig) -> Vec<Vec<Vec<f64>>> {
    let s = cfg.resize_side;
    let g = resize(&luma(img), s);
    let range = if cfg.signed_orientations { 360.0 } else { 180.0 };
    let nc = s / cfg.cell_size;
    let mut hist = vec![vec![vec![0.0; cfg.num_bins]; nc]; nc];
    for y in 0..s {
        for x in 0..s {
            let left = if x == 0 { g[y][0] } else { g[y][x - 1] };
            let right = if x == s - 1 { g[y][s - 1] } else { g[y][x + 1] };
            let up = if y == 0 { g[0][x] } else { g[y - 1][x] };
            let down = if y == s - 1 { g[s - 1][x] } else { g[y + 1][x] };
            let (gx, gy) = (right - left, down - up);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            while angle < 0.0 {
                angle += range;
            }
            while angle >= range {
                angle -= range;
            }
            for (b, w) in bin_weights(angle, cfg.num_bins, range).into_iter().enumerate() {
                hist[y / cfg.cell_size][x / cfg.cell_size][b] += mag * w;
            }
        }
    }
    hist
}

pub fn hog(img: &Image, cfg: &HogConfig) -> Vec<f64> {
    let hist = cells(img, cfg);
    let nc = hist.len();
    let b = cfg.block_size;
    let stride = b - cfg.block_overlap;
    let mut out = Vec::new();
    let mut by = 0;
    while by + b <= nc {
        let mut bx = 0;
        while bx + b <= nc {
            let mut block = Vec::new();
            for cy in by..by + b {
                for cx in bx..bx + b {
                    block.extend(hist[cy][cx].iter().copied());
                }
            }
            let sq: f64 = block.iter().map(|v| v * v).sum();
            let denom = (sq + cfg.epsilon * cfg.epsilon).sqrt();
            out.extend(block.iter().map(|v| v / denom));
            bx += stride;
        }
        by += stride;
    }
    out
}
