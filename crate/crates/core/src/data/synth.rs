//! Synthetic prototype-plus-corruption benchmark.
//!
//! Each class is a glyph made of 2-4 primitives (bars, arcs, filled
//! triangles, rings) rendered with soft edges on a mid-dark background.
//! Samples are that glyph pushed through a random similarity transform,
//! photometric jitter, clipped Gaussian noise and optional clutter patches.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mix_seed, Dataset, Partition, Provenance, Sample};
use crate::error::{Error, Result};
use crate::hog::{embed_prototype, HogConfig};
use crate::image::Image;
use crate::proto::{cosine, NEAR_DUPLICATE_COSINE};

const BACKGROUND: f32 = 0.15;
const FOREGROUND: f32 = 0.85;
const MAX_TEMPLATE_RETRIES: usize = 100;

const TAG_TEMPLATE: u64 = 1;
const TAG_SAMPLE: u64 = 2;
const TAG_SPLIT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Corruption {
    /// Rotation drawn from `±rotation_max_deg`.
    pub rotation_max_deg: f64,
    /// Scale factor drawn from `1 ± scale_range`.
    pub scale_range: f64,
    /// Shift per axis drawn from `±translation_max_px` output pixels.
    pub translation_max_px: f64,
    pub brightness_jitter: f64,
    pub contrast_jitter: f64,
    pub gaussian_noise_sigma: f64,
    /// 0 disables clutter; otherwise up to `ceil(3 * level)` patches blended
    /// in with weight `level`.
    pub background_clutter_level: f64,
}

impl Default for Corruption {
    fn default() -> Self {
        Corruption {
            rotation_max_deg: 10.0,
            scale_range: 0.1,
            translation_max_px: 3.0,
            brightness_jitter: 0.1,
            contrast_jitter: 0.2,
            gaussian_noise_sigma: 0.04,
            background_clutter_level: 0.2,
        }
    }
}

impl Corruption {
    pub fn none() -> Self {
        Corruption {
            rotation_max_deg: 0.0,
            scale_range: 0.0,
            translation_max_px: 0.0,
            brightness_jitter: 0.0,
            contrast_jitter: 0.0,
            gaussian_noise_sigma: 0.0,
            background_clutter_level: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rotation_max_deg", self.rotation_max_deg),
            ("scale_range", self.scale_range),
            ("translation_max_px", self.translation_max_px),
            ("brightness_jitter", self.brightness_jitter),
            ("contrast_jitter", self.contrast_jitter),
            ("gaussian_noise_sigma", self.gaussian_noise_sigma),
            ("background_clutter_level", self.background_clutter_level),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.scale_range >= 1.0 {
            return Err(Error::InvalidConfig("scale_range must be < 1".into()));
        }
        if self.background_clutter_level > 1.0 {
            return Err(Error::InvalidConfig("background_clutter_level must be <= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub template_seed: u64,
    pub corruption: Corruption,
    /// Side of the corrupted samples.
    pub image_side: usize,
    /// Side of the rendered prototype templates.
    pub prototype_side: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 10,
            samples_per_class: 100,
            template_seed: 7,
            corruption: Corruption::default(),
            image_side: 48,
            prototype_side: 100,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        if self.samples_per_class < 3 {
            return Err(Error::InvalidConfig(format!(
                "samples_per_class must be >= 3 to fill train/val/test, got {}",
                self.samples_per_class
            )));
        }
        if self.image_side < 8 || self.prototype_side < 8 {
            return Err(Error::InvalidConfig("image sides must be >= 8".into()));
        }
        self.corruption.validate()
    }

    pub fn class_id(index: usize) -> String {
        format!("c{index:02}")
    }
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Bar { a: [f64; 2], b: [f64; 2], half_width: f64 },
    Arc { center: [f64; 2], radius: f64, start: f64, span: f64, half_width: f64 },
    Triangle { v: [[f64; 2]; 3] },
    Ring { center: [f64; 2], radius: f64, half_width: f64 },
}

fn point<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> [f64; 2] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

impl Primitive {
    fn sample<R: Rng>(rng: &mut R) -> Primitive {
        match rng.gen_range(0..4) {
            0 => loop {
                let a = point(rng, 0.15, 0.85);
                let b = point(rng, 0.15, 0.85);
                if dist(a, b) >= 0.3 {
                    break Primitive::Bar {
                        a,
                        b,
                        half_width: rng.gen_range(0.025..0.06),
                    };
                }
            },
            1 => Primitive::Arc {
                center: point(rng, 0.35, 0.65),
                radius: rng.gen_range(0.15..0.33),
                start: rng.gen_range(0.0..2.0 * PI),
                span: rng.gen_range(0.5 * PI..1.5 * PI),
                half_width: rng.gen_range(0.025..0.05),
            },
            2 => loop {
                let v = [point(rng, 0.15, 0.85), point(rng, 0.15, 0.85), point(rng, 0.15, 0.85)];
                let area = ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1])).abs() / 2.0;
                if area >= 0.03 {
                    break Primitive::Triangle { v };
                }
            },
            _ => Primitive::Ring {
                center: point(rng, 0.4, 0.6),
                radius: rng.gen_range(0.15..0.33),
                half_width: rng.gen_range(0.02..0.05),
            },
        }
    }

    /// Signed distance in normalized units; negative inside.
    fn signed_distance(&self, p: [f64; 2]) -> f64 {
        match *self {
            Primitive::Bar { a, b, half_width } => segment_distance(p, a, b) - half_width,
            Primitive::Ring {
                center,
                radius,
                half_width,
            } => (dist(p, center) - radius).abs() - half_width,
            Primitive::Arc {
                center,
                radius,
                start,
                span,
                half_width,
            } => {
                let angle = (p[1] - center[1]).atan2(p[0] - center[0]);
                let rel = (angle - start).rem_euclid(2.0 * PI);
                if rel <= span {
                    (dist(p, center) - radius).abs() - half_width
                } else {
                    let end = start + span;
                    let e0 = [center[0] + radius * start.cos(), center[1] + radius * start.sin()];
                    let e1 = [center[0] + radius * end.cos(), center[1] + radius * end.sin()];
                    dist(p, e0).min(dist(p, e1)) - half_width
                }
            }
            Primitive::Triangle { v } => {
                let edge = (0..3)
                    .map(|i| segment_distance(p, v[i], v[(i + 1) % 3]))
                    .fold(f64::INFINITY, f64::min);
                let sign = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                let s = [sign(v[0], v[1]), sign(v[1], v[2]), sign(v[2], v[0])];
                let inside = s.iter().all(|&x| x >= 0.0) || s.iter().all(|&x| x <= 0.0);
                if inside {
                    -edge
                } else {
                    edge
                }
            }
        }
    }
}

/// Renders the glyph for one class at `side x side`; deterministic in
/// `(seed, class_index, attempt)`.
pub fn render_glyph(seed: u64, class_index: usize, attempt: usize, side: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ TAG_TEMPLATE, class_index as u64, attempt as u64));
    let count = rng.gen_range(2..=4);
    let prims: Vec<Primitive> = (0..count).map(|_| Primitive::sample(&mut rng)).collect();
    let aa = 1.0 / side as f64;
    Image::gray_from_fn(side, side, |x, y| {
        let p = [(x as f64 + 0.5) / side as f64, (y as f64 + 0.5) / side as f64];
        let coverage = prims
            .iter()
            .map(|pr| (0.5 - pr.signed_distance(p) / aa).clamp(0.0, 1.0))
            .fold(0.0, f64::max);
        BACKGROUND + (FOREGROUND - BACKGROUND) * coverage as f32
    })
}

/// Renders `num_classes` templates at `prototype_side`, re-rendering any
/// glyph whose HOG embedding is within cosine 0.999 of an earlier one.
pub fn generate_templates(config: &SynthConfig) -> Result<Vec<(String, Image)>> {
    config.validate()?;
    let hog = HogConfig::default();
    let mut out: Vec<(String, Image)> = Vec::with_capacity(config.num_classes);
    let mut embeddings: Vec<Vec<f32>> = Vec::with_capacity(config.num_classes);
    for class in 0..config.num_classes {
        let mut accepted = None;
        for attempt in 0..MAX_TEMPLATE_RETRIES {
            let mut img = render_glyph(config.template_seed, class, attempt, config.prototype_side);
            img.quantize_u8();
            let Ok(e) = embed_prototype(&img, &hog) else {
                continue;
            };
            if embeddings.iter().all(|prev| cosine(prev, &e.values) < NEAR_DUPLICATE_COSINE) {
                accepted = Some((img, e.values));
                break;
            }
        }
        let (img, e) = accepted.ok_or(Error::TemplateCollisionExhausted(class))?;
        embeddings.push(e);
        out.push((SynthConfig::class_id(class), img));
    }
    Ok(out)
}

/// Applies, in order: similarity transform (bilinear resampling onto
/// `side x side`), brightness/contrast jitter, clipped Gaussian noise,
/// clutter patches. With all magnitudes zero this is a plain resize.
pub fn corrupt(template: &Image, corruption: &Corruption, side: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = corruption;
    let theta = symmetric(&mut rng, c.rotation_max_deg).to_radians();
    let scale = 1.0 + symmetric(&mut rng, c.scale_range);
    let tx = symmetric(&mut rng, c.translation_max_px) / side as f64;
    let ty = symmetric(&mut rng, c.translation_max_px) / side as f64;
    let gain = 1.0 + symmetric(&mut rng, c.contrast_jitter);
    let offset = symmetric(&mut rng, c.brightness_jitter);

    let gray = template.to_gray();
    let mut img = if theta == 0.0 && scale == 1.0 && tx == 0.0 && ty == 0.0 {
        gray.resize(side, side)
    } else {
        warp(&gray, side, theta, scale, tx, ty)
    };

    if gain != 1.0 || offset != 0.0 {
        for v in img.data_mut() {
            *v = ((*v as f64 - 0.5) * gain + 0.5 + offset) as f32;
        }
    }
    if c.gaussian_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, c.gaussian_noise_sigma).expect("sigma validated");
        for v in img.data_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    img.clamp01();

    if c.background_clutter_level > 0.0 {
        let level = c.background_clutter_level as f32;
        let max_patches = (3.0 * c.background_clutter_level).ceil() as usize;
        let patches = rng.gen_range(0..=max_patches);
        for _ in 0..patches {
            let w = rng.gen_range(side / 10..=side * 3 / 10).max(1);
            let h = rng.gen_range(side / 10..=side * 3 / 10).max(1);
            let x0 = rng.gen_range(0..=side - w);
            let y0 = rng.gen_range(0..=side - h);
            let value: f32 = rng.gen();
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    let p = img.get(x, y, 0);
                    img.set(x, y, 0, p * (1.0 - level) + value * level);
                }
            }
        }
        img.clamp01();
    }
    img
}

fn symmetric<R: Rng>(rng: &mut R, magnitude: f64) -> f64 {
    let u: f64 = rng.gen_range(-1.0..=1.0);
    u * magnitude
}

/// Inverse-maps every output pixel through rotation `theta`, `scale` and
/// the shift `(tx, ty)` (normalized units) about the image center; pixels
/// that land outside the template take the template's corner value.
fn warp(template: &Image, side: usize, theta: f64, scale: f64, tx: f64, ty: f64) -> Image {
    let tw = template.width() as f64;
    let th = template.height() as f64;
    let fill = template.get(0, 0, 0);
    let (sin, cos) = theta.sin_cos();
    Image::gray_from_fn(side, side, |x, y| {
        let u = (x as f64 + 0.5) / side as f64 - 0.5 - tx;
        let v = (y as f64 + 0.5) / side as f64 - 0.5 - ty;
        let su = (cos * u + sin * v) / scale + 0.5;
        let sv = (-sin * u + cos * v) / scale + 0.5;
        let fx = su * tw - 0.5;
        let fy = sv * th - 0.5;
        if fx < -0.5 || fy < -0.5 || fx > tw - 0.5 || fy > th - 0.5 {
            fill
        } else {
            template.sample_bilinear(fx.clamp(0.0, tw - 1.0) as f32, fy.clamp(0.0, th - 1.0) as f32, 0)
        }
    })
}

/// Number of `(train, val, test)` samples for a class of size `n`.
fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = (n / 5).max(1);
    let test = (n / 5).max(1);
    (n - val - test, val, test)
}

/// Templates plus a dataset of 8-bit-quantized corrupted samples, split
/// 60/20/20 per class by a seeded shuffle. Samples are ordered
/// class-major.
pub fn build_synthetic(config: &SynthConfig) -> Result<(Dataset, Vec<(String, Image)>)> {
    let templates = generate_templates(config)?;
    let n = config.samples_per_class;
    let total = config.num_classes * n;
    let samples: Vec<Sample> = (0..total)
        .into_par_iter()
        .map(|i| {
            let class = i / n;
            let seed = mix_seed(config.template_seed ^ TAG_SAMPLE, class as u64, (i % n) as u64);
            let mut image = corrupt(&templates[class].1, &config.corruption, config.image_side, seed);
            image.quantize_u8();
            Sample { image, label: class }
        })
        .collect();

    let mut partitions = vec![Partition::Train; total];
    let (n_train, n_val, _) = split_sizes(n);
    for class in 0..config.num_classes {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.template_seed ^ TAG_SPLIT, class as u64, 0));
        let mut idx: Vec<usize> = (class * n..(class + 1) * n).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        for (rank, &i) in idx.iter().enumerate() {
            partitions[i] = if rank < n_train {
                Partition::Train
            } else if rank < n_train + n_val {
                Partition::Val
            } else {
                Partition::Test
            };
        }
    }
    let dataset = Dataset {
        class_ids: templates.iter().map(|(id, _)| id.clone()).collect(),
        samples,
        partitions,
        provenance: Provenance::Synthetic { config: config.clone() },
    };
    Ok((dataset, templates))
}
