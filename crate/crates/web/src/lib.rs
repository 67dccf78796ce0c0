//! Browser demo: corrupt a synthetic glyph with slider-controlled
//! magnitudes, look at its HOG cell histograms, and score it against the
//! fixed prototype embeddings.
//!
//! [`Session`] holds the logic and is tested natively; [`Demo`] is the thin
//! wasm-bindgen wrapper the page talks to.

use protoprior::data::{corrupt, generate_templates, Corruption, SynthConfig};
use protoprior::hog::{cell_histograms, embed_prototype, HogConfig};
use protoprior::image::Image;
use protoprior::net::softmax;
use protoprior::proto::{cosine, PrototypeSet};
use wasm_bindgen::prelude::*;

pub const SAMPLE_SIDE: usize = 48;

pub struct Session {
    templates: Vec<(String, Image)>,
    set: PrototypeSet,
    hog: HogConfig,
    sample: Image,
}

/// Slider positions for one corrupted sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sliders {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translation_px: f64,
    pub noise_sigma: f64,
    pub clutter: f64,
}

impl Sliders {
    fn corruption(&self) -> Corruption {
        Corruption {
            rotation_max_deg: self.rotation_deg,
            scale_range: self.scale,
            translation_max_px: self.translation_px,
            gaussian_noise_sigma: self.noise_sigma,
            background_clutter_level: self.clutter,
            ..Corruption::none()
        }
    }
}

fn rgba(image: &Image) -> Vec<u8> {
    let gray = image.to_gray();
    gray.data()
        .iter()
        .flat_map(|&v| {
            let b = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [b, b, b, 255]
        })
        .collect()
}

impl Session {
    /// Renders `num_classes` templates and embeds them with the 60x60 HOG
    /// used by the desk preset.
    pub fn new(num_classes: usize, template_seed: u64) -> Result<Session, String> {
        let config = SynthConfig {
            num_classes,
            template_seed,
            ..SynthConfig::default()
        };
        let templates = generate_templates(&config).map_err(|e| e.to_string())?;
        let hog = HogConfig::default().with_side(60);
        let set = PrototypeSet::build(&templates, &hog).map_err(|e| e.to_string())?;
        let sample = corrupt(&templates[0].1, &Corruption::none(), SAMPLE_SIDE, 0);
        Ok(Session {
            templates,
            set,
            hog,
            sample,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.templates.len()
    }

    pub fn class_id(&self, class: usize) -> Result<String, String> {
        self.templates
            .get(class)
            .map(|(id, _)| id.clone())
            .ok_or_else(|| format!("class {class} out of range"))
    }

    pub fn template_side(&self) -> usize {
        self.templates[0].1.width()
    }

    pub fn template_rgba(&self, class: usize) -> Result<Vec<u8>, String> {
        let (_, img) = self.templates.get(class).ok_or_else(|| format!("class {class} out of range"))?;
        Ok(rgba(img))
    }

    /// Replaces the current sample with a corrupted copy of `class`'s
    /// template and returns it as RGBA.
    pub fn corrupt(&mut self, class: usize, sliders: &Sliders, seed: u64) -> Result<Vec<u8>, String> {
        let corruption = sliders.corruption();
        corruption.validate().map_err(|e| e.to_string())?;
        let (_, template) = self.templates.get(class).ok_or_else(|| format!("class {class} out of range"))?;
        self.sample = corrupt(template, &corruption, SAMPLE_SIDE, seed);
        Ok(rgba(&self.sample))
    }

    pub fn cells_per_side(&self) -> usize {
        self.hog.cells_per_side()
    }

    pub fn num_bins(&self) -> usize {
        self.hog.num_bins
    }

    /// Cell histograms of the current sample, cells row-major.
    pub fn cells(&self) -> Result<Vec<f32>, String> {
        let grid = cell_histograms(&self.sample, &self.hog).map_err(|e| e.to_string())?;
        Ok(grid.bins.iter().map(|&v| v as f32).collect())
    }

    /// Cosine similarity of the sample's HOG embedding to every prototype.
    /// An all-zero embedding (blank sample) scores 0 everywhere.
    pub fn similarities(&self) -> Vec<f64> {
        match embed_prototype(&self.sample, &self.hog) {
            Ok(e) => (0..self.set.len()).map(|c| cosine(&e.values, self.set.embedding(c))).collect(),
            Err(_) => vec![0.0; self.set.len()],
        }
    }

    /// Softmax over `scale * cosine`; `scale` plays the role of the norm of
    /// a trained network's embedding.
    pub fn probabilities(&self, scale: f64) -> Result<Vec<f64>, String> {
        if !scale.is_finite() || scale < 0.0 {
            return Err(format!("scale must be finite and >= 0, got {scale}"));
        }
        let logits: Vec<f64> = self.similarities().iter().map(|c| c * scale).collect();
        Ok(softmax(&logits))
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(num_classes: usize, template_seed: u64) -> Result<Demo, JsError> {
        Session::new(num_classes, template_seed).map(Demo).map_err(js)
    }

    #[wasm_bindgen(js_name = numClasses)]
    pub fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    #[wasm_bindgen(js_name = classId)]
    pub fn class_id(&self, class: usize) -> Result<String, JsError> {
        self.0.class_id(class).map_err(js)
    }

    #[wasm_bindgen(js_name = templateSide)]
    pub fn template_side(&self) -> usize {
        self.0.template_side()
    }

    #[wasm_bindgen(js_name = sampleSide)]
    pub fn sample_side(&self) -> usize {
        SAMPLE_SIDE
    }

    #[wasm_bindgen(js_name = templateRgba)]
    pub fn template_rgba(&self, class: usize) -> Result<Vec<u8>, JsError> {
        self.0.template_rgba(class).map_err(js)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn corrupt(
        &mut self,
        class: usize,
        rotation_deg: f64,
        scale: f64,
        translation_px: f64,
        noise_sigma: f64,
        clutter: f64,
        seed: u64,
    ) -> Result<Vec<u8>, JsError> {
        let sliders = Sliders {
            rotation_deg,
            scale,
            translation_px,
            noise_sigma,
            clutter,
        };
        self.0.corrupt(class, &sliders, seed).map_err(js)
    }

    #[wasm_bindgen(js_name = cellsPerSide)]
    pub fn cells_per_side(&self) -> usize {
        self.0.cells_per_side()
    }

    #[wasm_bindgen(js_name = numBins)]
    pub fn num_bins(&self) -> usize {
        self.0.num_bins()
    }

    pub fn cells(&self) -> Result<Vec<f32>, JsError> {
        self.0.cells().map_err(js)
    }

    pub fn similarities(&self) -> Vec<f64> {
        self.0.similarities()
    }

    pub fn probabilities(&self, scale: f64) -> Result<Vec<f64>, JsError> {
        self.0.probabilities(scale).map_err(js)
    }
}
