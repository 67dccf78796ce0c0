//! Directory format:
//!
//! ```text
//! root/
//!   manifest.csv            path,class_id,partition,x,y,w,h
//!   images/<class_id>/<n>.png
//!   prototypes/<class_id>.png
//!   prototypes/prototypes.csv   class_id,path   (optional)
//! ```
//!
//! Paths in manifests are relative to the manifest's directory. Crop
//! columns may be empty. Every file is written atomically.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::{Dataset, Partition, Provenance, Sample};
use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::image::{ColorMode, Image};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const PROTOTYPE_MANIFEST_FILE: &str = "prototypes.csv";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    path: String,
    class_id: String,
    partition: String,
    #[serde(default)]
    x: Option<u32>,
    #[serde(default)]
    y: Option<u32>,
    #[serde(default)]
    w: Option<u32>,
    #[serde(default)]
    h: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PrototypeRow {
    class_id: String,
    path: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Every image is resized to `image_side x image_side` after cropping.
    pub image_side: usize,
    /// Convert RGB inputs to a single luma channel.
    pub grayscale: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            image_side: 48,
            grayscale: true,
        }
    }
}

fn write_png(image: &Image, path: &Path) -> Result<()> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let bytes = image.to_u8();
    let dynamic = match image.mode() {
        ColorMode::Gray => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer size")),
        ColorMode::Rgb => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size")),
    };
    let mut bytes = Vec::new();
    dynamic.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    write_atomic(path, &bytes)
}

/// Decodes an 8-bit image file into `[0, 1]` intensities.
pub fn read_image(path: &Path, grayscale: bool) -> Result<Image> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let decoded = image::open(path)?;
    let is_gray = matches!(
        decoded.color(),
        image::ColorType::L8 | image::ColorType::La8 | image::ColorType::L16 | image::ColorType::La16
    );
    if grayscale && !is_gray {
        let rgb = decoded.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
        return Ok(Image::from_vec(w as usize, h as usize, ColorMode::Rgb, data)?.to_gray());
    }
    if is_gray {
        let g = decoded.to_luma8();
        let (w, h) = g.dimensions();
        Image::from_gray_u8(w as usize, h as usize, g.as_raw())
    } else {
        let rgb = decoded.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
        Image::from_vec(w as usize, h as usize, ColorMode::Rgb, data)
    }
}

/// Writes every sample as a PNG plus `manifest.csv`, in sample order.
pub fn save_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(root)?;
    let mut per_class = vec![0usize; dataset.class_ids.len()];
    let mut writer = csv::Writer::from_writer(Vec::new());
    for (sample, partition) in dataset.samples.iter().zip(&dataset.partitions) {
        let class_id = &dataset.class_ids[sample.label];
        let n = per_class[sample.label];
        per_class[sample.label] += 1;
        let rel = format!("images/{class_id}/{n}.png");
        write_png(&sample.image, &root.join(&rel))?;
        writer.serialize(ManifestRow {
            path: rel,
            class_id: class_id.clone(),
            partition: partition.as_str().to_string(),
            x: None,
            y: None,
            w: None,
            h: None,
        })?;
    }
    write_atomic(&root.join(MANIFEST_FILE), &finish(writer)?)
}

fn finish(writer: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    writer
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Loads the dataset described by `manifest`. Classes are ordered by first
/// appearance.
pub fn load_directory(root: &Path, manifest: Option<&Path>, options: &LoadOptions) -> Result<Dataset> {
    let manifest_path: PathBuf = manifest.map(Path::to_path_buf).unwrap_or_else(|| root.join(MANIFEST_FILE));
    if !manifest_path.is_file() {
        return Err(Error::MissingFile(manifest_path));
    }
    let base = manifest_path.parent().unwrap_or(root).to_path_buf();
    let mut reader = csv::Reader::from_path(&manifest_path)?;
    let mut class_ids: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut samples = Vec::new();
    let mut partitions = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let partition: Partition = row.partition.parse().map_err(|value| Error::UnknownPartition { row: row_no, value })?;
        let mut image = read_image(&base.join(&row.path), options.grayscale)?;
        if let (Some(x), Some(y), Some(w), Some(h)) = (row.x, row.y, row.w, row.h) {
            let (iw, ih) = (image.width() as u32, image.height() as u32);
            if w == 0 || h == 0 || x.saturating_add(w) > iw || y.saturating_add(h) > ih {
                return Err(Error::BadCrop {
                    row: row_no,
                    crop: [x, y, w, h],
                    width: iw,
                    height: ih,
                });
            }
            image = image.crop(x as usize, y as usize, w as usize, h as usize)?;
        }
        let image = image.resize(options.image_side, options.image_side);
        let label = *class_index.entry(row.class_id.clone()).or_insert_with(|| {
            class_ids.push(row.class_id.clone());
            class_ids.len() - 1
        });
        samples.push(Sample { image, label });
        partitions.push(partition);
    }
    let dataset = Dataset {
        class_ids,
        samples,
        partitions,
        provenance: Provenance::Directory {
            root: root.display().to_string(),
        },
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `dir/<class_id>.png` for each prototype plus `prototypes.csv`.
pub fn save_prototypes(prototypes: &[(String, Image)], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for (id, image) in prototypes {
        let rel = format!("{id}.png");
        write_png(image, &dir.join(&rel))?;
        writer.serialize(PrototypeRow {
            class_id: id.clone(),
            path: rel,
        })?;
    }
    write_atomic(&dir.join(PROTOTYPE_MANIFEST_FILE), &finish(writer)?)
}

/// Reads prototype images from `dir`: via `prototypes.csv` when present,
/// otherwise every `.png` file, class id = file stem, sorted by name.
pub fn load_prototypes(dir: &Path, grayscale: bool) -> Result<Vec<(String, Image)>> {
    let manifest = dir.join(PROTOTYPE_MANIFEST_FILE);
    let mut out = Vec::new();
    if manifest.is_file() {
        let mut reader = csv::Reader::from_path(&manifest)?;
        for row in reader.deserialize::<PrototypeRow>() {
            let row = row?;
            out.push((row.class_id, read_image(&dir.join(&row.path), grayscale)?));
        }
        return Ok(out);
    }
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    for p in paths {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        out.push((id, read_image(&p, grayscale)?));
    }
    Ok(out)
}
