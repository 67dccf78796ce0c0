//! Convolutional classifiers whose output layer is fixed to HOG embeddings of
//! class prototype images, with zero-shot prototype swapping, a
//! convex-combination-of-embeddings baseline, and a synthetic glyph
//! benchmark.

pub mod checkpoint;
pub mod error;
pub mod hog;
pub mod image;
pub mod net;
pub mod proto;
pub mod data;
pub mod presets;
pub mod zeroshot;

pub use error::{Error, Result};
