//! Fixed prototype output layer.
//!
//! A [`PrototypeSet`] holds one unit-norm HOG embedding per class. Used as a
//! network head it scores an activation vector `v` by the plain inner
//! products `z_c = <phi(p_c), v>`; because all rows share the same norm the
//! highest score is also the closest prototype in angle. Replacing the set
//! ([`swap`]) changes the label space without touching learned weights,
//! which is what makes zero-shot inference possible.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hog::{embed_prototype, HogConfig};
use crate::image::Image;
use crate::net::{argmax, softmax, Head, Mode, Network, Scalar};

/// Tolerance on the unit-norm invariant of every row.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Cosine above which two prototypes are reported as near-duplicates.
pub const NEAR_DUPLICATE_COSINE: f64 = 0.999;

/// Class embeddings stored row-wise: row `c` is `phi(p_c)`, so the matrix
/// is `C x k` (the transpose of the usual `k x C` column layout).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    class_ids: Vec<String>,
    dim: usize,
    matrix: Vec<f32>,
    hog_config: HogConfig,
    source_refs: Vec<String>,
}

impl PrototypeSet {
    /// Embeds each `(class_id, image)` in order.
    pub fn build(prototypes: &[(String, Image)], config: &HogConfig) -> Result<Self> {
        if prototypes.is_empty() {
            return Err(Error::InvalidCount("at least one prototype is required".into()));
        }
        let k = config.dimension()?;
        let mut matrix = Vec::with_capacity(prototypes.len() * k);
        for (id, image) in prototypes {
            let e = embed_prototype(image, config).map_err(|e| match e {
                Error::DegeneratePrototype(_) => Error::DegeneratePrototype(id.clone()),
                other => other,
            })?;
            matrix.extend_from_slice(&e.values);
        }
        let ids = prototypes.iter().map(|(id, _)| id.clone()).collect();
        let set = PrototypeSet::from_matrix(ids, k, matrix, *config)?;
        for (a, b, cos) in set.near_duplicates(NEAR_DUPLICATE_COSINE) {
            log::warn!(
                "prototypes `{}` and `{}` are nearly identical in embedding space (cosine {cos:.5})",
                set.class_ids[a],
                set.class_ids[b]
            );
        }
        Ok(set)
    }

    /// Wraps precomputed rows, checking ids and the unit-norm invariant.
    pub fn from_matrix(class_ids: Vec<String>, dim: usize, matrix: Vec<f32>, hog_config: HogConfig) -> Result<Self> {
        if class_ids.is_empty() {
            return Err(Error::InvalidCount("at least one prototype is required".into()));
        }
        if matrix.len() != class_ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: class_ids.len() * dim,
                got: matrix.len(),
            });
        }
        let mut seen = HashSet::new();
        for id in &class_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateClassId(id.clone()));
            }
        }
        for (id, row) in class_ids.iter().zip(matrix.chunks_exact(dim.max(1))) {
            let norm = norm(row);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::InvalidConfig(format!(
                    "prototype `{id}` has norm {norm}, expected 1"
                )));
            }
        }
        let source_refs = vec![String::new(); class_ids.len()];
        Ok(PrototypeSet {
            class_ids,
            dim,
            matrix,
            hog_config,
            source_refs,
        })
    }

    pub fn with_sources(mut self, sources: Vec<String>) -> Result<Self> {
        if sources.len() != self.class_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: self.class_ids.len(),
                got: sources.len(),
            });
        }
        self.source_refs = sources;
        Ok(self)
    }

    pub fn class_ids(&self) -> &[String] {
        &self.class_ids
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    /// Embedding width `k`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn hog_config(&self) -> &HogConfig {
        &self.hog_config
    }

    pub fn source_refs(&self) -> &[String] {
        &self.source_refs
    }

    pub fn embedding(&self, class: usize) -> &[f32] {
        &self.matrix[class * self.dim..(class + 1) * self.dim]
    }

    pub fn index_of(&self, class_id: &str) -> Option<usize> {
        self.class_ids.iter().position(|c| c == class_id)
    }

    /// `z_c = <phi(p_c), v>`, no bias.
    pub fn logits(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok((0..self.len())
            .map(|c| {
                self.embedding(c)
                    .iter()
                    .zip(v)
                    .map(|(&p, &x)| p as f64 * x)
                    .sum()
            })
            .collect())
    }

    /// Pairs `(a, b, cosine)` with `a < b` whose cosine exceeds `threshold`.
    pub fn near_duplicates(&self, threshold: f64) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for a in 0..self.len() {
            for b in a + 1..self.len() {
                let cos = cosine(self.embedding(a), self.embedding(b));
                if cos > threshold {
                    out.push((a, b, cos));
                }
            }
        }
        out
    }

    /// The rows for `ids`, in that order.
    pub fn subset(&self, ids: &[String]) -> Result<PrototypeSet> {
        let mut matrix = Vec::with_capacity(ids.len() * self.dim);
        let mut sources = Vec::with_capacity(ids.len());
        for id in ids {
            let i = self.index_of(id).ok_or_else(|| Error::UnknownClass(id.clone()))?;
            matrix.extend_from_slice(self.embedding(i));
            sources.push(self.source_refs[i].clone());
        }
        PrototypeSet::from_matrix(ids.to_vec(), self.dim, matrix, self.hog_config)?.with_sources(sources)
    }

    /// Rows reordered so that row `i` of the result is row `perm[i]` here.
    pub fn permuted(&self, perm: &[usize]) -> Result<PrototypeSet> {
        let ids: Vec<String> = perm
            .iter()
            .map(|&i| {
                self.class_ids
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidCount(format!("permutation index {i} out of range")))
            })
            .collect::<Result<_>>()?;
        self.subset(&ids)
    }

    /// This set followed by the classes of `other`.
    pub fn extended(&self, other: &PrototypeSet) -> Result<PrototypeSet> {
        if self.hog_config != other.hog_config {
            return Err(Error::HogConfigMismatch);
        }
        let mut ids = self.class_ids.clone();
        ids.extend_from_slice(&other.class_ids);
        let mut matrix = self.matrix.clone();
        matrix.extend_from_slice(&other.matrix);
        let mut sources = self.source_refs.clone();
        sources.extend_from_slice(&other.source_refs);
        PrototypeSet::from_matrix(ids, self.dim, matrix, self.hog_config)?.with_sources(sources)
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine<A: Copy + Into<f64>, B: Copy + Into<f64>>(a: &[A], b: &[B]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Returns a copy of `net` whose head is `new_set`. Learned layers are
/// untouched. The embedding width must match, and if the current head is a
/// prototype head the HOG configs must be equal.
pub fn swap<T: Scalar>(net: &Network<T>, new_set: PrototypeSet) -> Result<Network<T>> {
    let k = net.embedding_dim();
    if new_set.dim() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: new_set.dim(),
        });
    }
    if let Some(current) = net.head().prototypes() {
        if current.hog_config() != new_set.hog_config() {
            return Err(Error::HogConfigMismatch);
        }
    }
    let mut out = net.clone();
    out.set_head(Head::prototype(new_set));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub index: usize,
    pub class_id: String,
    pub probabilities: Vec<f64>,
}

/// Inference-mode forward pass, softmax, argmax (ties to the lowest index).
pub fn classify<T: Scalar>(net: &Network<T>, image: &Image) -> Result<Classification> {
    let pass = net.forward(image, Mode::Inference)?;
    let probabilities: Vec<f64> = softmax(&pass.logits).into_iter().map(|p| p.to_f64()).collect();
    let index = argmax(&pass.logits);
    Ok(Classification {
        index,
        class_id: net.class_ids()[index].clone(),
        probabilities,
    })
}
