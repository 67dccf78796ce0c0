//! Small convolutional network engine: forward pass, exact backpropagation
//! and momentum SGD, generic over `f32` / `f64`.
//!
//! A network is the learnable mapping (a stack of [`LayerSpec`]s ending in a
//! `k`-wide embedding layer) followed by a [`Head`]: either a learned
//! fully-connected classifier or a fixed [`PrototypeSet`] whose rows are
//! taken as constant weights.

mod layers;
mod loss;
mod optim;
mod scalar;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use layers::{Layer, LayerSpec, Nonlinearity, Shape};
pub use loss::{argmax, nll_logit_gradient, nll_loss, softmax};
pub use optim::Sgd;
pub use scalar::Scalar;
pub use train::{accuracy, train, EpochMetrics, Example, Schedule, TrainOutcome};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::proto::PrototypeSet;
use layers::Cache;
use scalar::gemm;

/// Input shape plus the ordered learnable layers (everything before the
/// head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: Shape,
    #[serde(default)]
    pub embedding_init: EmbeddingInit,
    pub layers: Vec<LayerSpec>,
}

/// Initial weights of the last fully-connected (embedding) layer. Every
/// other layer uses the fan-in-scaled uniform draw.
///
/// With a fixed prototype head the embedding layer's updates stay inside the
/// span of the training prototypes, so whatever the initialisation puts
/// outside that span is never trained away and leaks into scores against
/// prototypes swapped in later. `Zero` removes that component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingInit {
    #[default]
    FanIn,
    Zero,
}

impl Architecture {
    /// Output shape of each layer, validating the chain.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for spec in &self.layers {
            shape = spec.output_shape(shape)?;
            out.push(shape);
        }
        Ok(out)
    }

    /// Width of the activation vector handed to the head.
    pub fn embedding_dim(&self) -> Result<usize> {
        Ok(self.shapes()?.last().copied().unwrap_or(self.input).len())
    }

    /// Replaces the width of the last fully-connected layer, keeping
    /// everything else.
    pub fn with_embedding_dim(mut self, k: usize) -> Self {
        if let Some(LayerSpec::FullyConnected { out_dim }) = self
            .layers
            .iter_mut()
            .rev()
            .find(|l| matches!(l, LayerSpec::FullyConnected { .. }))
        {
            *out_dim = k;
        }
        self
    }

    /// Sets every dropout layer's rate.
    pub fn with_dropout(mut self, rate: f64) -> Self {
        for l in &mut self.layers {
            if let LayerSpec::Dropout { rate: r } = l {
                *r = rate;
            }
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Learned,
    Prototype,
}

/// The final, class-producing layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Head<T> {
    /// Trainable `C x k` weights plus bias.
    Learned {
        class_ids: Vec<String>,
        weights: Vec<T>,
        bias: Vec<T>,
    },
    /// Fixed inner products with the prototype embeddings; no bias, never
    /// updated.
    Prototype { set: PrototypeSet, weights: Vec<T> },
}

impl<T: Scalar> Head<T> {
    pub fn prototype(set: PrototypeSet) -> Self {
        let weights = set.matrix().iter().map(|&v| T::from_f64(v as f64)).collect();
        Head::Prototype { set, weights }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Learned { .. } => HeadKind::Learned,
            Head::Prototype { .. } => HeadKind::Prototype,
        }
    }

    pub fn class_ids(&self) -> &[String] {
        match self {
            Head::Learned { class_ids, .. } => class_ids,
            Head::Prototype { set, .. } => set.class_ids(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids().len()
    }

    pub fn prototypes(&self) -> Option<&PrototypeSet> {
        match self {
            Head::Prototype { set, .. } => Some(set),
            Head::Learned { .. } => None,
        }
    }

    fn weights(&self) -> &[T] {
        match self {
            Head::Learned { weights, .. } | Head::Prototype { weights, .. } => weights,
        }
    }

    fn logits(&self, v: &[T]) -> Vec<T> {
        let c = self.num_classes();
        let mut z = match self {
            Head::Learned { bias, .. } => bias.clone(),
            Head::Prototype { .. } => vec![T::zero(); c],
        };
        gemm(false, false, c, v.len(), 1, self.weights(), v, &mut z, true);
        z
    }
}

/// How the head should be initialized by [`Network::new`].
#[derive(Debug, Clone)]
pub enum HeadInit {
    Learned { class_ids: Vec<String> },
    Prototype(PrototypeSet),
}

#[derive(Debug)]
pub enum Mode<'a> {
    Inference,
    /// Dropout masks are drawn from the given generator.
    Training(&'a mut ChaCha8Rng),
}

/// Result of a forward pass. Training-mode passes keep the intermediates
/// needed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub logits: Vec<T>,
    pub penultimate: Vec<T>,
    tape: Option<Vec<Cache<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameter gradients aligned with the network's layers. `head` is `None`
/// for a fixed prototype head.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<ParamGrad<T>>,
    pub head: Option<ParamGrad<T>>,
    /// Gradient with respect to the network input.
    pub input: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| ParamGrad {
                weights: vec![T::zero(); l.weights.len()],
                bias: vec![T::zero(); l.bias.len()],
            })
            .collect();
        let head = match &net.head {
            Head::Learned { weights, bias, .. } => Some(ParamGrad {
                weights: vec![T::zero(); weights.len()],
                bias: vec![T::zero(); bias.len()],
            }),
            Head::Prototype { .. } => None,
        };
        Gradients {
            layers,
            head,
            input: vec![T::zero(); net.input.len()],
        }
    }

    /// All parameter gradient slices in declaration order.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for g in self.layers.iter().chain(self.head.iter()) {
            out.push(g.weights.as_slice());
            out.push(g.bias.as_slice());
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for g in self.layers.iter_mut().chain(self.head.iter_mut()) {
            out.push(g.weights.as_mut_slice());
            out.push(g.bias.as_mut_slice());
        }
        out
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
        for (d, &s) in self.input.iter_mut().zip(&other.input) {
            *d = *d + s;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = *v * factor);
        }
        self.input.iter_mut().for_each(|v| *v = *v * factor);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    architecture: Architecture,
    input: Shape,
    layers: Vec<Layer<T>>,
    head: Head<T>,
}

impl<T: Scalar> Network<T> {
    /// Builds and initializes a network; weights come from a generator
    /// seeded with `seed`.
    pub fn new(architecture: &Architecture, head: HeadInit, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(architecture.layers.len());
        let mut shape = architecture.input;
        let embedding_layer = architecture
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::FullyConnected { .. }));
        for (i, spec) in architecture.layers.iter().enumerate() {
            let mut layer = Layer::new(spec.clone(), shape)?;
            layer.init(&mut rng);
            if architecture.embedding_init == EmbeddingInit::Zero && Some(i) == embedding_layer {
                layer.weights.fill(T::zero());
            }
            shape = layer.output;
            layers.push(layer);
        }
        let k = shape.len();
        let head = match head {
            HeadInit::Learned { class_ids } => {
                if class_ids.is_empty() {
                    return Err(Error::InvalidConfig("learned head needs at least one class".into()));
                }
                let limit = (6.0 / k as f64).sqrt();
                let weights = (0..class_ids.len() * k)
                    .map(|_| T::from_f64(rand::Rng::gen_range(&mut rng, -limit..limit)))
                    .collect();
                Head::Learned {
                    bias: vec![T::zero(); class_ids.len()],
                    class_ids,
                    weights,
                }
            }
            HeadInit::Prototype(set) => {
                if set.dim() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        got: set.dim(),
                    });
                }
                Head::prototype(set)
            }
        };
        Ok(Network {
            architecture: architecture.clone(),
            input: architecture.input,
            layers,
            head,
        })
    }

    /// Assembles a network from already-populated parts (checkpoint loading).
    pub(crate) fn from_parts(architecture: Architecture, layers: Vec<Layer<T>>, head: Head<T>) -> Self {
        Network {
            input: architecture.input,
            architecture,
            layers,
            head,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn head(&self) -> &Head<T> {
        &self.head
    }

    pub fn class_ids(&self) -> &[String] {
        self.head.class_ids()
    }

    /// Width `k` of the activation vector feeding the head.
    pub fn embedding_dim(&self) -> usize {
        self.layers.last().map(|l| l.output).unwrap_or(self.input).len()
    }

    pub(crate) fn set_head(&mut self, head: Head<T>) {
        self.head = head;
    }

    /// Every learnable parameter slice in declaration order: each layer's
    /// weights then bias, then the learned head if present.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
        }
        if let Head::Learned { weights, bias, .. } = &self.head {
            out.push(weights.as_slice());
            out.push(bias.as_slice());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        if let Head::Learned { weights, bias, .. } = &mut self.head {
            out.push(weights.as_mut_slice());
            out.push(bias.as_mut_slice());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Converts an image to the network's input vector.
    pub fn input_from_image(&self, image: &Image) -> Result<Vec<T>> {
        let got = Shape::new(image.channels(), image.height(), image.width());
        if got != self.input {
            return Err(Error::ShapeMismatch {
                expected: self.input.to_string(),
                got: got.to_string(),
            });
        }
        Ok(image.to_chw().into_iter().map(|v| T::from_f64(v as f64)).collect())
    }

    pub fn forward(&self, image: &Image, mode: Mode<'_>) -> Result<ForwardPass<T>> {
        let x = self.input_from_image(image)?;
        self.forward_input(&x, mode)
    }

    /// Forward pass on a flat `C x H x W` input vector.
    pub fn forward_input(&self, input: &[T], mode: Mode<'_>) -> Result<ForwardPass<T>> {
        if input.len() != self.input.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", self.input.len()),
                got: format!("{} values", input.len()),
            });
        }
        let mut x = input.to_vec();
        let (mut rng, mut tape) = match mode {
            Mode::Inference => (None, None),
            Mode::Training(rng) => (Some(rng), Some(Vec::with_capacity(self.layers.len()))),
        };
        for layer in &self.layers {
            let (y, cache) = layer.forward(&x, rng.as_deref_mut());
            if let (Some(tape), Some(cache)) = (tape.as_mut(), cache) {
                tape.push(cache);
            }
            x = y;
        }
        let logits = self.head.logits(&x);
        Ok(ForwardPass {
            logits,
            penultimate: x,
            tape,
        })
    }

    /// Exact gradients of a scalar loss given `dlogits = dL/dz`, using the
    /// intermediates of a training-mode `pass`.
    pub fn backward(&self, pass: &ForwardPass<T>, dlogits: &[T]) -> Result<Gradients<T>> {
        let tape = pass.tape.as_ref().ok_or(Error::NoForwardState)?;
        if dlogits.len() != self.head.num_classes() {
            return Err(Error::DimensionMismatch {
                expected: self.head.num_classes(),
                got: dlogits.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let c = self.head.num_classes();
        let k = pass.penultimate.len();
        if let Some(hg) = grads.head.as_mut() {
            gemm(false, false, c, 1, k, dlogits, &pass.penultimate, &mut hg.weights, true);
            hg.bias.copy_from_slice(dlogits);
        }
        let mut dx = vec![T::zero(); k];
        gemm(true, false, k, c, 1, self.head.weights(), dlogits, &mut dx, false);

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let g = &mut grads.layers[i];
            dx = layer.backward(&tape[i], &dx, &mut g.weights, &mut g.bias);
        }
        grads.input = dx;
        Ok(grads)
    }

    /// Softmax probabilities over the head's classes, inference mode.
    pub fn predict_proba(&self, image: &Image) -> Result<Vec<T>> {
        Ok(softmax(&self.forward(image, Mode::Inference)?.logits))
    }

    /// Index of the predicted class, inference mode; ties go to the lowest
    /// index.
    pub fn predict(&self, image: &Image) -> Result<usize> {
        Ok(argmax(&self.forward(image, Mode::Inference)?.logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hog::HogConfig;

    fn unit_rows(rows: &[&[f32]]) -> PrototypeSet {
        let ids = (0..rows.len()).map(|i| format!("p{i}")).collect();
        let matrix = rows.iter().flat_map(|r| r.iter().copied()).collect();
        PrototypeSet::from_matrix(ids, rows[0].len(), matrix, HogConfig::default()).unwrap()
    }

    fn identity_arch(k: usize) -> Architecture {
        Architecture {
            input: Shape::flat(k),
            embedding_init: Default::default(),
            layers: vec![],
        }
    }

    #[test]
    fn prototype_head_picks_matching_direction() {
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let set = unit_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[h, h]]);
        let net = Network::<f64>::new(&identity_arch(2), HeadInit::Prototype(set), 0).unwrap();
        let pass = net.forward_input(&[h as f64, h as f64], Mode::Inference).unwrap();
        assert_eq!(argmax(&pass.logits), 2);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let arch = Architecture {
            input: Shape::new(1, 4, 4),
            embedding_init: Default::default(),
            layers: vec![
                LayerSpec::Convolution {
                    out_maps: 2,
                    kernel_side: 3,
                },
                LayerSpec::Activation {
                    function: Nonlinearity::Relu,
                },
                LayerSpec::FullyConnected { out_dim: 3 },
            ],
        };
        let mut net = Network::<f64>::new(
            &arch,
            HeadInit::Learned {
                class_ids: vec!["a".into(), "b".into()],
            },
            1,
        )
        .unwrap();
        for p in net.params_mut() {
            p.fill(0.0);
        }
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let pass = net.forward_input(&x, Mode::Inference).unwrap();
        assert_eq!(pass.logits, vec![0.0, 0.0]);
    }

    #[test]
    fn backward_needs_training_pass() {
        let set = unit_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let net = Network::<f64>::new(&identity_arch(2), HeadInit::Prototype(set), 0).unwrap();
        let pass = net.forward_input(&[1.0, 2.0], Mode::Inference).unwrap();
        assert!(matches!(net.backward(&pass, &[1.0, 0.0]), Err(Error::NoForwardState)));
    }

    #[test]
    fn fixed_head_reports_no_gradient() {
        let set = unit_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let arch = Architecture {
            input: Shape::flat(3),
            embedding_init: Default::default(),
            layers: vec![LayerSpec::FullyConnected { out_dim: 2 }],
        };
        let net = Network::<f64>::new(&arch, HeadInit::Prototype(set), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = net.forward_input(&[1.0, 2.0, 3.0], Mode::Training(&mut rng)).unwrap();
        let g = net.backward(&pass, &[0.5, -0.5]).unwrap();
        assert!(g.head.is_none());
        assert_eq!(g.slices().len(), 2);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let set = unit_rows(&[&[1.0, 0.0]]);
        let net = Network::<f32>::new(&identity_arch(2), HeadInit::Prototype(set), 0).unwrap();
        let img = Image::filled(3, 3, crate::image::ColorMode::Gray, 0.0);
        assert!(matches!(
            net.forward(&img, Mode::Inference),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn prototype_width_must_match_embedding() {
        let set = unit_rows(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(
            Network::<f32>::new(&identity_arch(2), HeadInit::Prototype(set), 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
