//! Per-layer forward/backward kernels on single samples in `C x H x W`
//! layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::gemm;
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn flat(len: usize) -> Self {
        Shape::new(len, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Relu,
    Tanh,
}

/// One layer of the learnable mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (unpadded) stride-1 convolution with square kernels.
    Convolution { out_maps: usize, kernel_side: usize },
    /// Non-overlapping max pooling; trailing rows/columns that do not fill
    /// a window are dropped.
    MaxPool { window: usize },
    FullyConnected { out_dim: usize },
    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)` during
    /// training, identity at inference.
    Dropout { rate: f64 },
    Activation { function: Nonlinearity },
}

impl LayerSpec {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match *self {
            LayerSpec::Convolution {
                out_maps,
                kernel_side,
            } => {
                if out_maps == 0 || kernel_side == 0 {
                    return bad("convolution needs out_maps and kernel_side > 0".into());
                }
                if kernel_side > input.height || kernel_side > input.width {
                    return bad(format!("{kernel_side}x{kernel_side} kernel exceeds input {input}"));
                }
                Ok(Shape::new(
                    out_maps,
                    input.height - kernel_side + 1,
                    input.width - kernel_side + 1,
                ))
            }
            LayerSpec::MaxPool { window } => {
                if window == 0 || window > input.height || window > input.width {
                    return bad(format!("pool window {window} does not fit input {input}"));
                }
                Ok(Shape::new(
                    input.channels,
                    input.height / window,
                    input.width / window,
                ))
            }
            LayerSpec::FullyConnected { out_dim } => {
                if out_dim == 0 {
                    return bad("fully_connected needs out_dim > 0".into());
                }
                Ok(Shape::flat(out_dim))
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return bad(format!("dropout rate {rate} outside [0, 1)"));
                }
                Ok(input)
            }
            LayerSpec::Activation { .. } => Ok(input),
        }
    }

    /// `(weights, bias)` element counts.
    pub fn param_counts(&self, input: Shape) -> (usize, usize) {
        match *self {
            LayerSpec::Convolution {
                out_maps,
                kernel_side,
            } => (
                out_maps * input.channels * kernel_side * kernel_side,
                out_maps,
            ),
            LayerSpec::FullyConnected { out_dim } => (out_dim * input.len(), out_dim),
            _ => (0, 0),
        }
    }

    pub fn fan_in(&self, input: Shape) -> usize {
        match *self {
            LayerSpec::Convolution { kernel_side, .. } => input.channels * kernel_side * kernel_side,
            LayerSpec::FullyConnected { .. } => input.len(),
            _ => 0,
        }
    }
}

/// A layer with its resolved shapes and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Intermediates retained by a training-mode forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache<T> {
    Conv { cols: Vec<T> },
    Pool { argmax: Vec<usize> },
    Dense { input: Vec<T> },
    Dropout { mask: Vec<T> },
    Activation { output: Vec<T> },
}

impl<T: Scalar> Layer<T> {
    pub fn new(spec: LayerSpec, input: Shape) -> Result<Self> {
        let output = spec.output_shape(input)?;
        let (w, b) = spec.param_counts(input);
        Ok(Layer {
            spec,
            input,
            output,
            weights: vec![T::zero(); w],
            bias: vec![T::zero(); b],
        })
    }

    /// Fan-in-scaled uniform weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let fan_in = self.spec.fan_in(self.input);
        if fan_in == 0 {
            return;
        }
        let limit = (6.0 / fan_in as f64).sqrt();
        for w in &mut self.weights {
            *w = T::from_f64(rng.gen_range(-limit..limit));
        }
        self.bias.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn has_params(&self) -> bool {
        !self.weights.is_empty()
    }

    /// `rng` is `Some` in training mode; dropout is the identity otherwise.
    pub(crate) fn forward<R: Rng>(&self, x: &[T], rng: Option<&mut R>) -> (Vec<T>, Option<Cache<T>>) {
        let training = rng.is_some();
        match self.spec {
            LayerSpec::Convolution {
                out_maps,
                kernel_side,
            } => {
                let cols = im2col(x, self.input, kernel_side);
                let patch = self.input.channels * kernel_side * kernel_side;
                let positions = self.output.height * self.output.width;
                let mut y = vec![T::zero(); out_maps * positions];
                for (m, row) in y.chunks_exact_mut(positions).enumerate() {
                    row.fill(self.bias[m]);
                }
                gemm(false, false, out_maps, patch, positions, &self.weights, &cols, &mut y, true);
                (y, training.then_some(Cache::Conv { cols }))
            }
            LayerSpec::MaxPool { window } => {
                let (y, argmax) = max_pool(x, self.input, self.output, window);
                (y, training.then_some(Cache::Pool { argmax }))
            }
            LayerSpec::FullyConnected { out_dim } => {
                let mut y = self.bias.clone();
                gemm(false, false, out_dim, x.len(), 1, &self.weights, x, &mut y, true);
                (
                    y,
                    training.then(|| Cache::Dense { input: x.to_vec() }),
                )
            }
            LayerSpec::Dropout { rate } => match rng {
                Some(rng) => {
                    let keep = T::from_f64(1.0 / (1.0 - rate));
                    let mask: Vec<T> = (0..x.len())
                        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
                        .collect();
                    let y = x.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
                    (y, Some(Cache::Dropout { mask }))
                }
                None => (x.to_vec(), None),
            },
            LayerSpec::Activation { function } => {
                let y: Vec<T> = match function {
                    Nonlinearity::Relu => x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
                    Nonlinearity::Tanh => x.iter().map(|v| v.tanh()).collect(),
                };
                let cache = training.then(|| Cache::Activation { output: y.clone() });
                (y, cache)
            }
        }
    }

    /// Returns the input gradient and accumulates parameter gradients into
    /// `dw` / `db`.
    pub(crate) fn backward(&self, cache: &Cache<T>, dy: &[T], dw: &mut [T], db: &mut [T]) -> Vec<T> {
        match (&self.spec, cache) {
            (
                LayerSpec::Convolution {
                    out_maps,
                    kernel_side,
                },
                Cache::Conv { cols },
            ) => {
                let patch = self.input.channels * kernel_side * kernel_side;
                let positions = self.output.height * self.output.width;
                // dW += dY * cols^T
                gemm(false, true, *out_maps, positions, patch, dy, cols, dw, true);
                for (m, row) in dy.chunks_exact(positions).enumerate() {
                    db[m] = db[m] + row.iter().copied().sum();
                }
                // dcols = W^T * dY
                let mut dcols = vec![T::zero(); patch * positions];
                gemm(true, false, patch, *out_maps, positions, &self.weights, dy, &mut dcols, false);
                col2im(&dcols, self.input, *kernel_side)
            }
            (LayerSpec::MaxPool { .. }, Cache::Pool { argmax }) => {
                let mut dx = vec![T::zero(); self.input.len()];
                for (&src, &g) in argmax.iter().zip(dy) {
                    dx[src] = dx[src] + g;
                }
                dx
            }
            (LayerSpec::FullyConnected { out_dim }, Cache::Dense { input }) => {
                let n_in = input.len();
                gemm(false, false, *out_dim, 1, n_in, dy, input, dw, true);
                for (b, &g) in db.iter_mut().zip(dy) {
                    *b = *b + g;
                }
                let mut dx = vec![T::zero(); n_in];
                gemm(true, false, n_in, *out_dim, 1, &self.weights, dy, &mut dx, false);
                dx
            }
            (LayerSpec::Dropout { .. }, Cache::Dropout { mask }) => {
                dy.iter().zip(mask).map(|(&g, &m)| g * m).collect()
            }
            (LayerSpec::Activation { function }, Cache::Activation { output }) => match function {
                Nonlinearity::Relu => dy
                    .iter()
                    .zip(output)
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect(),
                Nonlinearity::Tanh => dy
                    .iter()
                    .zip(output)
                    .map(|(&g, &y)| g * (T::one() - y * y))
                    .collect(),
            },
            _ => unreachable!("cache variant does not match layer kind"),
        }
    }
}

/// Unfold `k x k` patches: row `(c, ky, kx)`, column `(oy, ox)`.
fn im2col<T: Scalar>(x: &[T], input: Shape, k: usize) -> Vec<T> {
    let oh = input.height - k + 1;
    let ow = input.width - k + 1;
    let positions = oh * ow;
    let mut cols = vec![T::zero(); input.channels * k * k * positions];
    for c in 0..input.channels {
        let plane = &x[c * input.height * input.width..(c + 1) * input.height * input.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * positions;
                let dst = &mut cols[row..row + positions];
                for oy in 0..oh {
                    let src = &plane[(oy + ky) * input.width + kx..][..ow];
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], input: Shape, k: usize) -> Vec<T> {
    let oh = input.height - k + 1;
    let ow = input.width - k + 1;
    let positions = oh * ow;
    let mut dx = vec![T::zero(); input.len()];
    for c in 0..input.channels {
        let plane = &mut dx[c * input.height * input.width..(c + 1) * input.height * input.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * positions;
                let src = &cols[row..row + positions];
                for oy in 0..oh {
                    let dst = &mut plane[(oy + ky) * input.width + kx..][..ow];
                    for (d, &s) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
    dx
}

fn max_pool<T: Scalar>(x: &[T], input: Shape, output: Shape, w: usize) -> (Vec<T>, Vec<usize>) {
    let mut y = Vec::with_capacity(output.len());
    let mut arg = Vec::with_capacity(output.len());
    for c in 0..input.channels {
        let base = c * input.height * input.width;
        for oy in 0..output.height {
            for ox in 0..output.width {
                let mut best_idx = base + (oy * w) * input.width + ox * w;
                let mut best = x[best_idx];
                for ky in 0..w {
                    for kx in 0..w {
                        let idx = base + (oy * w + ky) * input.width + ox * w + kx;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                y.push(best);
                arg.push(best_idx);
            }
        }
    }
    (y, arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn no_rng() -> Option<&'static mut ChaCha8Rng> {
        None
    }

    #[test]
    fn tiny_convolution_by_hand() {
        // 3x3 input 1..9, one 2x2 kernel [[1,0],[0,-1]], bias 0.5
        let mut layer = Layer::<f64>::new(
            LayerSpec::Convolution {
                out_maps: 1,
                kernel_side: 2,
            },
            Shape::new(1, 3, 3),
        )
        .unwrap();
        layer.weights = vec![1.0, 0.0, 0.0, -1.0];
        layer.bias = vec![0.5];
        let x: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let (y, _) = layer.forward(&x, no_rng());
        // each output = x[i,j] - x[i+1,j+1] + 0.5 = -4 + 0.5
        assert_eq!(y, vec![-3.5; 4]);
        assert_eq!(layer.output, Shape::new(1, 2, 2));
    }

    #[test]
    fn pool_routes_to_first_max() {
        let layer = Layer::<f64>::new(LayerSpec::MaxPool { window: 2 }, Shape::new(1, 2, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, cache) = layer.forward(&[3.0, 3.0, 1.0, 3.0], Some(&mut rng));
        assert_eq!(y, vec![3.0]);
        let dx = layer.backward(&cache.unwrap(), &[1.0], &mut [], &mut []);
        assert_eq!(dx, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_drops_ragged_edge() {
        let spec = LayerSpec::MaxPool { window: 2 };
        assert_eq!(spec.output_shape(Shape::new(2, 5, 7)).unwrap(), Shape::new(2, 2, 3));
    }

    #[test]
    fn dropout_identity_at_inference_and_rate_zero() {
        let layer = Layer::<f64>::new(LayerSpec::Dropout { rate: 0.5 }, Shape::flat(4)).unwrap();
        let x = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(layer.forward(&x, no_rng()).0, x);
        let zero = Layer::<f64>::new(LayerSpec::Dropout { rate: 0.0 }, Shape::flat(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(zero.forward(&x, Some(&mut rng)).0, x);
    }

    #[test]
    fn invalid_specs() {
        let s = Shape::new(1, 4, 4);
        assert!(LayerSpec::Dropout { rate: 1.0 }.output_shape(s).is_err());
        assert!(LayerSpec::MaxPool { window: 5 }.output_shape(s).is_err());
        assert!(LayerSpec::Convolution {
            out_maps: 2,
            kernel_side: 5
        }
        .output_shape(s)
        .is_err());
    }

    use rand::SeedableRng;
}
