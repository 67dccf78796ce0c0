use super::{Gradients, Network, Scalar};
use crate::error::{Error, Result};

/// SGD with classical momentum:
/// `velocity <- momentum * velocity + grad; theta <- theta - lr * velocity`.
///
/// Only learnable parameters are touched; a fixed prototype head has no
/// slot here at all.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(learning_rate: T, momentum: T) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        let grad_slices = grads.slices();
        let mut params = net.params_mut();
        if grad_slices.len() != params.len()
            || params.iter().zip(&grad_slices).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameter tensors", params.len()),
                got: format!("{} gradient tensors", grad_slices.len()),
            });
        }
        if self.velocity.is_empty() {
            self.velocity = grad_slices.iter().map(|g| vec![T::zero(); g.len()]).collect();
        }
        for ((param, grad), vel) in params.iter_mut().zip(&grad_slices).zip(&mut self.velocity) {
            for ((p, &g), v) in param.iter_mut().zip(grad.iter()).zip(vel.iter_mut()) {
                *v = self.momentum * *v + g;
                *p = *p - self.learning_rate * *v;
            }
        }
        Ok(())
    }
}
