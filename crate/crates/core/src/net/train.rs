use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, nll_logit_gradient, nll_loss, softmax, Gradients, Mode, Network, Scalar, Sgd};
use crate::error::{Error, Result};
use crate::image::Image;

/// An image paired with its target index in the head's class list.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub image: &'a Image,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Keep a snapshot of the network before training and after every
    /// epoch.
    #[serde(default)]
    pub keep_checkpoints: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            keep_checkpoints: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub metrics: Vec<EpochMetrics>,
    /// `epochs + 1` snapshots (initial state first) when requested.
    pub checkpoints: Vec<Network<T>>,
}

/// Mini-batch SGD over a seeded shuffle of `train`. Gradients within a
/// batch are summed in sample order and averaged.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train: &[Example<'_>],
    val: &[Example<'_>],
    schedule: &Schedule,
) -> Result<TrainOutcome<T>> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if schedule.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let classes = net.head().num_classes();
    if let Some(bad) = train.iter().chain(val).find(|e| e.target >= classes) {
        return Err(Error::InvalidConfig(format!(
            "target {} outside {classes} head classes",
            bad.target
        )));
    }

    let mut order_rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    dropout_rng.set_stream(1);
    let mut opt = Sgd::new(
        T::from_f64(schedule.learning_rate),
        T::from_f64(schedule.momentum),
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::with_capacity(schedule.epochs);
    let mut checkpoints = Vec::new();
    if schedule.keep_checkpoints {
        checkpoints.push(net.clone());
    }

    for epoch in 1..=schedule.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(schedule.batch_size) {
            let mut acc = Gradients::zeros_like(net);
            for &i in batch {
                let ex = train[i];
                let pass = net.forward(ex.image, Mode::Training(&mut dropout_rng))?;
                let probs = softmax(&pass.logits);
                loss_sum += nll_loss(&probs, ex.target).to_f64();
                if argmax(&probs) == ex.target {
                    correct += 1;
                }
                let g = net.backward(&pass, &nll_logit_gradient(&probs, ex.target))?;
                acc.add_assign(&g);
            }
            acc.scale(T::from_f64(1.0 / batch.len() as f64));
            opt.step(net, &acc)?;
        }
        let val_accuracy = if val.is_empty() {
            None
        } else {
            Some(accuracy(net, val)?)
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} train acc {:.4} val acc {:?}",
            m.train_loss,
            m.train_accuracy,
            m.val_accuracy
        );
        metrics.push(m);
        if schedule.keep_checkpoints {
            checkpoints.push(net.clone());
        }
    }
    Ok(TrainOutcome {
        metrics,
        checkpoints,
    })
}

/// Fraction of examples classified correctly in inference mode.
pub fn accuracy<T: Scalar>(net: &Network<T>, examples: &[Example<'_>]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0;
    for ex in examples {
        if net.predict(ex.image)? == ex.target {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}
