//! Central finite differences against `Network::backward`, in f64.

use protoprior::hog::HogConfig;
use protoprior::net::{
    nll_logit_gradient, nll_loss, softmax, Architecture, HeadInit, LayerSpec, Mode, Network, Nonlinearity, Shape,
};
use protoprior::proto::PrototypeSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;

/// Relative error `|a - n| / max(|a|, |n|, FLOOR)`. The floor keeps
/// gradients that are zero up to rounding from being compared relatively.
pub const FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub struct Case {
    pub net: Network<f64>,
    pub input: Vec<f64>,
    pub label: usize,
    pub dropout_seed: u64,
}

fn act<R: Rng>(rng: &mut R) -> LayerSpec {
    LayerSpec::Activation {
        function: if rng.gen() { Nonlinearity::Relu } else { Nonlinearity::Tanh },
    }
}

/// A random small network containing every layer kind: convolution,
/// activation, max-pool, fully-connected, dropout, and either a learned or
/// a prototype head.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = rng.gen_range(1..=2);
    let side = rng.gen_range(6..=9);
    let kernel = rng.gen_range(2..=3);
    let mut layers = vec![
        LayerSpec::Convolution {
            out_maps: rng.gen_range(1..=3),
            kernel_side: kernel,
        },
        act(&mut rng),
        LayerSpec::MaxPool { window: 2 },
        LayerSpec::FullyConnected {
            out_dim: rng.gen_range(3..=6),
        },
        act(&mut rng),
        LayerSpec::Dropout {
            rate: rng.gen_range(0.0..0.5),
        },
    ];
    if rng.gen_bool(0.5) {
        layers.push(LayerSpec::Convolution {
            out_maps: 2,
            kernel_side: 1,
        });
    }
    let k = rng.gen_range(3..=5);
    layers.push(LayerSpec::FullyConnected { out_dim: k });
    let arch = Architecture {
        input: Shape::new(channels, side, side),
        embedding_init: Default::default(),
        layers,
    };
    let classes = rng.gen_range(2..=4);
    let class_ids: Vec<String> = (0..classes).map(|c| format!("k{c}")).collect();
    let head = if rng.gen() {
        HeadInit::Learned { class_ids }
    } else {
        let mut matrix = Vec::new();
        for _ in 0..classes {
            let row: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            matrix.extend(row.iter().map(|v| (v / n) as f32));
        }
        HeadInit::Prototype(PrototypeSet::from_matrix(class_ids, k, matrix, HogConfig::default()).unwrap())
    };
    let net = Network::<f64>::new(&arch, head, rng.gen()).unwrap();
    let input = (0..arch.input.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Case {
        net,
        input,
        label: rng.gen_range(0..classes),
        dropout_seed: rng.gen(),
    }
}

fn loss(net: &Network<f64>, input: &[f64], label: usize, dropout_seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let pass = net.forward_input(input, Mode::Training(&mut rng)).unwrap();
    nll_loss(&softmax(&pass.logits), label)
}

/// `(analytic, numeric)` for every parameter and every input value.
pub fn compare(case: &Case) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(case.dropout_seed);
    let pass = case.net.forward_input(&case.input, Mode::Training(&mut rng)).unwrap();
    let grads = case
        .net
        .backward(&pass, &nll_logit_gradient(&softmax(&pass.logits), case.label))
        .unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let mut out = Vec::new();
    let mut net = case.net.clone();
    for (t, tensor) in analytic.iter().enumerate() {
        for (i, &a) in tensor.iter().enumerate() {
            let original = net.params()[t][i];
            net.params_mut()[t][i] = original + STEP;
            let plus = loss(&net, &case.input, case.label, case.dropout_seed);
            net.params_mut()[t][i] = original - STEP;
            let minus = loss(&net, &case.input, case.label, case.dropout_seed);
            net.params_mut()[t][i] = original;
            out.push((a, (plus - minus) / (2.0 * STEP)));
        }
    }
    let mut input = case.input.clone();
    for i in 0..input.len() {
        let original = input[i];
        input[i] = original + STEP;
        let plus = loss(&case.net, &input, case.label, case.dropout_seed);
        input[i] = original - STEP;
        let minus = loss(&case.net, &input, case.label, case.dropout_seed);
        input[i] = original;
        out.push((grads.input[i], (plus - minus) / (2.0 * STEP)));
    }
    out
}

/// Largest relative error over every parameter and input of `case`.
pub fn max_relative_error(case: &Case) -> f64 {
    compare(case)
        .into_iter()
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
