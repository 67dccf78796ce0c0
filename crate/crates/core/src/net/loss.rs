use super::Scalar;

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Negative log-likelihood `-ln p[label]`, with the argument clamped at
/// `1e-12`.
pub fn nll_loss<T: Scalar>(probabilities: &[T], label: usize) -> T {
    let floor = T::from_f64(1e-12);
    let p = probabilities[label];
    -(if p > floor { p } else { floor }).ln()
}

/// Gradient of `nll_loss(softmax(z), label)` with respect to `z`.
pub fn nll_logit_gradient<T: Scalar>(probabilities: &[T], label: usize) -> Vec<T> {
    let mut g = probabilities.to_vec();
    g[label] = g[label] - T::one();
    g
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
