//! ConSE straight from its definition.

/// Seen class `c` is selected when fewer than `top_t` classes beat it
/// (higher probability, or equal probability and lower index). The
/// selected embeddings are averaged with probability weights in rank order;
/// the answer is the unseen prototype with the largest cosine, first one
/// on ties.
pub fn conse(probs: &[f64], seen: &[Vec<f32>], unseen: &[Vec<f32>], top_t: usize) -> usize {
    let cs = probs.len();
    let rank = |c: usize| {
        (0..cs)
            .filter(|&o| probs[o] > probs[c] || (probs[o] == probs[c] && o < c))
            .count()
    };
    let mut by_rank = vec![usize::MAX; cs];
    for c in 0..cs {
        by_rank[rank(c)] = c;
    }
    let k = seen[0].len();
    let mut e = vec![0.0f64; k];
    let mut total = 0.0;
    for &c in &by_rank[..top_t] {
        total += probs[c];
        for j in 0..k {
            e[j] += probs[c] * seen[c][j] as f64;
        }
    }
    for v in &mut e {
        *v /= total;
    }
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (u, proto) in unseen.iter().enumerate() {
        let (mut dot, mut ne, mut np) = (0.0, 0.0, 0.0);
        for j in 0..k {
            let p = proto[j] as f64;
            dot += e[j] * p;
            ne += e[j] * e[j];
            np += p * p;
        }
        let sim = if ne == 0.0 || np == 0.0 { 0.0 } else { dot / (ne.sqrt() * np.sqrt()) };
        if sim > best_sim {
            best_sim = sim;
            best = u;
        }
    }
    best
}
