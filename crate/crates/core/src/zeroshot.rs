//! Zero-shot protocol: seen/unseen class splits, prototype-swap evaluation,
//! the convex-combination-of-embeddings (ConSE) baseline, paired
//! significance testing and the seen/unseen trade-off curve.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{mix_seed, Dataset, Partition};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::{accuracy, argmax, softmax, train, Architecture, HeadInit, Mode, Network, Scalar, Schedule};
use crate::proto::{cosine, swap, PrototypeSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
    pub seed: u64,
}

/// `num_trials` random seen/unseen splits. Each keeps the input class order
/// within both halves and is reproducible from `master_seed`.
pub fn make_splits(class_ids: &[String], num_unseen: usize, num_trials: usize, master_seed: u64) -> Result<Vec<ClassSplit>> {
    if num_unseen == 0 || num_unseen >= class_ids.len() {
        return Err(Error::InvalidCount(format!(
            "num_unseen must be in 1..{}, got {num_unseen}",
            class_ids.len()
        )));
    }
    Ok((0..num_trials)
        .map(|trial| {
            let seed = mix_seed(master_seed, 0x5EED, trial as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut chosen: Vec<usize> = (0..class_ids.len()).collect();
            chosen.shuffle(&mut rng);
            let mut unseen_idx = chosen[..num_unseen].to_vec();
            unseen_idx.sort_unstable();
            let (mut seen, mut unseen) = (Vec::new(), Vec::new());
            for (i, id) in class_ids.iter().enumerate() {
                if unseen_idx.binary_search(&i).is_ok() {
                    unseen.push(id.clone());
                } else {
                    seen.push(id.clone());
                }
            }
            ClassSplit { seen, unseen, seed }
        })
        .collect())
}

/// An image labelled by class id.
#[derive(Debug, Clone, Copy)]
pub struct LabeledImage<'a> {
    pub image: &'a Image,
    pub class_id: &'a str,
}

/// Samples of `partition` belonging to `classes`.
pub fn labeled<'a>(dataset: &'a Dataset, partition: Partition, classes: &[String]) -> Vec<LabeledImage<'a>> {
    dataset
        .samples
        .iter()
        .zip(&dataset.partitions)
        .filter(|(s, p)| **p == partition && classes.iter().any(|c| c == dataset.class_id(s.label)))
        .map(|(s, _)| LabeledImage {
            image: &s.image,
            class_id: dataset.class_id(s.label),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_ids: Vec<String>,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub overall_accuracy: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub total: usize,
    pub trial_seed: Option<u64>,
    pub checkpoint_id: Option<String>,
}

impl EvalReport {
    /// Builds a report from `(truth, predicted)` index pairs into
    /// `class_ids`.
    pub fn from_pairs(class_ids: &[String], pairs: &[(usize, usize)]) -> Self {
        let c = class_ids.len();
        let mut confusion = vec![vec![0u64; c]; c];
        for &(t, p) in pairs {
            confusion[t][p] += 1;
        }
        let correct: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect();
        EvalReport {
            class_ids: class_ids.to_vec(),
            per_class_accuracy,
            overall_accuracy: if pairs.is_empty() {
                0.0
            } else {
                correct as f64 / pairs.len() as f64
            },
            confusion,
            total: pairs.len(),
            trial_seed: None,
            checkpoint_id: None,
        }
    }
}

/// Evaluates `net` in any label space `prototypes` defines: swaps the head
/// to `prototypes` and classifies every sample.
pub fn evaluate_with_prototypes<T: Scalar>(
    net: &Network<T>,
    prototypes: &PrototypeSet,
    samples: &[LabeledImage<'_>],
) -> Result<EvalReport> {
    let index: HashMap<&str, usize> = prototypes
        .class_ids()
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let swapped = swap(net, prototypes.clone())?;
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let truth = *index
            .get(s.class_id)
            .ok_or_else(|| Error::LabelOutsideUnseen(s.class_id.to_string()))?;
        pairs.push((truth, swapped.predict(s.image)?));
    }
    Ok(EvalReport::from_pairs(prototypes.class_ids(), &pairs))
}

/// Zero-shot evaluation: the head is replaced by the unseen prototypes, so
/// only labels from `split.unseen` can be produced.
pub fn evaluate_unseen<T: Scalar>(
    net: &Network<T>,
    split: &ClassSplit,
    prototypes_unseen: &PrototypeSet,
    test_samples: &[LabeledImage<'_>],
) -> Result<EvalReport> {
    check_coverage(prototypes_unseen, &split.unseen)?;
    let mut report = evaluate_with_prototypes(net, prototypes_unseen, test_samples)?;
    report.trial_seed = Some(split.seed);
    Ok(report)
}

fn check_coverage(set: &PrototypeSet, classes: &[String]) -> Result<()> {
    let mut a: Vec<&String> = set.class_ids().iter().collect();
    let mut b: Vec<&String> = classes.iter().collect();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::CoverageMismatch(format!(
            "prototypes cover {:?}, expected {:?}",
            set.class_ids(),
            classes
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConseConfig {
    /// Number of top seen-class predictions combined.
    pub top_t: usize,
}

/// ConSE on a seen-class probability vector: the `top_t` most probable seen
/// classes (ties to the lower index) give the embedding
/// `e = sum p_t phi_t / sum p_t`; the answer is the index of the unseen
/// prototype with the highest cosine to `e` (ties to the lower index).
pub fn conse_combine(seen_probs: &[f64], prototypes_seen: &PrototypeSet, prototypes_unseen: &PrototypeSet, top_t: usize) -> Result<usize> {
    let cs = prototypes_seen.len();
    if seen_probs.len() != cs {
        return Err(Error::DimensionMismatch {
            expected: cs,
            got: seen_probs.len(),
        });
    }
    if top_t == 0 || top_t > cs {
        return Err(Error::TopTOutOfRange { top_t, max: cs });
    }
    if prototypes_unseen.dim() != prototypes_seen.dim() {
        return Err(Error::DimensionMismatch {
            expected: prototypes_seen.dim(),
            got: prototypes_unseen.dim(),
        });
    }
    let mut order: Vec<usize> = (0..cs).collect();
    order.sort_by(|&a, &b| seen_probs[b].total_cmp(&seen_probs[a]).then(a.cmp(&b)));

    let mut e = vec![0.0f64; prototypes_seen.dim()];
    let mut weight = 0.0;
    for &c in &order[..top_t] {
        let p = seen_probs[c];
        weight += p;
        for (acc, &v) in e.iter_mut().zip(prototypes_seen.embedding(c)) {
            *acc += p * v as f64;
        }
    }
    e.iter_mut().for_each(|v| *v /= weight);

    let sims: Vec<f64> = (0..prototypes_unseen.len())
        .map(|u| cosine(&e, prototypes_unseen.embedding(u)))
        .collect();
    Ok(argmax(&sims))
}

/// ConSE prediction for one image; `prototypes_seen` must list the same
/// classes, in the same order, as `net_seen`'s head.
pub fn conse_predict<T: Scalar>(
    net_seen: &Network<T>,
    prototypes_seen: &PrototypeSet,
    prototypes_unseen: &PrototypeSet,
    image: &Image,
    config: &ConseConfig,
) -> Result<String> {
    if net_seen.class_ids() != prototypes_seen.class_ids() {
        return Err(Error::CoverageMismatch(
            "seen prototypes must match the network's head classes".into(),
        ));
    }
    let pass = net_seen.forward(image, Mode::Inference)?;
    let probs: Vec<f64> = softmax(&pass.logits).into_iter().map(|p| p.to_f64()).collect();
    let u = conse_combine(&probs, prototypes_seen, prototypes_unseen, config.top_t)?;
    Ok(prototypes_unseen.class_ids()[u].clone())
}

/// ConSE accuracy report over `samples` labelled in the unseen classes.
pub fn evaluate_conse<T: Scalar>(
    net_seen: &Network<T>,
    prototypes_seen: &PrototypeSet,
    prototypes_unseen: &PrototypeSet,
    samples: &[LabeledImage<'_>],
    config: &ConseConfig,
) -> Result<EvalReport> {
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let truth = prototypes_unseen
            .index_of(s.class_id)
            .ok_or_else(|| Error::LabelOutsideUnseen(s.class_id.to_string()))?;
        let predicted = conse_predict(net_seen, prototypes_seen, prototypes_unseen, s.image, config)?;
        pairs.push((truth, prototypes_unseen.index_of(&predicted).expect("predicted id comes from the set")));
    }
    Ok(EvalReport::from_pairs(prototypes_unseen.class_ids(), &pairs))
}

/// Two-sided paired sign-flip permutation test on `a[i] - b[i]`. Returns
/// `(1 + #{|mean*| >= |mean|}) / (1 + resamples)`; exactly 1 when every
/// difference is zero.
pub fn paired_permutation_test(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> f64 {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.is_empty() {
        return 1.0;
    }
    let n = diffs.len() as f64;
    let observed = (diffs.iter().sum::<f64>() / n).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tolerance = 1e-12;
    let mut extreme = 0usize;
    for _ in 0..resamples {
        let s: f64 = diffs.iter().map(|&d| if rng.gen::<bool>() { d } else { -d }).sum();
        if (s / n).abs() >= observed - tolerance {
            extreme += 1;
        }
    }
    (1 + extreme) as f64 / (1 + resamples) as f64
}

/// Pearson correlation; `None` when either series is constant or shorter
/// than two points.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (xs[i] - mx, ys[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx.sqrt() * syy.sqrt()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConseBackbone {
    /// The proposed model's softmax over seen classes.
    Shared,
    /// A separately trained learned-head network over the seen classes.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub architecture: Architecture,
    pub schedule: Schedule,
    /// Defaults to the number of seen classes.
    pub conse_top_t: Option<usize>,
    pub conse_backbone: ConseBackbone,
    pub permutation_resamples: usize,
    /// Evaluate the unseen classes on this partition.
    pub unseen_partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub split: ClassSplit,
    pub proposed_accuracy: f64,
    pub conse_accuracy: f64,
    pub seen_test_accuracy: f64,
    pub conse_top_t: usize,
    pub proposed: EvalReport,
    pub conse: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub trials: usize,
    pub proposed_mean: f64,
    pub conse_mean: f64,
    pub mean_gain: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub trials: Vec<TrialResult>,
    pub summary: ComparisonSummary,
}

/// Seen prototype head, trained on `split.seen`; the returned outcome
/// holds checkpoints only when `schedule.keep_checkpoints` is set.
pub fn train_on_seen(
    dataset: &Dataset,
    prototypes: &PrototypeSet,
    split: &ClassSplit,
    architecture: &Architecture,
    schedule: &Schedule,
) -> Result<(Network<f32>, crate::net::TrainOutcome<f32>)> {
    let seen_set = prototypes.subset(&split.seen)?;
    let mut net = Network::<f32>::new(architecture, HeadInit::Prototype(seen_set), schedule.seed)?;
    let train_ex = dataset.examples(Partition::Train, &split.seen)?;
    let val_ex = dataset.examples(Partition::Val, &split.seen)?;
    let outcome = train(&mut net, &train_ex, &val_ex, schedule)?;
    Ok((net, outcome))
}

/// The schedule trial `trial` trains with: `base` with a per-trial seed.
pub fn trial_schedule(base: &Schedule, trial: usize) -> Schedule {
    Schedule {
        seed: mix_seed(base.seed, 0x7121, trial as u64),
        keep_checkpoints: false,
        ..base.clone()
    }
}

fn run_trial(
    dataset: &Dataset,
    prototypes: &PrototypeSet,
    trial: usize,
    split: &ClassSplit,
    config: &ComparisonConfig,
) -> Result<TrialResult> {
    let schedule = trial_schedule(&config.schedule, trial);
    let (net, _) = train_on_seen(dataset, prototypes, split, &config.architecture, &schedule)?;
    let seen_set = prototypes.subset(&split.seen)?;
    let unseen_set = prototypes.subset(&split.unseen)?;
    let unseen_test = labeled(dataset, config.unseen_partition, &split.unseen);
    let seen_test = dataset.examples(Partition::Test, &split.seen)?;

    let mut proposed = evaluate_unseen(&net, split, &unseen_set, &unseen_test)?;
    proposed.trial_seed = Some(split.seed);

    let top_t = config.conse_top_t.unwrap_or(split.seen.len());
    let conse_cfg = ConseConfig { top_t };
    let mut conse = match config.conse_backbone {
        ConseBackbone::Shared => evaluate_conse(&net, &seen_set, &unseen_set, &unseen_test, &conse_cfg)?,
        ConseBackbone::Separate => {
            let mut baseline = Network::<f32>::new(
                &config.architecture,
                HeadInit::Learned {
                    class_ids: split.seen.clone(),
                },
                schedule.seed ^ 1,
            )?;
            let train_ex = dataset.examples(Partition::Train, &split.seen)?;
            let val_ex = dataset.examples(Partition::Val, &split.seen)?;
            train(&mut baseline, &train_ex, &val_ex, &schedule)?;
            evaluate_conse(&baseline, &seen_set, &unseen_set, &unseen_test, &conse_cfg)?
        }
    };
    conse.trial_seed = Some(split.seed);

    Ok(TrialResult {
        trial,
        split: split.clone(),
        proposed_accuracy: proposed.overall_accuracy,
        conse_accuracy: conse.overall_accuracy,
        seen_test_accuracy: if seen_test.is_empty() {
            0.0
        } else {
            accuracy(&net, &seen_test)?
        },
        conse_top_t: top_t,
        proposed,
        conse,
    })
}

/// Trains one prototype-head model per split on the seen classes, then
/// scores the unseen test samples with prototype swap and with ConSE.
/// Trials run in parallel; results are in split order.
pub fn run_zero_shot_comparison(
    dataset: &Dataset,
    prototypes: &PrototypeSet,
    splits: &[ClassSplit],
    config: &ComparisonConfig,
) -> Result<Comparison> {
    if splits.is_empty() {
        return Err(Error::InvalidCount("at least one split is required".into()));
    }
    let trials: Vec<TrialResult> = splits
        .par_iter()
        .enumerate()
        .map(|(i, split)| run_trial(dataset, prototypes, i, split, config))
        .collect::<Result<_>>()?;
    let proposed: Vec<f64> = trials.iter().map(|t| t.proposed_accuracy).collect();
    let conse: Vec<f64> = trials.iter().map(|t| t.conse_accuracy).collect();
    let n = trials.len() as f64;
    let proposed_mean = proposed.iter().sum::<f64>() / n;
    let conse_mean = conse.iter().sum::<f64>() / n;
    let summary = ComparisonSummary {
        trials: trials.len(),
        proposed_mean,
        conse_mean,
        mean_gain: proposed_mean - conse_mean,
        p_value: paired_permutation_test(&proposed, &conse, config.permutation_resamples, config.schedule.seed),
    };
    Ok(Comparison { trials, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub checkpoint_id: String,
    pub seen_accuracy: f64,
    pub unseen_accuracy: f64,
}

/// Seen accuracy (head = seen prototypes) and unseen accuracy (head
/// swapped to unseen prototypes) for each checkpoint.
pub fn tradeoff_curve<T: Scalar>(
    checkpoints: &[(String, Network<T>)],
    split: &ClassSplit,
    seen_test: &[LabeledImage<'_>],
    unseen_test: &[LabeledImage<'_>],
    prototypes_all: &PrototypeSet,
) -> Result<Vec<CurvePoint>> {
    let seen_set = prototypes_all.subset(&split.seen)?;
    let unseen_set = prototypes_all.subset(&split.unseen)?;
    checkpoints
        .iter()
        .map(|(id, net)| {
            Ok(CurvePoint {
                checkpoint_id: id.clone(),
                seen_accuracy: evaluate_with_prototypes(net, &seen_set, seen_test)?.overall_accuracy,
                unseen_accuracy: evaluate_with_prototypes(net, &unseen_set, unseen_test)?.overall_accuracy,
            })
        })
        .collect()
}

/// Trains on `split.seen` keeping a checkpoint before training and after
/// every epoch (ids `epoch-000`, `epoch-001`, ...) and traces the curve on
/// the test partition of the seen classes and `unseen_partition` of the
/// unseen ones.
pub fn run_tradeoff(
    dataset: &Dataset,
    prototypes: &PrototypeSet,
    split: &ClassSplit,
    architecture: &Architecture,
    schedule: &Schedule,
    unseen_partition: Partition,
) -> Result<Vec<CurvePoint>> {
    let schedule = Schedule {
        keep_checkpoints: true,
        ..schedule.clone()
    };
    let (_, outcome) = train_on_seen(dataset, prototypes, split, architecture, &schedule)?;
    let checkpoints: Vec<(String, Network<f32>)> = outcome
        .checkpoints
        .into_iter()
        .enumerate()
        .map(|(i, net)| (format!("epoch-{i:03}"), net))
        .collect();
    let seen_test = labeled(dataset, Partition::Test, &split.seen);
    let unseen_test = labeled(dataset, unseen_partition, &split.unseen);
    tradeoff_curve(&checkpoints, split, &seen_test, &unseen_test, prototypes)
}

/// Pearson correlation of seen vs unseen accuracy over the first
/// `ceil(n/2)` points and over the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveCorrelation {
    pub early: Option<f64>,
    pub late: Option<f64>,
}

pub fn curve_correlation(points: &[CurvePoint]) -> CurveCorrelation {
    let half = points.len().div_ceil(2);
    let r = |pts: &[CurvePoint]| {
        let seen: Vec<f64> = pts.iter().map(|p| p.seen_accuracy).collect();
        let unseen: Vec<f64> = pts.iter().map(|p| p.unseen_accuracy).collect();
        pearson(&seen, &unseen)
    };
    CurveCorrelation {
        early: r(&points[..half]),
        late: r(&points[half..]),
    }
}
