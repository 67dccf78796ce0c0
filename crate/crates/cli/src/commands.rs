use std::path::{Path, PathBuf};

use anyhow::Context;
use log::info;
use protoprior::checkpoint;
use protoprior::data::{
    build_synthetic, load_directory, load_prototypes, read_image, save_dataset, save_prototypes, Dataset,
    LoadOptions, Partition, SynthConfig,
};
use protoprior::hog::{embed_prototype, HogConfig};
use protoprior::net::{accuracy, train, HeadInit, HeadKind, Network, Schedule};
use protoprior::presets::Preset;
use protoprior::proto::{swap, PrototypeSet};
use protoprior::zeroshot::{
    curve_correlation, evaluate_with_prototypes, labeled, make_splits, run_tradeoff, run_zero_shot_comparison,
    trial_schedule, ComparisonConfig, ConseBackbone,
};
use protoprior::Error;
use serde::Serialize;

use crate::config::{self, EvalRun, FileOverrides, HogRun, SynthRun, TrainRun, ZeroshotRun};
use crate::{BackboneArg, Cli, Command, HeadArg, ModelArgs};
use crate::output;

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let file = FileOverrides::load(cli.config.as_deref())?;
    let seed = file.seed(cli.seed)?;
    let out = file.out(cli.out.as_deref())?;
    match &cli.command {
        Command::Synth(a) => {
            let flags = SynthConfig {
                num_classes: a.classes,
                samples_per_class: a.per_class,
                template_seed: seed,
                image_side: a.image_side,
                prototype_side: a.prototype_side,
                ..SynthConfig::default()
            };
            synth(&file.resolve("synth", flags)?, seed, &require_out(out)?)
        }
        Command::Hog(a) => {
            let flags = HogRun {
                image: a.image.clone(),
                dims_only: a.dims_only,
                hog: HogConfig {
                    resize_side: a.side,
                    cell_size: a.cell,
                    block_size: a.block,
                    block_overlap: a.overlap,
                    num_bins: a.bins,
                    signed_orientations: a.signed,
                    ..HogConfig::default()
                },
            };
            hog(&file.resolve("hog", flags)?, seed, out.as_deref())
        }
        Command::Train(a) => {
            let flags = TrainRun {
                data: a.data.clone(),
                prototypes: a.prototypes.clone().unwrap_or_else(|| a.data.join("prototypes")),
                head: match a.head {
                    HeadArg::Prototype => HeadKind::Prototype,
                    HeadArg::Learned => HeadKind::Learned,
                },
                checkpoint_every_epoch: a.checkpoint_every_epoch,
                preset: model_preset(&a.model, seed)?,
            };
            train_cmd(file.resolve("train", flags)?, seed, &require_out(out)?)
        }
        Command::Eval(a) => {
            let flags = EvalRun {
                data: a.data.clone(),
                checkpoint: a.checkpoint.clone(),
                prototypes: a.prototypes.clone(),
                partition: config::parse_partition(&a.partition)?,
            };
            eval(&file.resolve("eval", flags)?, seed, out.as_deref())
        }
        Command::Zeroshot(a) => {
            let flags = ZeroshotRun {
                data: a.data.clone(),
                prototypes: a.prototypes.clone().unwrap_or_else(|| a.data.join("prototypes")),
                trials: a.trials,
                unseen: a.unseen,
                conse_top_t: a.conse_top_t,
                conse_backbone: match a.conse_backbone {
                    BackboneArg::Shared => ConseBackbone::Shared,
                    BackboneArg::Separate => ConseBackbone::Separate,
                },
                resamples: a.resamples,
                partition: config::parse_partition(&a.partition)?,
                curve: a.curve,
                preset: model_preset(&a.model, seed)?,
            };
            zeroshot(file.resolve("zeroshot", flags)?, seed, &require_out(out)?)
        }
    }
}

fn require_out(out: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    out.ok_or_else(|| config::invalid("this command needs --out <dir>"))
}

fn model_preset(m: &ModelArgs, seed: u64) -> anyhow::Result<Preset> {
    let mut p = config::preset(&m.preset)?;
    if let Some(rate) = m.dropout {
        if !(0.0..1.0).contains(&rate) {
            return Err(config::invalid(format!("dropout must be in [0, 1), got {rate}")));
        }
        p.architecture = p.architecture.with_dropout(rate);
    }
    let s = &mut p.schedule;
    s.seed = seed;
    s.epochs = m.epochs.unwrap_or(s.epochs);
    s.batch_size = m.batch_size.unwrap_or(s.batch_size);
    s.learning_rate = m.lr.unwrap_or(s.learning_rate);
    s.momentum = m.momentum.unwrap_or(s.momentum);
    Ok(p)
}

fn write_config<T: Serialize>(dir: &Path, command: &str, seed: u64, run: &T) -> anyhow::Result<()> {
    output::text(&dir.join("config.toml"), &config::resolved_document(command, seed, run)?)
}

fn synth(cfg: &SynthRun, seed: u64, out: &Path) -> anyhow::Result<()> {
    let (dataset, templates) = build_synthetic(cfg)?;
    save_dataset(&dataset, out)?;
    save_prototypes(&templates, &out.join("prototypes"))?;
    write_config(out, "synth", seed, cfg)?;
    println!(
        "wrote {} samples of {} classes to {}",
        dataset.len(),
        dataset.class_ids.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct HogOutput<'a> {
    image: &'a Path,
    dimension: usize,
    values: &'a [f32],
}

fn hog(run: &HogRun, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    let k = run.hog.dimension()?;
    if run.dims_only {
        println!("{k}");
        return Ok(());
    }
    let path = run
        .image
        .as_deref()
        .ok_or_else(|| config::invalid("hog needs an image path unless --dims-only is given"))?;
    let image = read_image(path, true)?;
    let embedding = embed_prototype(&image, &run.hog).map_err(|e| match e {
        Error::DegeneratePrototype(_) => Error::DegeneratePrototype(path.display().to_string()),
        other => other,
    })?;
    match out {
        Some(dir) => {
            output::json(
                &dir.join("embedding.json"),
                &HogOutput {
                    image: path,
                    dimension: k,
                    values: &embedding.values,
                },
            )?;
            let rows: Vec<Vec<String>> = embedding
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| vec![i.to_string(), v.to_string()])
                .collect();
            output::csv(&dir.join("embedding.csv"), &["index", "value"], &rows)?;
            write_config(dir, "hog", seed, run)?;
            println!("wrote {k}-dimensional embedding to {}", dir.display());
        }
        None => {
            let line: Vec<String> = embedding.values.iter().map(|v| v.to_string()).collect();
            println!("{}", line.join(","));
        }
    }
    Ok(())
}

/// Loads `root` at the architecture's input size. The input channel count
/// follows the data (grayscale datasets run RGB presets on one channel).
fn load_for(root: &Path, preset: &mut Preset) -> anyhow::Result<Dataset> {
    let input = preset.architecture.input;
    if input.height != input.width {
        return Err(config::invalid(format!("input must be square, got {input}")));
    }
    let options = LoadOptions {
        image_side: input.height,
        grayscale: input.channels == 1,
    };
    let dataset = load_directory(root, None, &options)?;
    let channels = dataset.samples[0].image.channels();
    if channels != input.channels {
        info!("dataset has {channels} channel(s); adapting the {input} input");
        preset.architecture.input.channels = channels;
    }
    Ok(dataset)
}

fn prototype_set(dir: &Path, hog: &HogConfig, dataset: &Dataset) -> anyhow::Result<PrototypeSet> {
    let images = load_prototypes(dir, true).with_context(|| format!("prototypes in {}", dir.display()))?;
    let sources = images.iter().map(|(id, _)| format!("{}/{id}", dir.display())).collect();
    let set = PrototypeSet::build(&images, hog)?.with_sources(sources)?;
    if let Some(missing) = dataset.class_ids.iter().find(|c| set.index_of(c).is_none()) {
        return Err(Error::CoverageMismatch(format!("no prototype for dataset class `{missing}`")).into());
    }
    Ok(set)
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    head: HeadKind,
    class_ids: &'a [String],
    train_samples: usize,
    val_samples: usize,
    test_samples: usize,
    epochs: &'a [protoprior::net::EpochMetrics],
    test_accuracy: Option<f64>,
}

fn train_cmd(mut run: TrainRun, seed: u64, out: &Path) -> anyhow::Result<()> {
    run.preset.validate()?;
    let dataset = load_for(&run.data, &mut run.preset)?;
    let (head, classes) = match run.head {
        HeadKind::Prototype => {
            let set = prototype_set(&run.prototypes, &run.preset.hog, &dataset)?;
            let classes = set.class_ids().to_vec();
            (HeadInit::Prototype(set), classes)
        }
        HeadKind::Learned => (
            HeadInit::Learned {
                class_ids: dataset.class_ids.clone(),
            },
            dataset.class_ids.clone(),
        ),
    };
    let schedule = Schedule {
        keep_checkpoints: run.checkpoint_every_epoch,
        ..run.preset.schedule.clone()
    };
    let mut net = Network::<f32>::new(&run.preset.architecture, head, schedule.seed)?;
    let train_ex = dataset.examples(Partition::Train, &classes)?;
    let val_ex = dataset.examples(Partition::Val, &classes)?;
    let test_ex = dataset.examples(Partition::Test, &classes)?;
    info!(
        "training {} parameters on {} samples for {} epochs",
        net.num_params(),
        train_ex.len(),
        schedule.epochs
    );
    let outcome = train(&mut net, &train_ex, &val_ex, &schedule)?;
    let test_accuracy = if test_ex.is_empty() {
        None
    } else {
        Some(accuracy(&net, &test_ex)?)
    };

    checkpoint::save(&net, &out.join("checkpoint.bin"))?;
    for (i, snapshot) in outcome.checkpoints.iter().enumerate() {
        checkpoint::save(snapshot, &out.join("checkpoints").join(format!("epoch-{i:03}.bin")))?;
    }
    let rows: Vec<Vec<String>> = outcome
        .metrics
        .iter()
        .map(|m| {
            vec![
                m.epoch.to_string(),
                m.train_loss.to_string(),
                m.train_accuracy.to_string(),
                output::num(m.val_accuracy),
            ]
        })
        .collect();
    output::csv(
        &out.join("metrics.csv"),
        &["epoch", "train_loss", "train_accuracy", "val_accuracy"],
        &rows,
    )?;
    output::json(
        &out.join("metrics.json"),
        &TrainMetrics {
            head: run.head,
            class_ids: &classes,
            train_samples: train_ex.len(),
            val_samples: val_ex.len(),
            test_samples: test_ex.len(),
            epochs: &outcome.metrics,
            test_accuracy,
        },
    )?;
    write_config(out, "train", seed, &run)?;
    match test_accuracy {
        Some(acc) => println!("test accuracy {acc:.4} ({} samples)", test_ex.len()),
        None => println!("trained; no test samples"),
    }
    Ok(())
}

fn eval(run: &EvalRun, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    let net = checkpoint::load(&run.checkpoint)?;
    let mut preset_like = Preset {
        name: "checkpoint".into(),
        architecture: net.architecture().clone(),
        hog: HogConfig::default(),
        schedule: Schedule::default(),
    };
    let dataset = load_for(&run.data, &mut preset_like)?;
    let (net, set) = match (&run.prototypes, net.head().prototypes()) {
        (Some(dir), _) => {
            let hog = net
                .head()
                .prototypes()
                .map(|p| *p.hog_config())
                .ok_or_else(|| config::invalid("--prototypes needs a checkpoint with a prototype head"))?;
            let images = load_prototypes(dir, true)?;
            let set = PrototypeSet::build(&images, &hog)?;
            (swap(&net, set.clone())?, Some(set))
        }
        (None, Some(set)) => (net.clone(), Some(set.clone())),
        (None, None) => (net, None),
    };
    let classes = net.class_ids().to_vec();
    let samples: Vec<_> = labeled(&dataset, run.partition, &classes);
    if samples.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let mut report = match set {
        Some(set) => evaluate_with_prototypes(&net, &set, &samples)?,
        None => {
            let index = |c: &str| classes.iter().position(|x| x == c).expect("filtered to head classes");
            let pairs = samples
                .iter()
                .map(|s| Ok((index(s.class_id), net.predict(s.image)?)))
                .collect::<protoprior::Result<Vec<_>>>()?;
            protoprior::zeroshot::EvalReport::from_pairs(&classes, &pairs)
        }
    };
    report.checkpoint_id = Some(run.checkpoint.display().to_string());
    if let Some(dir) = out {
        output::json(&dir.join("eval.json"), &report)?;
        let rows: Vec<Vec<String>> = report
            .class_ids
            .iter()
            .zip(&report.per_class_accuracy)
            .zip(&report.confusion)
            .map(|((c, acc), row)| vec![c.clone(), row.iter().sum::<u64>().to_string(), output::num(*acc)])
            .collect();
        output::csv(&dir.join("eval.csv"), &["class_id", "samples", "accuracy"], &rows)?;
        write_config(dir, "eval", seed, run)?;
    }
    println!(
        "accuracy {:.4} on {} {} samples",
        report.overall_accuracy,
        report.total,
        run.partition
    );
    Ok(())
}

#[derive(Serialize)]
struct ZeroshotOutput<'a> {
    comparison: &'a protoprior::zeroshot::Comparison,
    curve: Option<CurveOutput<'a>>,
}

#[derive(Serialize)]
struct CurveOutput<'a> {
    split: &'a protoprior::zeroshot::ClassSplit,
    points: &'a [protoprior::zeroshot::CurvePoint],
    correlation: protoprior::zeroshot::CurveCorrelation,
}

fn zeroshot(mut run: ZeroshotRun, seed: u64, out: &Path) -> anyhow::Result<()> {
    run.preset.validate()?;
    let dataset = load_for(&run.data, &mut run.preset)?;
    let set = prototype_set(&run.prototypes, &run.preset.hog, &dataset)?;
    let splits = make_splits(&dataset.class_ids, run.unseen, run.trials, seed)?;
    let cfg = ComparisonConfig {
        architecture: run.preset.architecture.clone(),
        schedule: run.preset.schedule.clone(),
        conse_top_t: run.conse_top_t,
        conse_backbone: run.conse_backbone,
        permutation_resamples: run.resamples,
        unseen_partition: run.partition,
    };
    info!("{} trials, {} unseen classes each", splits.len(), run.unseen);
    let comparison = run_zero_shot_comparison(&dataset, &set, &splits, &cfg)?;

    let curve = if run.curve {
        let points = run_tradeoff(
            &dataset,
            &set,
            &splits[0],
            &cfg.architecture,
            &trial_schedule(&cfg.schedule, 0),
            run.partition,
        )?;
        Some(points)
    } else {
        None
    };

    let rows: Vec<Vec<String>> = comparison
        .trials
        .iter()
        .map(|t| {
            vec![
                t.trial.to_string(),
                t.split.unseen.join(" "),
                t.proposed_accuracy.to_string(),
                t.conse_accuracy.to_string(),
                t.seen_test_accuracy.to_string(),
                t.conse_top_t.to_string(),
            ]
        })
        .collect();
    output::csv(
        &out.join("trials.csv"),
        &["trial", "unseen", "proposed", "conse", "seen_test", "conse_top_t"],
        &rows,
    )?;
    if let Some(points) = &curve {
        let rows: Vec<Vec<String>> = points
            .iter()
            .map(|p| vec![p.checkpoint_id.clone(), p.seen_accuracy.to_string(), p.unseen_accuracy.to_string()])
            .collect();
        output::csv(&out.join("curve.csv"), &["checkpoint_id", "seen_acc", "unseen_acc"], &rows)?;
    }
    output::json(
        &out.join("zeroshot.json"),
        &ZeroshotOutput {
            comparison: &comparison,
            curve: curve.as_ref().map(|points| CurveOutput {
                split: &splits[0],
                points,
                correlation: curve_correlation(points),
            }),
        },
    )?;
    write_config(out, "zeroshot", seed, &run)?;
    let s = &comparison.summary;
    println!(
        "proposed {:.4}  conse {:.4}  gain {:+.4}  p={:.4}  ({} trials)",
        s.proposed_mean, s.conse_mean, s.mean_gain, s.p_value, s.trials
    );
    Ok(())
}
