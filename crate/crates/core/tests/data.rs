use std::fs;
use std::path::Path;

use protoprior::data::{
    build_synthetic, corrupt, generate_templates, load_directory, load_prototypes, save_dataset, save_prototypes,
    Corruption, LoadOptions, Partition, SynthConfig,
};
use protoprior::hog::embed_prototype;
use protoprior::image::{ColorMode, Image};
use protoprior::proto::cosine;
use protoprior::Error;

fn config(classes: usize, per_class: usize) -> SynthConfig {
    SynthConfig {
        num_classes: classes,
        samples_per_class: per_class,
        ..SynthConfig::default()
    }
}

#[test]
fn synthetic_round_trip_is_pixel_identical() {
    let (ds, templates) = build_synthetic(&config(4, 6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    save_prototypes(&templates, &dir.path().join("prototypes")).unwrap();
    let back = load_directory(dir.path(), None, &LoadOptions::default()).unwrap();
    assert_eq!(back.class_ids, ds.class_ids);
    assert_eq!(back.partitions, ds.partitions);
    assert_eq!(back.samples, ds.samples);
    let protos = load_prototypes(&dir.path().join("prototypes"), true).unwrap();
    assert_eq!(protos, templates);
}

#[test]
fn partitions_are_60_20_20_and_exhaustive() {
    let (ds, _) = build_synthetic(&config(10, 10)).unwrap();
    assert_eq!(ds.len(), 100);
    assert_eq!(ds.counts(Partition::Train), vec![6; 10]);
    assert_eq!(ds.counts(Partition::Val), vec![2; 10]);
    assert_eq!(ds.counts(Partition::Test), vec![2; 10]);
    let total: usize = Partition::ALL.iter().map(|p| ds.indices(*p).len()).sum();
    assert_eq!(total, ds.len());
    assert!(ds
        .samples
        .iter()
        .all(|s| s.image.data().iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn generation_is_deterministic() {
    let a = build_synthetic(&config(3, 5)).unwrap();
    let b = build_synthetic(&config(3, 5)).unwrap();
    assert_eq!(a, b);
    let other = build_synthetic(&SynthConfig {
        template_seed: 8,
        ..config(3, 5)
    })
    .unwrap();
    assert_ne!(a.1, other.1);
}

#[test]
fn twenty_templates_are_distinct() {
    let cfg = config(20, 3);
    let templates = generate_templates(&cfg).unwrap();
    assert_eq!(templates.len(), 20);
    let hog = protoprior::hog::HogConfig::default();
    let emb: Vec<Vec<f32>> = templates
        .iter()
        .map(|(_, img)| embed_prototype(img, &hog).unwrap().values)
        .collect();
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            let c = cosine(&emb[i], &emb[j]);
            assert!(c < 0.999, "templates {i} and {j}: cosine {c}");
        }
    }
}

#[test]
fn zero_corruption_is_a_resize() {
    let templates = generate_templates(&config(2, 3)).unwrap();
    let t = &templates[1].1;
    assert_eq!(corrupt(t, &Corruption::none(), 48, 3), t.resize(48, 48));
    assert_eq!(corrupt(t, &Corruption::default(), 48, 3), corrupt(t, &Corruption::default(), 48, 3));
}

#[test]
fn noise_deviation_matches_clipped_gaussian() {
    let templates = generate_templates(&config(1, 3)).unwrap();
    let t = &templates[0].1;
    let noisy = Corruption {
        gaussian_noise_sigma: 0.05,
        background_clutter_level: 0.0,
        ..Corruption::default()
    };
    let clean = Corruption {
        gaussian_noise_sigma: 0.0,
        ..noisy
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for seed in 0..1000 {
        let a = corrupt(t, &noisy, 48, seed);
        let b = corrupt(t, &clean, 48, seed);
        for (x, y) in a.data().iter().zip(b.data()) {
            sum += (x - y).abs() as f64;
            count += 1;
        }
    }
    let mean = sum / count as f64;
    assert!((0.03..=0.05).contains(&mean), "{mean}");
}

#[test]
fn invalid_synth_configs_rejected() {
    assert!(matches!(build_synthetic(&config(3, 2)), Err(Error::InvalidConfig(_))));
}

fn write_png(path: &Path, w: u32, h: u32) {
    let img = Image::gray_from_fn(w as usize, h as usize, |x, y| ((x + y) % 7) as f32 / 7.0);
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let bytes = img.to_u8();
    image::GrayImage::from_raw(w, h, bytes).unwrap().save(path).unwrap();
}

#[test]
fn manifest_loading_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_png(&root.join("a.png"), 20, 10);
    fs::write(root.join("manifest.csv"), "path,class_id,partition,x,y,w,h\na.png,stop,val,,,,\n").unwrap();
    let ds = load_directory(root, None, &LoadOptions::default()).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.partitions, vec![Partition::Val]);
    assert_eq!(ds.samples[0].image.width(), 48);
    assert_eq!(ds.samples[0].image.mode(), ColorMode::Gray);

    fs::write(
        root.join("crop.csv"),
        "path,class_id,partition,x,y,w,h\na.png,stop,train,0,0,5,5\na.png,stop,train,18,0,5,5\n",
    )
    .unwrap();
    let err = load_directory(root, Some(&root.join("crop.csv")), &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::BadCrop { row: 2, .. }), "{err}");
    assert_eq!(err.kind(), "bad-crop");

    fs::write(root.join("part.csv"), "path,class_id,partition\na.png,stop,holdout\n").unwrap();
    let err = load_directory(root, Some(&root.join("part.csv")), &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::UnknownPartition { row: 1, ref value } if value == "holdout"));

    fs::write(root.join("missing.csv"), "path,class_id,partition\nnope.png,stop,test\n").unwrap();
    let err = load_directory(root, Some(&root.join("missing.csv")), &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::MissingFile(_)));
}

#[test]
fn halved_test_rows_give_equal_val_and_test() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_png(&root.join("x.png"), 8, 8);
    let mut manifest = String::from("path,class_id,partition\n");
    for class in 0..43 {
        manifest.push_str(&format!("x.png,{class},train\n"));
        // a class's held-out rows, halved into val and test
        manifest.push_str(&format!("x.png,{class},val\nx.png,{class},test\n"));
    }
    fs::write(root.join("manifest.csv"), manifest).unwrap();
    let ds = load_directory(
        root,
        None,
        &LoadOptions {
            image_side: 8,
            grayscale: true,
        },
    )
    .unwrap();
    assert_eq!(ds.class_ids.len(), 43);
    assert_eq!(ds.indices(Partition::Val).len(), ds.indices(Partition::Test).len());
}
