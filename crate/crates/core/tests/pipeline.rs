use std::path::Path;

use saflab::data::{load_mnist_idx, DatasetKind, DatasetSource, Split, SynthSpec};
use saflab::harness::{load_checkpoint, run_campaign, save_checkpoint, top1, Campaign, Protocol, TrainManifest};
use saflab::optim::{train, TrainConfig};
use saflab::{ArchSpec, Model, SafKind, StoredDType};

fn mnist_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-npm")
}

#[test]
fn bundled_mnist_loads() {
    let train = load_mnist_idx(&mnist_dir(), Split::Train).unwrap();
    let test = load_mnist_idx(&mnist_dir(), Split::Test).unwrap();
    assert_eq!((train.len(), test.len()), (7996, 2004));
    assert_eq!(train.sample_shape(), [1, 28, 28]);
    assert_eq!(test.class_count, 10);
    assert!(test.label_histogram().iter().all(|&n| n > 150));
    let (lo, hi) = train.images.data().iter().fold((1.0f32, 0.0f32), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(lo >= 0.0 && hi <= 1.0 && hi > 0.9);
}

#[test]
fn train_checkpoint_campaign() {
    let spec = SynthSpec { classes: 4, n_per_class: 100, dim: 12, separation: 5.0, seed: 8 };
    let source = DatasetSource::synthetic(spec);
    let train_set = source.load(Split::Train).unwrap();
    let mut model = Model::init(ArchSpec::mlp(&[1, 1, 12], &[32], 4, SafKind::Tanh), 1).unwrap();
    let cfg = TrainConfig { batch_size: 32, ..TrainConfig::scratch(10, 2) };
    let history = train(&mut model, &train_set, &cfg, |_| {}).unwrap();
    assert!(history.last().unwrap().mean_loss < history[0].mean_loss);

    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("tanh.ckpt");
    let manifest = TrainManifest { dataset: Some(source.clone()), train: Some(cfg), init_seed: 1, parent: None, history };
    save_checkpoint(&model, &manifest, &ckpt).unwrap();
    let (back, m) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(m, manifest);

    let test = source.load(Split::Test).unwrap();
    let clean = top1(&back, &test).unwrap();
    assert!(clean > 95.0, "{clean}");

    let c = Campaign {
        model_checkpoint: ckpt,
        dataset: source,
        saf: None,
        protocol: Protocol::new(StoredDType::Fp32, vec![0.0, 1e-3], 5, 3),
    };
    let report = run_campaign(&c).unwrap();
    assert_eq!(report.clean_top1, clean);
    assert_eq!(report.results[0].mean, clean);
    assert_eq!(report.results[1].round_top1.len(), 5);
}

#[test]
fn mnist_source_with_subset() {
    let src = DatasetSource::directory(DatasetKind::Mnist, mnist_dir()).with_subset(Some(300));
    let test = src.load(Split::Test).unwrap();
    assert_eq!(test.len(), 300);
    let json = serde_json::to_string(&src).unwrap();
    assert!(json.contains("\"subset\":300"));
    let full = serde_json::to_string(&src.with_subset(None)).unwrap();
    assert!(full.contains("\"subset\":null"));
}
