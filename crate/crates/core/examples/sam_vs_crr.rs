//! Baseline, CRR and SAM on the bundled MNIST subset.
use std::path::Path;

use curvrate::cli::{run, Experiment, RunConfig};

fn main() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/mnist-subset");
    let mut cfg = RunConfig {
        experiment: Experiment::SamCompare,
        seeds: vec![0],
        output_dir: std::env::temp_dir().join("curvrate-sam-vs-crr"),
        ..RunConfig::default()
    };
    cfg.crr.scale = 100.0;
    cfg.image.train_images = Some(data.join("train-images-idx.gz"));
    cfg.image.train_labels = Some(data.join("train-labels-idx.gz"));
    cfg.image.test_images = Some(data.join("test-images-idx.gz"));
    cfg.image.test_labels = Some(data.join("test-labels-idx.gz"));
    let art = run(cfg).unwrap();
    print!("{}", std::fs::read_to_string(&art.summary).unwrap());
}
