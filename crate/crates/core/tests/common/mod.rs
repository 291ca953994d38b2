#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tongue_core::config::{Head, PipelineConfig};
use tongue_core::synth::{synth_generate, SynthSpec, MANIFEST_NAME};
use tongue_core::{Dataset, RngSeed};

pub fn synth_dataset(dir: &Path, n_per_class: usize, separation: f64, seed: u64) -> (Dataset, PathBuf) {
    let spec = SynthSpec {
        n_per_class,
        separation,
        pose_jitter: 0.04,
        image_dims: [512, 512],
        test_fraction: 0.25,
        seed: RngSeed(seed),
    };
    let ds = synth_generate(&spec, dir).unwrap();
    (ds, dir.join(MANIFEST_NAME))
}

/// Small, fast run on an existing manifest.
pub fn quick_config(manifest: &Path, out: &Path, head: Head) -> PipelineConfig {
    let mut cfg = PipelineConfig::for_manifest(manifest, RngSeed(21));
    cfg.out_dir = out.to_path_buf();
    cfg.head = head;
    cfg.extractor_train.epochs = 8;
    cfg.cnn_train.epochs = 6;
    cfg.workers = Some(1);
    cfg
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    let path = path.as_ref();
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
