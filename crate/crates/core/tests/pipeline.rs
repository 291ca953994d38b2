mod common;

use std::path::Path;

use common::{quick_config, read, synth_dataset};
use tongue_core::config::Head;
use tongue_core::pipeline::{prepare_all, run_pipeline, train_extractors, CACHE_DIR, CHECKPOINT_DIR};
use tongue_core::synth::{IMAGES_DIR, MANIFEST_NAME};
use tongue_core::{Error, ExitClass, LabeledSample, RngSeed, Split};

fn checkpoint_bytes(out: &Path, names: &[&str]) -> Vec<Vec<u8>> {
    names.iter().map(|n| read(out.join(CHECKPOINT_DIR).join(n))).collect()
}

const SVM_FILES: [&str; 5] = ["extractor_1.json", "extractor_2.json", "extractor_3.json", "extractor_4.json", "svm.json"];

#[test]
fn test_split_never_touches_training() {
    let data = tempfile::tempdir().unwrap();
    let (ds, manifest) = synth_dataset(data.path(), 8, 0.8, 3);
    let full = tempfile::tempdir().unwrap();
    run_pipeline(&quick_config(&manifest, full.path(), Head::SvmComposite)).unwrap();

    // same training data, test records and test images gone
    let text = std::fs::read_to_string(&manifest).unwrap();
    let kept: String = text.lines().filter(|l| !l.contains("\"split\":\"test\"")).map(|l| format!("{l}\n")).collect();
    assert!(kept.len() < text.len());
    std::fs::write(&manifest, kept).unwrap();
    for s in ds.split(Split::Test) {
        std::fs::remove_file(&s.path).unwrap();
    }
    let trimmed = tempfile::tempdir().unwrap();
    let report = run_pipeline(&quick_config(&manifest, trimmed.path(), Head::SvmComposite)).unwrap();
    assert!(report.evaluation.is_none());
    assert_eq!(report.data.n_test(), 0);
    assert_eq!(checkpoint_bytes(full.path(), &SVM_FILES), checkpoint_bytes(trimmed.path(), &SVM_FILES));
}

#[test]
fn worker_count_does_not_change_results() {
    let data = tempfile::tempdir().unwrap();
    let (_, manifest) = synth_dataset(data.path(), 6, 0.8, 4);
    let mut reports = Vec::new();
    let mut outs = Vec::new();
    for workers in [1, 3] {
        let out = tempfile::tempdir().unwrap();
        let mut cfg = quick_config(&manifest, out.path(), Head::Cnn);
        cfg.workers = Some(workers);
        reports.push(run_pipeline(&cfg).unwrap());
        outs.push(out);
    }
    let files = ["extractor_1.json", "extractor_4.json", "cnn.json"];
    assert_eq!(checkpoint_bytes(outs[0].path(), &files), checkpoint_bytes(outs[1].path(), &files));
    assert_eq!(read(outs[0].path().join("predictions.csv")), read(outs[1].path().join("predictions.csv")));
    assert_eq!(reports[0].evaluation, reports[1].evaluation);
    assert_eq!(reports[0].training, reports[1].training);
}

#[test]
fn degenerate_quad_names_the_sample() {
    let data = tempfile::tempdir().unwrap();
    let (ds, manifest) = synth_dataset(data.path(), 3, 0.5, 5);
    let victim = ds.split(Split::Train).next().unwrap().image_id.clone();
    let text = std::fs::read_to_string(&manifest).unwrap();
    let edited: String = text
        .lines()
        .map(|l| {
            if l.contains(&format!("/{victim}.png")) {
                let head = &l[..l.find("\"quad\"").unwrap()];
                format!("{head}\"quad\":[[10,10],[20,20],[30,30],[40,40]]}}\n")
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    std::fs::write(&manifest, edited).unwrap();
    let out = tempfile::tempdir().unwrap();
    let err = run_pipeline(&quick_config(&manifest, out.path(), Head::SvmComposite)).unwrap_err();
    match &err {
        Error::Stage { stage, sample, .. } => {
            assert_eq!(*stage, "register");
            assert_eq!(sample.as_deref(), Some(victim.as_str()));
        }
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(err.exit_class(), ExitClass::Numerical);
    assert!(err.to_string().contains(&victim));
}

#[test]
fn missing_image_is_io_error() {
    let data = tempfile::tempdir().unwrap();
    let (ds, manifest) = synth_dataset(data.path(), 3, 0.5, 6);
    std::fs::remove_file(&ds.samples[0].path).unwrap();
    let out = tempfile::tempdir().unwrap();
    let err = run_pipeline(&quick_config(&manifest, out.path(), Head::SvmComposite)).unwrap_err();
    assert_eq!(err.exit_class(), ExitClass::Io, "{err}");
}

#[test]
fn extractors_only_see_their_own_region() {
    let data = tempfile::tempdir().unwrap();
    let (ds, _) = synth_dataset(data.path(), 5, 0.8, 7);
    let train: Vec<&LabeledSample> = ds.split(Split::Train).collect();
    let (prepared, _) = prepare_all(&train, &ds.reference, 0).unwrap();
    let cfg = tongue_core::nnet::TrainConfig {
        learning_rate: 0.1,
        epochs: 3,
        batch_size: 4,
        seed: RngSeed(9),
    };
    let snapshot = |models: &[tongue_core::nnet::MlpModel; 4]| -> Vec<String> {
        models.iter().map(|m| serde_json::to_string(&m.to_checkpoint()).unwrap()).collect()
    };
    let (base, _) = train_extractors(&prepared, cfg).unwrap();
    let mut altered = prepared.clone();
    for s in &mut altered {
        s.vectors[0].iter_mut().for_each(|v| *v = 1.0 - *v);
    }
    let (changed, _) = train_extractors(&altered, cfg).unwrap();
    let (a, b) = (snapshot(&base), snapshot(&changed));
    assert_ne!(a[0], b[0]);
    assert_eq!(a[1..], b[1..]);
}

#[test]
fn svm_on_selected_tap() {
    let data = tempfile::tempdir().unwrap();
    let (_, manifest) = synth_dataset(data.path(), 6, 1.0, 8);
    let out = tempfile::tempdir().unwrap();
    let report = run_pipeline(&quick_config(&manifest, out.path(), Head::SvmTap)).unwrap();
    let sel = report.layer_selection.expect("selection");
    assert_eq!(sel.scores.len(), 3);
    assert!(sel.scores.iter().any(|s| s.layer_id == sel.selected));
    for f in ["cnn.json", "svm.json"] {
        assert!(out.path().join(CHECKPOINT_DIR).join(f).is_file());
    }
    assert!(out.path().join("selected_layer.json").is_file());
    assert!(report.evaluation.is_some());
}

#[test]
fn head_change_reuses_extractor_cache() {
    let data = tempfile::tempdir().unwrap();
    let (_, manifest) = synth_dataset(data.path(), 5, 0.8, 10);
    let out = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(&manifest, out.path(), Head::SvmComposite);
    run_pipeline(&cfg).unwrap();
    let before = checkpoint_bytes(out.path(), &SVM_FILES[..4]);
    cfg.svm.c = 0.5;
    run_pipeline(&cfg).unwrap();
    assert_eq!(before, checkpoint_bytes(out.path(), &SVM_FILES[..4]));
    let entries: Vec<String> = std::fs::read_dir(out.path().join(CACHE_DIR))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(entries.iter().filter(|n| n.starts_with("extractors-")).count(), 1);
    assert_eq!(entries.iter().filter(|n| n.starts_with("head-")).count(), 2);
}

#[test]
fn manifest_layout_is_relative() {
    let data = tempfile::tempdir().unwrap();
    let (_, manifest) = synth_dataset(data.path(), 2, 0.0, 11);
    assert!(manifest.ends_with(MANIFEST_NAME));
    let first = std::fs::read_to_string(&manifest).unwrap();
    assert!(first.starts_with(&format!("{{\"path\":\"{IMAGES_DIR}/")));
}
