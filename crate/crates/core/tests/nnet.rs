mod common;

use common::synth_dataset;
use tongue_core::nnet::cnn::cnn_train;
use tongue_core::nnet::{CnnSpec, TrainConfig};
use tongue_core::pipeline::{fuse_all, prepare_all, train_extractors};
use tongue_core::{Label, LabeledSample, RngSeed, Split};

#[test]
fn cnn_fits_separable_composites() {
    let data = tempfile::tempdir().unwrap();
    let (ds, _) = synth_dataset(data.path(), 24, 1.0, 13);
    let train: Vec<&LabeledSample> = ds.split(Split::Train).collect();
    let (prepared, _) = prepare_all(&train, &ds.reference, 0).unwrap();
    let ex_cfg = TrainConfig {
        learning_rate: 0.1,
        epochs: 20,
        batch_size: 32,
        seed: RngSeed(1),
    };
    let (extractors, _) = train_extractors(&prepared, ex_cfg).unwrap();
    let composites = fuse_all(&prepared, &extractors).unwrap();
    let xs: Vec<(Vec<f64>, Label)> = composites
        .iter()
        .zip(&prepared)
        .map(|(c, s)| (c.image.data().to_vec(), s.label))
        .collect();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 200,
        batch_size: 4,
        seed: RngSeed(2),
    };
    let (cnn, history) = cnn_train(CnnSpec::default(), &xs, &cfg).unwrap();
    assert!(history.last() < history.initial());
    let correct = xs.iter().filter(|(x, l)| cnn.predict(x).unwrap() == *l).count();
    let acc = correct as f64 / xs.len() as f64;
    assert!(acc >= 0.95, "training accuracy {acc}");
}
