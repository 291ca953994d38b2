//! End-to-end run: register → crop → regions → extractors → fuse → head →
//! layer selection → evaluation on the test split.
//!
//! Only train-split samples reach any training step. Stage results that cost
//! real time (extractors, head) are cached under `<out>/cache`, keyed by a
//! hash of the stage name, the config sections the stage reads, and a digest
//! of its training inputs; a cache hit reloads bit-identical parameters.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{confusion, metrics, svm_predict, svm_train, ConfusionMatrix, Metrics, SvmModel, SvmParams};
use crate::config::{Head, PipelineConfig};
use crate::dataset::{load_manifest, Dataset, Label, LabeledSample, ReferenceModel, Split};
use crate::detect::detect_quad_heuristic;
use crate::error::{Error, Result};
use crate::fusion::{fuse_prepared, prepare_sample, CompositeImage, PreparedSample, RegionedSample};
use crate::image::load_image;
use crate::infotheory::{score_layers, LayerFeatures, LayerScore, MiParams};
use crate::nnet::cnn::{cnn_train, CnnCheckpoint};
use crate::nnet::mlp::{mlp_train, MlpCheckpoint};
use crate::nnet::{CnnModel, CnnSpec, MlpModel, TrainConfig, TrainHistory};
use crate::regionizer::{crop_margins, split_regions};
use crate::registration::register_sample;
use crate::rng::RngSeed;
use crate::synth::{synth_generate, MANIFEST_NAME};

pub const REPORT_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const CACHE_DIR: &str = "cache";

const EXTRACTOR_SEED_TAG: u64 = 100;
const CNN_SEED_TAG: u64 = 200;
const MI_SEED_TAG: u64 = 300;

/// Per-sample registration outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub image_id: String,
    pub params: [f64; 6],
    pub residual: f64,
}

/// Loads, registers, crops and splits one sample. The manifest quad is used
/// when present, otherwise the heuristic detector supplies one.
pub fn prepare_one(
    s: &LabeledSample,
    reference: &ReferenceModel,
    channel: usize,
) -> Result<(PreparedSample, TransformRecord)> {
    let id = Some(s.image_id.as_str());
    let img = load_image(&s.path).map_err(|e| e.in_stage("load", id))?;
    if img.channels() != 3 {
        return Err(Error::shape(format!("expected an RGB image, got {} channels", img.channels())).in_stage("load", id));
    }
    let quad = match s.quad {
        Some(q) => q,
        None => detect_quad_heuristic(&img).map_err(|e| e.in_stage("detect", id))?,
    };
    let reg = register_sample(&img, &quad, reference).map_err(|e| e.in_stage("register", id))?;
    let regions = crop_margins(&reg.image)
        .and_then(|c| split_regions(&c))
        .map_err(|e| e.in_stage("regions", id))?;
    let regioned = RegionedSample {
        image_id: s.image_id.clone(),
        label: s.label,
        regions,
    };
    let prepared = prepare_sample(&regioned, channel).map_err(|e| e.in_stage("regions", id))?;
    let record = TransformRecord {
        image_id: s.image_id.clone(),
        params: reg.transform.params(),
        residual: reg.residual,
    };
    Ok((prepared, record))
}

pub fn prepare_all(
    samples: &[&LabeledSample],
    reference: &ReferenceModel,
    channel: usize,
) -> Result<(Vec<PreparedSample>, Vec<TransformRecord>)> {
    let out: Vec<_> = samples
        .par_iter()
        .map(|s| prepare_one(s, reference, channel))
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

fn require_both(labels: impl Iterator<Item = Label>, what: &str) -> Result<()> {
    let mut seen = [false; 2];
    for l in labels {
        seen[l.index()] = true;
    }
    if seen != [true, true] {
        return Err(Error::validation(format!("{what} needs samples of both classes")));
    }
    Ok(())
}

/// Trains the four corner-region networks on their 1024-vectors.
pub fn train_extractors(
    train: &[PreparedSample],
    section: TrainConfig,
) -> Result<([MlpModel; 4], [TrainHistory; 4])> {
    require_both(train.iter().map(|s| s.label), "extractor training")?;
    let trained: Vec<(MlpModel, TrainHistory)> = (0..4)
        .into_par_iter()
        .map(|k| {
            let data: Vec<(Vec<f64>, f64)> = train
                .iter()
                .map(|s| (s.vectors[k].clone(), s.label.index() as f64))
                .collect();
            let cfg = TrainConfig {
                seed: section.seed.derive(EXTRACTOR_SEED_TAG + k as u64),
                ..section
            };
            mlp_train(&data, &cfg).map_err(|e| e.in_stage("train-extractors", None))
        })
        .collect::<Result<_>>()?;
    let (models, hist): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok((
        models.try_into().expect("four extractors"),
        hist.try_into().expect("four histories"),
    ))
}

pub fn fuse_all(samples: &[PreparedSample], extractors: &[MlpModel; 4]) -> Result<Vec<CompositeImage>> {
    samples
        .par_iter()
        .map(|s| fuse_prepared(s, extractors).map_err(|e| e.in_stage("fuse", Some(&s.image_id))))
        .collect()
}

pub fn layer_id(tap: usize) -> String {
    format!("L{tap}")
}

/// Tap activations of every composite, grouped per tap layer by class.
pub fn layer_features(cnn: &CnnModel, composites: &[(Vec<f64>, Label)]) -> Result<Vec<LayerFeatures>> {
    let outs: Vec<_> = composites
        .par_iter()
        .map(|(x, _)| cnn.forward(x))
        .collect::<Result<_>>()?;
    let taps = &cnn.spec().taps;
    Ok(taps
        .iter()
        .enumerate()
        .map(|(t, &idx)| {
            let mut lf = LayerFeatures {
                layer_id: layer_id(idx),
                class1: Vec::new(),
                class2: Vec::new(),
            };
            for (o, (_, label)) in outs.iter().zip(composites) {
                let v = o.taps[t].1.clone();
                match label {
                    Label::Healthy => lf.class1.push(v),
                    Label::Patient => lf.class2.push(v),
                }
            }
            lf
        })
        .collect())
}

/// Features of one tap layer (by id) for each input.
pub fn tap_vectors(cnn: &CnnModel, xs: &[&[f64]], layer: &str) -> Result<Vec<Vec<f64>>> {
    let t = cnn
        .spec()
        .taps
        .iter()
        .position(|&i| layer_id(i) == layer)
        .ok_or_else(|| Error::validation(format!("cnn has no tap `{layer}`")))?;
    xs.par_iter()
        .map(|x| Ok(cnn.forward(x)?.taps[t].1.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub selected: String,
    /// Scores in tap order.
    pub scores: Vec<LayerScore>,
}

pub fn select_tap(cnn: &CnnModel, train: &[(Vec<f64>, Label)], params: &MiParams) -> Result<LayerSelection> {
    let feats = layer_features(cnn, train)?;
    let scores = score_layers(&feats, params)?;
    let selected = crate::infotheory::argmin_layer(&scores).layer_id.clone();
    Ok(LayerSelection { selected, scores })
}

/// A trained classification head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "head", rename_all = "snake_case")]
pub enum HeadModel {
    Cnn {
        cnn: CnnCheckpoint,
        history: TrainHistory,
        selection: Option<LayerSelection>,
    },
    SvmComposite {
        svm: SvmModel,
    },
    SvmTap {
        cnn: CnnCheckpoint,
        history: TrainHistory,
        selection: LayerSelection,
        svm: SvmModel,
    },
}

/// Fitted head plus restored models ready for prediction.
pub struct TrainedHead {
    pub state: HeadModel,
    cnn: Option<CnnModel>,
}

impl TrainedHead {
    pub fn from_state(state: HeadModel) -> Result<Self> {
        let cnn = match &state {
            HeadModel::Cnn { cnn, .. } | HeadModel::SvmTap { cnn, .. } => Some(CnnModel::from_checkpoint(cnn.clone())?),
            HeadModel::SvmComposite { .. } => None,
        };
        Ok(Self { state, cnn })
    }

    pub fn selection(&self) -> Option<&LayerSelection> {
        match &self.state {
            HeadModel::Cnn { selection, .. } => selection.as_ref(),
            HeadModel::SvmTap { selection, .. } => Some(selection),
            HeadModel::SvmComposite { .. } => None,
        }
    }

    pub fn history(&self) -> Option<&TrainHistory> {
        match &self.state {
            HeadModel::Cnn { history, .. } | HeadModel::SvmTap { history, .. } => Some(history),
            HeadModel::SvmComposite { .. } => None,
        }
    }

    /// Predicted label and score (patient probability for the CNN, signed
    /// decision value for SVM heads) for each composite.
    pub fn predict(&self, composites: &[&CompositeImage]) -> Result<Vec<(Label, f64)>> {
        match (&self.state, &self.cnn) {
            (HeadModel::Cnn { .. }, Some(cnn)) => composites
                .par_iter()
                .map(|c| {
                    let out = cnn.forward_image(&c.image)?;
                    let label = if out.probs[1] > out.probs[0] { Label::Patient } else { Label::Healthy };
                    Ok((label, out.probs[1]))
                })
                .collect(),
            (HeadModel::SvmComposite { svm }, _) => composites
                .par_iter()
                .map(|c| {
                    let (y, d) = svm_predict(svm, c.image.data())?;
                    Ok((Label::from_sign(y), d))
                })
                .collect(),
            (HeadModel::SvmTap { svm, selection, .. }, Some(cnn)) => {
                let xs: Vec<Vec<f64>> = composites
                    .iter()
                    .map(|c| cnn.input_from_image(&c.image))
                    .collect::<Result<_>>()?;
                let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
                tap_vectors(cnn, &refs, &selection.selected)?
                    .par_iter()
                    .map(|f| {
                        let (y, d) = svm_predict(svm, f)?;
                        Ok((Label::from_sign(y), d))
                    })
                    .collect()
            }
            _ => unreachable!("cnn restored for every cnn-backed head"),
        }
    }
}

pub struct HeadSettings<'a> {
    pub head: Head,
    pub cnn_spec: &'a CnnSpec,
    pub cnn_train: TrainConfig,
    pub svm: &'a SvmParams,
    pub mi: Option<MiParams>,
}

pub fn train_head(train: &[&CompositeImage], labels: &[Label], s: &HeadSettings) -> Result<TrainedHead> {
    require_both(labels.iter().copied(), "head training")?;
    let state = match s.head {
        Head::SvmComposite => {
            let xs: Vec<Vec<f64>> = train.iter().map(|c| c.image.data().to_vec()).collect();
            let ys: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
            HeadModel::SvmComposite {
                svm: svm_train(&xs, &ys, s.svm).map_err(|e| e.in_stage("train-svm", None))?,
            }
        }
        Head::Cnn | Head::SvmTap => {
            let probe = CnnModel::init(s.cnn_spec.clone(), s.cnn_train.seed)?;
            let data: Vec<(Vec<f64>, Label)> = train
                .iter()
                .zip(labels)
                .map(|(c, l)| Ok((probe.input_from_image(&c.image)?, *l)))
                .collect::<Result<_>>()?;
            let (cnn, history) =
                cnn_train(s.cnn_spec.clone(), &data, &s.cnn_train).map_err(|e| e.in_stage("train-cnn", None))?;
            let mi = match (s.head, s.mi) {
                (_, Some(p)) => Some(p),
                (Head::SvmTap, None) => Some(MiParams::default()),
                _ => None,
            };
            let selection = mi
                .map(|p| select_tap(&cnn, &data, &p))
                .transpose()
                .map_err(|e| e.in_stage("mi-select", None))?;
            if s.head == Head::Cnn {
                HeadModel::Cnn {
                    cnn: cnn.to_checkpoint(),
                    history,
                    selection,
                }
            } else {
                let selection = selection.expect("selection runs for svm_tap");
                let refs: Vec<&[f64]> = data.iter().map(|(x, _)| x.as_slice()).collect();
                let feats = tap_vectors(&cnn, &refs, &selection.selected)?;
                let ys: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
                let svm = svm_train(&feats, &ys, s.svm).map_err(|e| e.in_stage("train-svm", None))?;
                HeadModel::SvmTap {
                    cnn: cnn.to_checkpoint(),
                    history,
                    selection,
                    svm,
                }
            }
        }
    };
    TrainedHead::from_state(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub label: Label,
    pub predicted: Label,
    pub score: f64,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for p in preds {
        w.serialize(p).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::validation(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

pub fn evaluate(preds: &[Prediction]) -> Result<Evaluation> {
    let p: Vec<Label> = preds.iter().map(|p| p.predicted).collect();
    let t: Vec<Label> = preds.iter().map(|p| p.label).collect();
    let cm = confusion(&p, &t)?;
    Ok(Evaluation {
        confusion: cm,
        metrics: metrics(&cm)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSummary {
    pub train_healthy: usize,
    pub train_patient: usize,
    pub test_healthy: usize,
    pub test_patient: usize,
}

impl DataSummary {
    pub fn of(ds: &Dataset) -> Self {
        Self {
            train_healthy: ds.count(Split::Train, Label::Healthy),
            train_patient: ds.count(Split::Train, Label::Patient),
            test_healthy: ds.count(Split::Test, Label::Healthy),
            test_patient: ds.count(Split::Test, Label::Patient),
        }
    }

    pub fn n_train(&self) -> usize {
        self.train_healthy + self.train_patient
    }

    pub fn n_test(&self) -> usize {
        self.test_healthy + self.test_patient
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    /// `[initial, final]` training loss of each extractor.
    pub extractor_loss: Vec<[f64; 2]>,
    pub head_loss: Option<[f64; 2]>,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub seed: RngSeed,
    pub replay: String,
    pub data: DataSummary,
    pub head: Head,
    pub training: TrainingSummary,
    pub layer_selection: Option<LayerSelection>,
    /// Absent when the test split is empty.
    pub evaluation: Option<Evaluation>,
}

impl RunReport {
    pub fn accuracy(&self) -> Option<f64> {
        self.evaluation.as_ref().and_then(|e| e.metrics.acc.value())
    }
}

/// Content-addressed store for stage outputs.
pub struct StageCache {
    dir: PathBuf,
}

impl StageCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, stage: &str, key: &str) -> PathBuf {
        self.dir.join(format!("{stage}-{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, stage: &str, key: &str) -> Option<T> {
        let bytes = std::fs::read(self.path(stage, key)).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {stage}-{key}: {e}");
                None
            }
        }
    }

    pub fn put<T: Serialize>(&self, stage: &str, key: &str, value: &T) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path(stage, key);
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(value)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Incremental SHA-256 over stage inputs.
#[derive(Default)]
pub struct KeyHasher(Sha256);

impl KeyHasher {
    pub fn new(stage: &str) -> Self {
        let mut h = Self::default();
        h.text(stage);
        h
    }

    pub fn text(&mut self, s: &str) -> &mut Self {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
        self
    }

    pub fn json<T: Serialize>(&mut self, v: &T) -> &mut Self {
        self.text(&serde_json::to_string(v).expect("key input serializes"))
    }

    pub fn floats(&mut self, xs: &[f64]) -> &mut Self {
        for x in xs {
            self.0.update(x.to_bits().to_le_bytes());
        }
        self
    }

    pub fn prepared(&mut self, s: &PreparedSample) -> &mut Self {
        self.text(&s.image_id).text(&s.label.to_string());
        for v in &s.vectors {
            self.floats(v);
        }
        self.floats(s.center.data())
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

#[derive(Serialize, Deserialize)]
struct ExtractorStage {
    models: Vec<MlpCheckpoint>,
    histories: Vec<TrainHistory>,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let ds = match (&cfg.manifest, &cfg.synth) {
        (Some(m), _) => load_manifest(m)?,
        (None, Some(s)) => {
            let spec = s.spec(cfg.seed);
            let dir = cfg.out_dir.join("data");
            let stamp = dir.join("synth_spec.json");
            let want = serde_json::to_string(&spec)?;
            let manifest = dir.join(MANIFEST_NAME);
            if manifest.is_file() && std::fs::read_to_string(&stamp).ok().as_deref() == Some(want.as_str()) {
                log::info!("reusing synthetic data in {}", dir.display());
                load_manifest(&manifest)?
            } else {
                let t = Instant::now();
                let ds = synth_generate(&spec, &dir).map_err(|e| e.in_stage("synth", None))?;
                std::fs::write(&stamp, want).map_err(|e| Error::io(&stamp, e))?;
                log::info!("synth: {} images in {:.1?}", ds.samples.len(), t.elapsed());
                ds
            }
        }
        (None, None) => return Err(Error::validation("no data source configured")),
    };
    Ok(ds.with_reference(cfg.reference()))
}

/// Executes the configured run and writes report, predictions and
/// checkpoints under `cfg.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::validation(format!("worker pool: {e}")))?;
    pool.install(|| run_inner(cfg))
}

fn run_inner(cfg: &PipelineConfig) -> Result<RunReport> {
    let out = &cfg.out_dir;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let cache = StageCache::new(out.join(CACHE_DIR));
    let config_path = out.join("config.json");
    write_json(&config_path, cfg)?;

    let ds = load_dataset(cfg)?;
    ds.require_both_classes(Split::Train)?;
    let summary = DataSummary::of(&ds);

    let t = Instant::now();
    let train_refs: Vec<&LabeledSample> = ds.split(Split::Train).collect();
    let test_refs: Vec<&LabeledSample> = ds.split(Split::Test).collect();
    let (train, mut transforms) = prepare_all(&train_refs, &ds.reference, cfg.channel)?;
    let (test, test_transforms) = prepare_all(&test_refs, &ds.reference, cfg.channel)?;
    transforms.extend(test_transforms);
    write_jsonl(&out.join("transforms.jsonl"), &transforms)?;
    log::info!("register+regions: {} samples in {:.1?}", transforms.len(), t.elapsed());

    // extractors
    let t = Instant::now();
    let mut key = KeyHasher::new("extractors");
    key.json(&(cfg.seed, cfg.channel, &cfg.extractor_train));
    train.iter().for_each(|s| {
        key.prepared(s);
    });
    let ex_key = key.finish();
    let stage: ExtractorStage = match cache.get("extractors", &ex_key) {
        Some(s) => {
            log::info!("extractors: cache hit");
            s
        }
        None => {
            let (models, histories) = train_extractors(&train, cfg.extractor_train.with_seed(cfg.seed))?;
            let s = ExtractorStage {
                models: models.iter().map(MlpModel::to_checkpoint).collect(),
                histories: histories.to_vec(),
            };
            cache.put("extractors", &ex_key, &s)?;
            log::info!("extractors: trained in {:.1?}", t.elapsed());
            s
        }
    };
    let extractors: [MlpModel; 4] = stage
        .models
        .iter()
        .map(|c| MlpModel::from_checkpoint(c.clone()))
        .collect::<Result<Vec<_>>>()?
        .try_into()
        .map_err(|_| Error::validation("cached extractor stage is malformed"))?;
    for (k, c) in stage.models.iter().enumerate() {
        write_json(&ckpt_dir.join(format!("extractor_{}.json", k + 1)), c)?;
    }

    // fusion
    let train_comp = fuse_all(&train, &extractors)?;
    let test_comp = fuse_all(&test, &extractors)?;

    // head
    let t = Instant::now();
    let settings = HeadSettings {
        head: cfg.head,
        cnn_spec: &cfg.cnn_spec,
        cnn_train: cfg.cnn_train.with_seed(cfg.seed.derive(CNN_SEED_TAG)),
        svm: &cfg.svm,
        mi: cfg.mi.select.then(|| cfg.mi.params(cfg.seed.derive(MI_SEED_TAG))),
    };
    let mut key = KeyHasher::new("head");
    key.text(&ex_key)
        .json(&(cfg.head, &cfg.cnn_spec, &cfg.cnn_train, &cfg.svm, &settings.mi, cfg.seed));
    let head_key = key.finish();
    let train_labels: Vec<Label> = train.iter().map(|s| s.label).collect();
    let train_comp_refs: Vec<&CompositeImage> = train_comp.iter().collect();
    let head = match cache.get::<HeadModel>("head", &head_key) {
        Some(state) => {
            log::info!("head: cache hit");
            TrainedHead::from_state(state)?
        }
        None => {
            let h = train_head(&train_comp_refs, &train_labels, &settings)?;
            cache.put("head", &head_key, &h.state)?;
            log::info!("head: trained in {:.1?}", t.elapsed());
            h
        }
    };
    match &head.state {
        HeadModel::Cnn { cnn, .. } => write_json(&ckpt_dir.join("cnn.json"), cnn)?,
        HeadModel::SvmComposite { svm } => write_json(&ckpt_dir.join("svm.json"), svm)?,
        HeadModel::SvmTap { cnn, svm, .. } => {
            write_json(&ckpt_dir.join("cnn.json"), cnn)?;
            write_json(&ckpt_dir.join("svm.json"), svm)?;
        }
    }
    if let Some(sel) = head.selection() {
        write_json(&out.join("selected_layer.json"), sel)?;
    }

    let train_pred = head.predict(&train_comp_refs)?;
    let train_accuracy = train_pred
        .iter()
        .zip(&train_labels)
        .filter(|((p, _), l)| p == *l)
        .count() as f64
        / train_labels.len() as f64;

    // evaluation
    let test_refs: Vec<&CompositeImage> = test_comp.iter().collect();
    let preds: Vec<Prediction> = head
        .predict(&test_refs)?
        .into_iter()
        .zip(&test)
        .map(|((predicted, score), s)| Prediction {
            image_id: s.image_id.clone(),
            label: s.label,
            predicted,
            score,
        })
        .collect();
    write_predictions(&out.join(PREDICTIONS_FILE), &preds)?;
    let evaluation = if preds.is_empty() { None } else { Some(evaluate(&preds)?) };

    let report = RunReport {
        format_version: REPORT_VERSION,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        replay: format!("tongue run --config {}", config_path.display()),
        data: summary,
        head: cfg.head,
        training: TrainingSummary {
            extractor_loss: stage.histories.iter().map(|h| [h.initial(), h.last()]).collect(),
            head_loss: head.history().map(|h| [h.initial(), h.last()]),
            train_accuracy,
        },
        layer_selection: head.selection().cloned(),
        evaluation,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}
