use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use tongue_core::classify::{svm_train, Metrics, SvmModel};
use tongue_core::config::PipelineConfig;
use tongue_core::dataset::{load_manifest, write_manifest, ManifestRecord};
use tongue_core::detect::detect_quad_heuristic;
use tongue_core::fusion::{fuse_prepared, prepare_sample, CompositeImage, PreparedSample, RegionedSample};
use tongue_core::infotheory::{argmin_layer, score_layers, LayerFeatures};
use tongue_core::nnet::cnn::{cnn_train, CnnCheckpoint};
use tongue_core::nnet::mlp::{mlp_init, MlpCheckpoint};
use tongue_core::nnet::{grad_check, CnnModel, CnnSpec, MlpModel};
use tongue_core::pipeline::{
    evaluate, layer_features, tap_vectors, train_extractors, write_predictions, HeadModel, LayerSelection,
    Prediction, TrainedHead, TransformRecord, PREDICTIONS_FILE,
};
use tongue_core::regionizer::{crop_margins, split_regions, RegionSet};
use tongue_core::registration::register_sample;
use tongue_core::synth::{synth_generate, SynthSpec};
use tongue_core::{load_image, Error, Label, LabeledSample, ReferenceModel, Result, RngSeed, Split};

use crate::{Cli, Command, GradModel};

// same derivation as the full pipeline, so stage commands reproduce `run`
const CNN_SEED_TAG: u64 = 200;
const MI_SEED_TAG: u64 = 300;

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: Option<PipelineConfig>,
}

impl Ctx<'_> {
    fn seed(&self) -> Result<RngSeed> {
        self.cli
            .seed
            .map(RngSeed)
            .or(self.cfg.as_ref().map(|c| c.seed))
            .ok_or_else(|| Error::validation("a seed is required (--seed or a config file)"))
    }

    fn out(&self) -> Result<PathBuf> {
        let dir = self
            .cli
            .out
            .clone()
            .or(self.cfg.as_ref().map(|c| c.out_dir.clone()))
            .ok_or_else(|| Error::validation("an output directory is required (--out)"))?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    /// Config for stage defaults; seed and sources are not needed here.
    fn settings(&self) -> PipelineConfig {
        self.cfg
            .clone()
            .unwrap_or_else(|| PipelineConfig::defaults(self.cli.seed.map(RngSeed).unwrap_or_default()))
    }

    fn reference(&self) -> ReferenceModel {
        self.cfg.as_ref().map(PipelineConfig::reference).unwrap_or_default()
    }

    fn channel(&self, flag: Option<usize>) -> usize {
        flag.or(self.cfg.as_ref().map(|c| c.channel)).unwrap_or(0)
    }

    fn workers(&self) -> Option<usize> {
        self.cli.workers.or(self.cfg.as_ref().and_then(|c| c.workers))
    }
}

pub fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let cfg = cli.config.as_ref().map(PipelineConfig::load).transpose()?;
    let ctx = Ctx { cli, cfg };
    if ctx.workers() == Some(0) {
        return Err(Error::validation("--workers must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.workers().unwrap_or(0))
        .build()
        .map_err(|e| Error::validation(format!("worker pool: {e}")))?;
    pool.install(|| run_command(&ctx))?;
    Ok(ExitCode::SUCCESS)
}

fn run_command(ctx: &Ctx) -> Result<()> {
    match &ctx.cli.command {
        Command::Synth {
            n_per_class,
            separation,
            pose_jitter,
            test_fraction,
        } => synth(ctx, *n_per_class, *separation, *pose_jitter, *test_fraction),
        Command::Register { manifest } => register(ctx, manifest),
        Command::Regions { input } => regions(ctx, input),
        Command::TrainExtractors {
            regions,
            manifest,
            channel,
        } => train_extractors_cmd(ctx, regions, manifest, ctx.channel(*channel)),
        Command::Fuse {
            regions,
            extractors,
            manifest,
            channel,
        } => fuse(ctx, regions, extractors, manifest, ctx.channel(*channel)),
        Command::TrainCnn {
            composites,
            dump_features,
        } => train_cnn(ctx, composites, dump_features.as_deref()),
        Command::TrainSvm { composites, cnn, layer } => train_svm(ctx, composites, cnn.as_deref(), layer.as_deref()),
        Command::MiSelect {
            features,
            bins,
            max_pairs,
        } => mi_select(ctx, features, *bins, *max_pairs),
        Command::Eval {
            model,
            manifest,
            cnn,
            layer,
        } => eval(ctx, model, manifest, cnn.as_deref(), layer.as_deref()),
        Command::Run => run(ctx),
        Command::Gradcheck {
            model,
            step,
            params,
            threshold,
        } => gradcheck(ctx, *model, *step, *params, *threshold),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
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

fn print_metrics(m: &Metrics) {
    println!("{:<6} {:>10}", "metric", "value");
    for (name, v) in m.rows() {
        println!("{name:<6} {:>10}", v.to_string());
    }
}

fn synth(ctx: &Ctx, n_per_class: usize, separation: f64, pose_jitter: f64, test_fraction: f64) -> Result<()> {
    let spec = SynthSpec {
        n_per_class,
        separation,
        pose_jitter,
        image_dims: [512, 512],
        test_fraction,
        seed: ctx.seed()?,
    };
    let out = ctx.out()?;
    let ds = synth_generate(&spec, &out)?;
    println!(
        "wrote {} images ({} train, {} test) and {}",
        ds.samples.len(),
        ds.split(Split::Train).count(),
        ds.split(Split::Test).count(),
        out.join(tongue_core::synth::MANIFEST_NAME).display()
    );
    Ok(())
}

fn register(ctx: &Ctx, manifest: &Path) -> Result<()> {
    let reference = ctx.reference();
    let ds = load_manifest(manifest)?.with_reference(reference);
    let out = ctx.out()?;
    let records: Vec<TransformRecord> = ds
        .samples
        .par_iter()
        .map(|s| {
            let id = Some(s.image_id.as_str());
            let img = load_image(&s.path).map_err(|e| e.in_stage("load", id))?;
            let quad = match s.quad {
                Some(q) => q,
                None => detect_quad_heuristic(&img).map_err(|e| e.in_stage("detect", id))?,
            };
            let reg = register_sample(&img, &quad, &reference).map_err(|e| e.in_stage("register", id))?;
            reg.image.save_png(out.join(format!("{}_reg.png", s.image_id)))?;
            Ok(TransformRecord {
                image_id: s.image_id.clone(),
                params: reg.transform.params(),
                residual: reg.residual,
            })
        })
        .collect::<Result<_>>()?;
    write_jsonl(&out.join("transforms.jsonl"), &records)?;
    let worst = records.iter().map(|r| r.residual).fold(0.0, f64::max);
    println!("registered {} images; max corner residual {worst:.3e}", records.len());
    Ok(())
}

fn regions(ctx: &Ctx, input: &Path) -> Result<()> {
    let out = ctx.out()?;
    let entries = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut jobs: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(input, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(id) = name.strip_suffix("_reg.png") {
            jobs.push((id.to_owned(), path));
        }
    }
    if jobs.is_empty() {
        return Err(Error::validation(format!("no *_reg.png images in {}", input.display())));
    }
    jobs.sort();
    jobs.par_iter()
        .map(|(id, path)| {
            let img = load_image(path)?;
            let set = crop_margins(&img)
                .and_then(|c| split_regions(&c))
                .map_err(|e| e.in_stage("regions", Some(id)))?;
            for (k, r) in set.regions.iter().enumerate() {
                r.save_png(out.join(format!("{id}_r{}.png", k + 1)))?;
            }
            Ok(())
        })
        .collect::<Result<()>>()?;
    println!("wrote regions for {} images", jobs.len());
    Ok(())
}

fn load_regions(dir: &Path, id: &str) -> Result<RegionSet> {
    let mut parts = Vec::with_capacity(5);
    for k in 1..=5 {
        let p = dir.join(format!("{id}_r{k}.png"));
        parts.push(if p.is_file() { Some(load_image(&p)?) } else { None });
    }
    RegionSet::from_parts(id, parts)
}

fn prepared(dir: &Path, samples: &[&LabeledSample], channel: usize) -> Result<Vec<PreparedSample>> {
    samples
        .par_iter()
        .map(|s| {
            let regions = load_regions(dir, &s.image_id)?;
            let r = RegionedSample {
                image_id: s.image_id.clone(),
                label: s.label,
                regions,
            };
            prepare_sample(&r, channel).map_err(|e| e.in_stage("regions", Some(&s.image_id)))
        })
        .collect()
}

fn train_extractors_cmd(ctx: &Ctx, regions: &Path, manifest: &Path, channel: usize) -> Result<()> {
    let ds = load_manifest(manifest)?;
    let train: Vec<&LabeledSample> = ds.split(Split::Train).collect();
    let data = prepared(regions, &train, channel)?;
    let cfg = ctx.settings().extractor_train.with_seed(ctx.seed()?);
    let (models, histories) = train_extractors(&data, cfg)?;
    let out = ctx.out()?;
    for (k, (m, h)) in models.iter().zip(&histories).enumerate() {
        write_json(&out.join(format!("extractor_{}.json", k + 1)), &m.to_checkpoint())?;
        println!("extractor {}: loss {:.4} -> {:.4}", k + 1, h.initial(), h.last());
    }
    Ok(())
}

fn load_extractors(dir: &Path) -> Result<[MlpModel; 4]> {
    let models: Vec<MlpModel> = (1..=4)
        .map(|k| MlpModel::from_checkpoint(read_json::<MlpCheckpoint>(&dir.join(format!("extractor_{k}.json")))?))
        .collect::<Result<_>>()?;
    Ok(models.try_into().expect("four extractors"))
}

pub const COMPOSITE_MANIFEST: &str = "composites.jsonl";

fn fuse(ctx: &Ctx, regions: &Path, extractors: &Path, manifest: &Path, channel: usize) -> Result<()> {
    let ds = load_manifest(manifest)?;
    let ex = load_extractors(extractors)?;
    let out = ctx.out()?;
    let all: Vec<&LabeledSample> = ds.samples.iter().collect();
    let data = prepared(regions, &all, channel)?;
    let records: Vec<ManifestRecord> = data
        .par_iter()
        .zip(&all)
        .map(|(p, s)| {
            let c = fuse_prepared(p, &ex).map_err(|e| e.in_stage("fuse", Some(&p.image_id)))?;
            let name = format!("{}_composite.png", p.image_id);
            c.image.save_png(out.join(&name))?;
            Ok(ManifestRecord {
                path: name,
                label: s.label,
                split: s.split,
                quad: None,
            })
        })
        .collect::<Result<_>>()?;
    write_manifest(out.join(COMPOSITE_MANIFEST), &records)?;
    println!("wrote {} composites and {COMPOSITE_MANIFEST}", records.len());
    Ok(())
}

fn load_composites(manifest: &Path, split: Split) -> Result<Vec<(CompositeImage, Label)>> {
    let ds = load_manifest(manifest)?;
    ds.split(split)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|s| {
            let image = load_image(&s.path)?;
            Ok((
                CompositeImage {
                    image,
                    source_id: s.image_id.clone(),
                },
                s.label,
            ))
        })
        .collect()
}

/// One layer's activations for one class, as written by `train-cnn --dump-features`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureDump {
    pub layer_id: String,
    /// Position of the layer in the network; orders layers for tie-breaking.
    pub layer_index: usize,
    pub class: Label,
    pub features: Vec<Vec<f64>>,
}

fn train_cnn(ctx: &Ctx, composites: &Path, dump: Option<&Path>) -> Result<()> {
    let train = load_composites(composites, Split::Train)?;
    let settings = ctx.settings();
    let spec: CnnSpec = settings.cnn_spec.clone();
    let cfg = settings.cnn_train.with_seed(ctx.seed()?.derive(CNN_SEED_TAG));
    let probe = CnnModel::init(spec.clone(), cfg.seed)?;
    let data: Vec<(Vec<f64>, Label)> = train
        .iter()
        .map(|(c, l)| Ok((probe.input_from_image(&c.image)?, *l)))
        .collect::<Result<_>>()?;
    let (cnn, history) = cnn_train(spec, &data, &cfg)?;
    let out = ctx.out()?;
    write_json(&out.join("cnn.json"), &cnn.to_checkpoint())?;
    println!(
        "cnn: loss {:.4} -> {:.4}, train accuracy {:.4}",
        history.initial(),
        history.last(),
        cnn.accuracy(&data)
    );
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (lf, &index) in layer_features(&cnn, &data)?.into_iter().zip(&cnn.spec().taps) {
            for (class, features) in [(Label::Healthy, lf.class1), (Label::Patient, lf.class2)] {
                let dump = FeatureDump {
                    layer_id: lf.layer_id.clone(),
                    layer_index: index,
                    class,
                    features,
                };
                write_json(&dir.join(format!("{}_{class}.json", lf.layer_id)), &dump)?;
            }
        }
    }
    Ok(())
}

fn train_svm(ctx: &Ctx, composites: &Path, cnn: Option<&Path>, layer: Option<&str>) -> Result<()> {
    let train = load_composites(composites, Split::Train)?;
    let xs: Vec<Vec<f64>> = match (cnn, layer) {
        (Some(path), Some(layer)) => {
            let cnn = CnnModel::from_checkpoint(read_json::<CnnCheckpoint>(path)?)?;
            let inputs: Vec<Vec<f64>> = train
                .iter()
                .map(|(c, _)| cnn.input_from_image(&c.image))
                .collect::<Result<_>>()?;
            let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
            tap_vectors(&cnn, &refs, layer)?
        }
        _ => train.iter().map(|(c, _)| c.image.data().to_vec()).collect(),
    };
    let ys: Vec<f64> = train.iter().map(|(_, l)| l.sign()).collect();
    let model = svm_train(&xs, &ys, &ctx.settings().svm)?;
    write_json(&ctx.out()?.join("svm.json"), &model)?;
    println!(
        "svm: {} support vectors, {} iterations{}",
        model.support_vectors.len(),
        model.iterations,
        if model.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

fn mi_select(ctx: &Ctx, features: &Path, bins: Option<usize>, max_pairs: Option<usize>) -> Result<()> {
    let entries = std::fs::read_dir(features).map_err(|e| Error::io(features, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(features, e))?.path();
        if p.extension().is_some_and(|x| x == "json") {
            paths.push(p);
        }
    }
    paths.sort();
    let mut layers: BTreeMap<(usize, String), LayerFeatures> = BTreeMap::new();
    for p in &paths {
        let d: FeatureDump = read_json(p)?;
        let lf = layers
            .entry((d.layer_index, d.layer_id.clone()))
            .or_insert_with(|| LayerFeatures {
                layer_id: d.layer_id.clone(),
                class1: Vec::new(),
                class2: Vec::new(),
            });
        match d.class {
            Label::Healthy => lf.class1.extend(d.features),
            Label::Patient => lf.class2.extend(d.features),
        }
    }
    let layers: Vec<LayerFeatures> = layers.into_values().collect();
    let settings = ctx.settings();
    let mut params = settings.mi.params(ctx.seed()?.derive(MI_SEED_TAG));
    params.bins = bins.unwrap_or(params.bins);
    params.max_pairs = max_pairs.unwrap_or(params.max_pairs);
    let scores = score_layers(&layers, &params)?;
    let selected = argmin_layer(&scores).layer_id.clone();
    let mut ranked: Vec<_> = scores.iter().collect();
    ranked.sort_by(|a, b| a.mean_mi.total_cmp(&b.mean_mi));
    println!("{:<5} {:<10} {:>12}", "rank", "layer", "mean MI");
    for (i, s) in ranked.iter().enumerate() {
        println!("{:<5} {:<10} {:>12.6}", i + 1, s.layer_id, s.mean_mi);
    }
    println!("selected {selected}");
    if ctx.cli.out.is_some() {
        write_json(&ctx.out()?.join("selected_layer.json"), &LayerSelection { selected, scores })?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport<'a> {
    model: &'a str,
    n_test: usize,
    confusion: tongue_core::classify::ConfusionMatrix,
    metrics: Metrics,
}

fn eval(ctx: &Ctx, model: &Path, manifest: &Path, cnn: Option<&Path>, layer: Option<&str>) -> Result<()> {
    let raw: serde_json::Value = read_json(model)?;
    let kind = raw.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_owned();
    let state = match (kind.as_str(), cnn, layer) {
        ("cnn", _, _) => HeadModel::Cnn {
            cnn: serde_json::from_value(raw)?,
            history: Default::default(),
            selection: None,
        },
        ("svm", Some(cnn), Some(layer)) => HeadModel::SvmTap {
            cnn: read_json(cnn)?,
            history: Default::default(),
            selection: LayerSelection {
                selected: layer.to_owned(),
                scores: Vec::new(),
            },
            svm: serde_json::from_value::<SvmModel>(raw)?,
        },
        ("svm", _, _) => HeadModel::SvmComposite {
            svm: serde_json::from_value(raw)?,
        },
        (other, _, _) => {
            return Err(Error::validation(format!(
                "{}: unsupported model kind `{other}`",
                model.display()
            )))
        }
    };
    let head = TrainedHead::from_state(state)?;
    let test = load_composites(manifest, Split::Test)?;
    if test.is_empty() {
        return Err(Error::validation("manifest has no test samples"));
    }
    let refs: Vec<&CompositeImage> = test.iter().map(|(c, _)| c).collect();
    let preds: Vec<Prediction> = head
        .predict(&refs)?
        .into_iter()
        .zip(&test)
        .map(|((predicted, score), (c, label))| Prediction {
            image_id: c.source_id.clone(),
            label: *label,
            predicted,
            score,
        })
        .collect();
    let ev = evaluate(&preds)?;
    print_metrics(&ev.metrics);
    let out = ctx.out()?;
    write_predictions(&out.join(PREDICTIONS_FILE), &preds)?;
    write_json(
        &out.join("eval_report.json"),
        &EvalReport {
            model: &kind,
            n_test: preds.len(),
            confusion: ev.confusion,
            metrics: ev.metrics,
        },
    )
}

fn run(ctx: &Ctx) -> Result<()> {
    let mut cfg = ctx
        .cfg
        .clone()
        .ok_or_else(|| Error::validation("`run` needs --config"))?;
    if let Some(s) = ctx.cli.seed {
        cfg.seed = RngSeed(s);
    }
    if let Some(w) = ctx.cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(o) = &ctx.cli.out {
        cfg.out_dir = o.clone();
    }
    let report = tongue_core::pipeline::run_pipeline(&cfg)?;
    if let Some(sel) = &report.layer_selection {
        println!("selected layer {}", sel.selected);
    }
    match &report.evaluation {
        Some(ev) => print_metrics(&ev.metrics),
        None => println!("no test samples; evaluation skipped"),
    }
    println!("report: {}", cfg.out_dir.join(tongue_core::pipeline::REPORT_FILE).display());
    Ok(())
}

fn gradcheck(ctx: &Ctx, which: GradModel, step: f64, n: usize, threshold: f64) -> Result<()> {
    let seed = ctx.seed()?;
    let mut rng = seed.stream(7);
    let mut worst = 0.0f64;
    if which != GradModel::Cnn {
        let m = mlp_init(seed);
        let x: Vec<f64> = (0..m.input_dim()).map(|_| rng.random()).collect();
        let e = grad_check(&m, &(x, 1.0), step, n, seed)?;
        println!("mlp max relative error {e:.3e}");
        worst = worst.max(e);
    }
    if which != GradModel::Mlp {
        let spec = ctx.settings().cnn_spec;
        let [h, w, c] = spec.input;
        let m = CnnModel::init(spec, seed)?;
        let x: Vec<f64> = (0..h * w * c).map(|_| rng.random()).collect();
        let e = grad_check(&m, &(x, Label::Patient), step, n, seed)?;
        println!("cnn max relative error {e:.3e}");
        worst = worst.max(e);
    }
    if worst > threshold {
        return Err(Error::Numerical(format!(
            "gradient check error {worst:.3e} exceeds {threshold:.1e}"
        )));
    }
    Ok(())
}
