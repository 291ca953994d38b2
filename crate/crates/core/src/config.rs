//! Run configuration for the end-to-end pipeline (JSON on disk).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::SvmParams;
use crate::dataset::{BoundingQuad, ReferenceModel};
use crate::error::{Error, Result};
use crate::infotheory::{MiParams, Pairing};
use crate::nnet::{CnnSpec, TrainConfig};
use crate::regionizer::{EXTRACTOR_SIDE, FUSION_SIDE};
use crate::rng::RngSeed;
use crate::synth::SynthSpec;

/// Classification head applied to the composites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    #[default]
    Cnn,
    /// SVM on the flattened 32×32×3 composite.
    SvmComposite,
    /// SVM on the CNN tap picked by MI layer selection.
    SvmTap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResizeDims {
    pub extractor: [usize; 2],
    pub center: [usize; 2],
}

impl Default for ResizeDims {
    fn default() -> Self {
        Self {
            extractor: [EXTRACTOR_SIDE, EXTRACTOR_SIDE],
            center: [FUSION_SIDE, FUSION_SIDE],
        }
    }
}

/// Optimizer settings; the seed is derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl TrainSection {
    pub fn with_seed(&self, seed: RngSeed) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

impl From<TrainConfig> for TrainSection {
    fn from(c: TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            batch_size: c.batch_size,
        }
    }
}

fn default_extractor() -> TrainSection {
    TrainConfig::mlp_default().into()
}

fn default_cnn() -> TrainSection {
    TrainConfig::cnn_default().into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiSection {
    pub bins: usize,
    pub max_pairs: usize,
    #[serde(default)]
    pub pairing: Pairing,
    /// Run layer selection whenever a CNN is trained.
    #[serde(default = "yes")]
    pub select: bool,
}

fn yes() -> bool {
    true
}

impl Default for MiSection {
    fn default() -> Self {
        let d = MiParams::default();
        Self {
            bins: d.bins,
            max_pairs: d.max_pairs,
            pairing: d.pairing,
            select: true,
        }
    }
}

impl MiSection {
    pub fn params(&self, seed: RngSeed) -> MiParams {
        MiParams {
            bins: self.bins,
            max_pairs: self.max_pairs,
            seed,
            pairing: self.pairing,
        }
    }
}

/// Synthetic data request; generated under `<out_dir>/data`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n_per_class: usize,
    pub separation: f64,
    #[serde(default)]
    pub pose_jitter: f64,
    #[serde(default = "quarter")]
    pub test_fraction: f64,
    /// Defaults to a seed derived from the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<RngSeed>,
}

fn quarter() -> f64 {
    0.25
}

impl SynthSection {
    pub fn spec(&self, run_seed: RngSeed) -> SynthSpec {
        SynthSpec {
            n_per_class: self.n_per_class,
            separation: self.separation,
            pose_jitter: self.pose_jitter,
            image_dims: [512, 512],
            test_fraction: self.test_fraction,
            seed: self.seed.unwrap_or_else(|| run_seed.derive(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_dims")]
    pub reference_dims: [usize; 2],
    #[serde(default = "default_quad")]
    pub reference_quad: BoundingQuad,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSection>,
    #[serde(default)]
    pub channel: usize,
    #[serde(default)]
    pub resize: ResizeDims,
    #[serde(default)]
    pub mi: MiSection,
    #[serde(default = "default_extractor")]
    pub extractor_train: TrainSection,
    #[serde(default = "default_cnn")]
    pub cnn_train: TrainSection,
    #[serde(default)]
    pub cnn_spec: CnnSpec,
    #[serde(default)]
    pub svm: SvmParams,
    #[serde(default)]
    pub head: Head,
    pub seed: RngSeed,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Worker threads for per-image stages; `None` uses all cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn default_dims() -> [usize; 2] {
    ReferenceModel::default().reference_dims
}

fn default_quad() -> BoundingQuad {
    ReferenceModel::default().reference_quad
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    /// A config with every default and the given seed, reading `manifest`.
    pub fn for_manifest(manifest: impl Into<PathBuf>, seed: RngSeed) -> Self {
        Self {
            manifest: Some(manifest.into()),
            ..Self::defaults(seed)
        }
    }

    pub fn for_synth(synth: SynthSection, seed: RngSeed) -> Self {
        Self {
            synth: Some(synth),
            ..Self::defaults(seed)
        }
    }

    /// Every default, no data source.
    pub fn defaults(seed: RngSeed) -> Self {
        Self {
            reference_dims: default_dims(),
            reference_quad: default_quad(),
            manifest: None,
            synth: None,
            channel: 0,
            resize: ResizeDims::default(),
            mi: MiSection::default(),
            extractor_train: default_extractor(),
            cnn_train: default_cnn(),
            cnn_spec: CnnSpec::default(),
            svm: SvmParams::default(),
            head: Head::default(),
            seed,
            out_dir: default_out(),
            workers: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config file; relative paths in it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(m) = self.manifest.as_mut() {
            fix(m);
        }
        fix(&mut self.out_dir);
    }

    pub fn reference(&self) -> ReferenceModel {
        ReferenceModel {
            reference_dims: self.reference_dims,
            reference_quad: self.reference_quad,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.manifest, &self.synth) {
            (Some(_), Some(_)) => return Err(Error::validation("give either `manifest` or `synth`, not both")),
            (None, None) => return Err(Error::validation("one of `manifest` or `synth` is required")),
            (Some(m), None) if !m.is_file() => {
                return Err(Error::validation(format!("manifest {} does not exist", m.display())))
            }
            (None, Some(s)) => s.spec(self.seed).validate()?,
            _ => {}
        }
        if self.reference_dims != [512, 512] {
            return Err(Error::validation("reference_dims must be [512,512] for the fixed region layout"));
        }
        self.reference_quad.check_within(self.reference_dims[0], self.reference_dims[1])?;
        if self.reference_quad.is_degenerate() {
            return Err(Error::Degenerate("reference quad has no area".into()));
        }
        if self.channel > 2 {
            return Err(Error::Index(format!("channel {} out of range for RGB", self.channel)));
        }
        if self.resize != ResizeDims::default() {
            return Err(Error::validation(format!(
                "resize dims are fixed at {EXTRACTOR_SIDE}x{EXTRACTOR_SIDE} (extractor) and \
                 {FUSION_SIDE}x{FUSION_SIDE} (center) by the composite layout"
            )));
        }
        if self.mi.bins == 0 || self.mi.max_pairs == 0 {
            return Err(Error::validation("mi bins and max_pairs must be positive"));
        }
        self.extractor_train.with_seed(self.seed).validate()?;
        self.cnn_train.with_seed(self.seed).validate()?;
        self.cnn_spec.shapes()?;
        if self.cnn_spec.input != [32, 32, 3] {
            return Err(Error::shape("cnn input must be [32,32,3] composites"));
        }
        if self.head == Head::SvmTap && self.cnn_spec.taps.is_empty() {
            return Err(Error::validation("svm_tap head needs at least one cnn tap"));
        }
        if !(self.svm.c > 0.0) || !(self.svm.tol > 0.0) {
            return Err(Error::validation("svm c and tol must be positive"));
        }
        if self.workers == Some(0) {
            return Err(Error::validation("workers must be at least 1"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical (compact) JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
