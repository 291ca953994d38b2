//! Synthetic two-class tongue photographs.
//!
//! Each 512×512 image shows a skin-toned face with a dark mouth and an
//! elliptical tongue. Patient tongues shift from a pink-red toward a
//! yellowish coated color and gain pale coating patches, both in proportion
//! to `separation`; with `separation = 0` both classes come from the same
//! distribution. Pose jitter applies a random affine map (about the image
//! center) to the tongue and mouth, and the jittered canonical corners are
//! recorded as the sample's quad.

use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_manifest, BoundingQuad, Dataset, Label, ManifestRecord, Point, ReferenceModel, Split};
use crate::detect::{hsv, is_tongue_pixel};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::registration::{invert, AffineTransform};
use crate::rng::RngSeed;

pub const IMAGES_DIR: &str = "images";
pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Canonical tongue ellipse: center and semi-axes, in pixels.
const TONGUE_CENTER: (f64, f64) = (255.5, 255.5);
const TONGUE_AXES: (f64, f64) = (160.0, 160.0);
const MOUTH_AXES: (f64, f64) = (192.0, 186.0);

const SKIN: [f64; 3] = [0.80, 0.68, 0.60];
const MOUTH: [f64; 3] = [0.24, 0.09, 0.09];
const HEALTHY: [f64; 3] = [0.82, 0.36, 0.40];
const COATED: [f64; 3] = [0.74, 0.58, 0.36];
const COATING_PATCH: [f64; 3] = [0.90, 0.86, 0.72];
const MAX_PATCHES: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_per_class: usize,
    /// Class shift strength in `[0, 1]`.
    pub separation: f64,
    /// Largest perturbation of each linear affine entry; translations range
    /// over ±100·pose_jitter pixels.
    #[serde(default)]
    pub pose_jitter: f64,
    #[serde(default = "default_dims")]
    pub image_dims: [usize; 2],
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    pub seed: RngSeed,
}

fn default_dims() -> [usize; 2] {
    [512, 512]
}

fn default_test_fraction() -> f64 {
    0.25
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::validation("n_per_class must be positive"));
        }
        if !(0.0..=1.0).contains(&self.separation) {
            return Err(Error::validation("separation must lie in [0,1]"));
        }
        if !(0.0..=0.2).contains(&self.pose_jitter) {
            return Err(Error::validation("pose_jitter must lie in [0,0.2]"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::validation("test_fraction must lie in [0,1)"));
        }
        if self.image_dims != [512, 512] {
            return Err(Error::validation("synthetic images are 512x512"));
        }
        Ok(())
    }

    pub fn n_test_per_class(&self) -> usize {
        (self.n_per_class as f64 * self.test_fraction).round() as usize
    }
}

/// The canonical tongue quad; zero-jitter samples sit exactly on it.
pub fn canonical_quad() -> BoundingQuad {
    ReferenceModel::default().reference_quad
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image: ImageTensor,
    pub quad: BoundingQuad,
    pub label: Label,
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t)
}

/// Smooth texture: a few random low-frequency plane waves.
struct Waves(Vec<(f64, f64, f64, f64)>);

impl Waves {
    fn new(rng: &mut impl Rng, n: usize, amp: f64) -> Self {
        Waves(
            (0..n)
                .map(|_| {
                    let theta = rng.random_range(0.0..TAU);
                    let freq = rng.random_range(0.01..0.05);
                    (freq * theta.cos(), freq * theta.sin(), rng.random_range(0.0..TAU), amp / n as f64)
                })
                .collect(),
        )
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.0.iter().map(|(kx, ky, ph, a)| a * (kx * x + ky * y + ph).sin()).sum()
    }
}

pub fn render_sample(label: Label, separation: f64, pose_jitter: f64, seed: RngSeed) -> Result<SynthSample> {
    let mut rng = seed.rng();
    let tint = Normal::new(0.0, 0.025).expect("valid sigma");

    // drawn even without jitter so that texture and color draws do not depend on it
    let mut u = || pose_jitter * rng.random_range(-1.0..=1.0);
    let (a11, a12, a21, a22) = (1.0 + u(), u(), u(), 1.0 + u());
    let (tx, ty) = (100.0 * u(), 100.0 * u());
    let (cx, cy) = TONGUE_CENTER;
    // canonical → image: p ↦ A(p − c) + c + t
    let pose = AffineTransform {
        t11: a11,
        t12: a12,
        t13: cx + tx - a11 * cx - a12 * cy,
        t21: a21,
        t22: a22,
        t23: cy + ty - a21 * cx - a22 * cy,
    };
    let to_canonical = invert(&pose)?;
    let quad = BoundingQuad::new(canonical_quad().corners.map(|p| pose.apply(p)));

    let skin: [f64; 3] = SKIN.map(|v| v + tint.sample(&mut rng));
    let shift = if label == Label::Patient { separation } else { 0.0 };
    let tongue: [f64; 3] = lerp3(HEALTHY, COATED, shift).map(|v| v + tint.sample(&mut rng));
    let skin_waves = Waves::new(&mut rng, 4, 0.05);
    let tongue_waves = Waves::new(&mut rng, 5, 0.06);
    let n_patches = (MAX_PATCHES * shift).round() as usize;
    let patches: Vec<(f64, f64, f64)> = (0..n_patches)
        .map(|_| {
            let r = 130.0 * rng.random::<f64>().sqrt();
            let th = rng.random_range(0.0..TAU);
            (cx + r * th.cos(), cy + r * th.sin(), rng.random_range(6.0..14.0))
        })
        .collect();
    let eyes = [(150.0, 48.0), (362.0, 48.0)];

    let (h, w) = (512, 512);
    let mut data = Vec::with_capacity(h * w * 3);
    for row in 0..h {
        for col in 0..w {
            let (x, y) = (col as f64, row as f64);
            let q = to_canonical.apply(Point::new(x, y));
            let (dx, dy) = (q.x - cx, q.y - cy);
            let tongue_r = (dx / TONGUE_AXES.0).powi(2) + (dy / TONGUE_AXES.1).powi(2);
            let mouth_r = (dx / MOUTH_AXES.0).powi(2) + (dy / MOUTH_AXES.1).powi(2);
            let color = if tongue_r <= 1.0 {
                let on_patch = patches
                    .iter()
                    .any(|(px, py, pr)| (q.x - px).powi(2) + (q.y - py).powi(2) <= pr * pr);
                let base = if on_patch { COATING_PATCH } else { tongue };
                let t = tongue_waves.at(q.x, q.y);
                base.map(|v| v + t)
            } else if mouth_r <= 1.0 {
                MOUTH
            } else if eyes
                .iter()
                .any(|(ex, ey)| ((x - ex) / 34.0).powi(2) + ((y - ey) / 14.0).powi(2) <= 1.0)
            {
                [0.15, 0.12, 0.11]
            } else {
                let shade = 0.06 * (y / h as f64 - 0.5) + skin_waves.at(x, y);
                skin.map(|v| v - shade)
            };
            data.extend(color.map(|v| v.clamp(0.0, 1.0)));
        }
    }
    Ok(SynthSample {
        image: ImageTensor::new(h, w, 3, data)?,
        quad,
        label,
    })
}

fn sample_seed(spec: &SynthSpec, label: Label, i: usize) -> RngSeed {
    spec.seed.derive(((label.index() as u64) << 32) | i as u64)
}

pub fn image_id(label: Label, i: usize) -> String {
    format!("{label}_{i:04}")
}

/// Renders the set, writes `images/<id>.png` and `manifest.jsonl` under
/// `out`, and returns the loaded dataset. Deterministic per seed.
pub fn synth_generate(spec: &SynthSpec, out: &Path) -> Result<Dataset> {
    spec.validate()?;
    let img_dir = out.join(IMAGES_DIR);
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;

    let n_test = spec.n_test_per_class();
    let mut jobs = Vec::with_capacity(2 * spec.n_per_class);
    for (k, label) in Label::ALL.into_iter().enumerate() {
        let mut rng = spec.seed.stream(10 + k as u64);
        let mut is_test = vec![false; spec.n_per_class];
        for i in sample_indices(&mut rng, spec.n_per_class, n_test) {
            is_test[i] = true;
        }
        for (i, t) in is_test.into_iter().enumerate() {
            jobs.push((label, i, if t { Split::Test } else { Split::Train }));
        }
    }

    let records: Vec<ManifestRecord> = jobs
        .par_iter()
        .map(|&(label, i, split)| {
            let s = render_sample(label, spec.separation, spec.pose_jitter, sample_seed(spec, label, i))?;
            let rel = format!("{IMAGES_DIR}/{}.png", image_id(label, i));
            s.image.save_png(out.join(&rel))?;
            Ok(ManifestRecord {
                path: rel,
                label,
                split,
                quad: Some(s.quad),
            })
        })
        .collect::<Result<_>>()?;
    let manifest = out.join(MANIFEST_NAME);
    write_manifest(&manifest, &records)?;
    crate::dataset::load_manifest(&manifest)
}

/// Mean hue (degrees, wrapped to (−180, 180]) of tongue-colored pixels
/// inside the quad's bounding box.
pub fn mean_tongue_hue(img: &ImageTensor, quad: &BoundingQuad) -> Option<f64> {
    let (x0, y0, x1, y1) = quad.bounds();
    let rows = (y0.max(0.0).ceil() as usize)..=(y1.min(img.height() as f64 - 1.0).floor() as usize);
    let cols = (x0.max(0.0).ceil() as usize)..=(x1.min(img.width() as f64 - 1.0).floor() as usize);
    let (mut sum, mut n) = (0.0, 0usize);
    for r in rows {
        for c in cols.clone() {
            if is_tongue_pixel(img, r, c) {
                sum += hsv(img.get(r, c, 0), img.get(r, c, 1), img.get(r, c, 2)).0;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}
