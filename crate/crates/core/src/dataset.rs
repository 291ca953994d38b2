//! Samples, labels, tongue quads and the JSON-lines manifest.
//!
//! Coordinates are in pixels with the origin at the center of the top-left
//! pixel; `x` grows along columns and `y` along rows.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Four tongue corners in top-left, top-right, bottom-right, bottom-left order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoundingQuad {
    pub corners: [Point; 4],
}

impl BoundingQuad {
    pub fn new(corners: [Point; 4]) -> Self {
        Self { corners }
    }

    pub fn from_pairs(pairs: [[f64; 2]; 4]) -> Self {
        Self::new(pairs.map(Point::from))
    }

    pub fn axis_aligned(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::from_pairs([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    /// Unsigned shoelace area.
    pub fn area(&self) -> f64 {
        let c = &self.corners;
        let twice: f64 = (0..4)
            .map(|i| {
                let (a, b) = (c[i], c[(i + 1) % 4]);
                a.x * b.y - b.x * a.y
            })
            .sum();
        twice.abs() / 2.0
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() <= 1e-9
    }

    pub fn check_within(&self, height: usize, width: usize) -> Result<()> {
        let (w, h) = (width as f64 - 1.0, height as f64 - 1.0);
        for p in &self.corners {
            if !(0.0..=w).contains(&p.x) || !(0.0..=h).contains(&p.y) {
                return Err(Error::validation(format!(
                    "quad corner ({}, {}) outside {height}x{width} image",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }

    /// `(min_x, min_y, max_x, max_y)` of the corners.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.corners.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Patient,
}

impl Label {
    /// 0 for healthy, 1 for patient.
    pub fn index(self) -> usize {
        match self {
            Label::Healthy => 0,
            Label::Patient => 1,
        }
    }

    /// -1 for healthy, +1 for patient (patient is the positive class).
    pub fn sign(self) -> f64 {
        match self {
            Label::Healthy => -1.0,
            Label::Patient => 1.0,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::Healthy
        } else {
            Label::Patient
        }
    }

    pub fn from_sign(s: f64) -> Self {
        if s >= 0.0 {
            Label::Patient
        } else {
            Label::Healthy
        }
    }

    pub const ALL: [Label; 2] = [Label::Healthy, Label::Patient];
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Healthy => "healthy",
            Label::Patient => "patient",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image_id: String,
    pub path: PathBuf,
    pub label: Label,
    pub quad: Option<BoundingQuad>,
    pub split: Split,
}

/// Canonical frame every sample is registered onto.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub reference_dims: [usize; 2],
    pub reference_quad: BoundingQuad,
}

impl Default for ReferenceModel {
    fn default() -> Self {
        Self {
            reference_dims: [512, 512],
            reference_quad: BoundingQuad::axis_aligned(96.0, 96.0, 415.0, 415.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub reference: ReferenceModel,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, reference: ReferenceModel) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("no samples"));
        }
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.image_id.as_str()) {
                return Err(Error::validation(format!("duplicate image_id `{}`", s.image_id)));
            }
        }
        Ok(Self { samples, reference })
    }

    pub fn with_reference(mut self, reference: ReferenceModel) -> Self {
        self.reference = reference;
        self
    }

    pub fn reference_quad(&self) -> &BoundingQuad {
        &self.reference.reference_quad
    }

    pub fn reference_dims(&self) -> (usize, usize) {
        (self.reference.reference_dims[0], self.reference.reference_dims[1])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split, label: Label) -> usize {
        self.split(split).filter(|s| s.label == label).count()
    }

    /// Fails unless every class is present in `split`.
    pub fn require_both_classes(&self, split: Split) -> Result<()> {
        for label in Label::ALL {
            if self.count(split, label) == 0 {
                return Err(Error::validation(format!(
                    "no {label} samples in the {split:?} split"
                )));
            }
        }
        Ok(())
    }
}

/// One manifest line as it appears on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub path: String,
    pub label: Label,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad: Option<BoundingQuad>,
}

pub fn image_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Parses a manifest: one JSON object per line, blank lines ignored.
/// Relative image paths resolve against the manifest's directory.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<LabeledSample>> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let rel = PathBuf::from(&rec.path);
        let image_id = image_id_of(&rel);
        if image_id.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("path `{}` has no file name", rec.path),
            });
        }
        let path = if rel.is_absolute() { rel } else { base_dir.join(rel) };
        samples.push(LabeledSample {
            image_id,
            path,
            label: rec.label,
            quad: rec.quad,
            split: rec.split,
        });
    }
    Ok(samples)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Dataset::new(parse_manifest(&text, base)?, ReferenceModel::default())
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}
