//! Composite 32×32×3 images built from region-5 pixels and the four
//! corner-region feature vectors.
//!
//! Per channel, the 1024 row-major slots hold the 900 region-5 pixels of that
//! channel followed by `f1 ‖ f2 ‖ f3 ‖ f4` (31 entries each). The feature
//! block is identical in all three channels.

use rayon::prelude::*;

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nnet::{FeatureVector, MlpModel};
use crate::regionizer::{extractor_input, resize, RegionSet, FUSION_SIDE};

pub const COMPOSITE_SIDE: usize = 32;
pub const PIXEL_SLOTS: usize = FUSION_SIDE * FUSION_SIDE;
pub const FEATURE_LEN: usize = 31;
pub const FEATURE_SLOTS: usize = 4 * FEATURE_LEN;

const _: () = assert!(PIXEL_SLOTS + FEATURE_SLOTS == COMPOSITE_SIDE * COMPOSITE_SIDE);

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeImage {
    pub image: ImageTensor,
    /// Sample the region-5 pixels (and feature vectors) came from.
    pub source_id: String,
}

pub fn build_composite(r5: &ImageTensor, features: [&FeatureVector; 4]) -> Result<ImageTensor> {
    if (r5.height(), r5.width(), r5.channels()) != (FUSION_SIDE, FUSION_SIDE, 3) {
        return Err(Error::shape(format!(
            "region 5 must be {FUSION_SIDE}x{FUSION_SIDE}x3, got {}x{}x{}",
            r5.height(),
            r5.width(),
            r5.channels()
        )));
    }
    for (k, f) in features.iter().enumerate() {
        if f.len() != FEATURE_LEN {
            return Err(Error::shape(format!(
                "feature vector {} has {} entries, expected {FEATURE_LEN}",
                k + 1,
                f.len()
            )));
        }
    }
    let tail: Vec<f64> = features.iter().flat_map(|f| f.values().iter().copied()).collect();
    let n = COMPOSITE_SIDE * COMPOSITE_SIDE;
    let mut data = vec![0.0; n * 3];
    for pos in 0..n {
        for c in 0..3 {
            data[pos * 3 + c] = if pos < PIXEL_SLOTS {
                r5.data()[pos * 3 + c]
            } else {
                tail[pos - PIXEL_SLOTS]
            };
        }
    }
    ImageTensor::new(COMPOSITE_SIDE, COMPOSITE_SIDE, 3, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionedSample {
    pub image_id: String,
    pub label: Label,
    pub regions: RegionSet,
}

/// Extractor inputs and the resized region 5 for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub image_id: String,
    pub label: Label,
    /// 1024-entry vectors for regions 1..4
    pub vectors: [Vec<f64>; 4],
    /// Region 5 at 30×30×3
    pub center: ImageTensor,
}

pub fn prepare_sample(s: &RegionedSample, channel: usize) -> Result<PreparedSample> {
    let mut vectors = Vec::with_capacity(4);
    for k in 0..4 {
        vectors.push(extractor_input(s.regions.region(k), channel)?);
    }
    Ok(PreparedSample {
        image_id: s.image_id.clone(),
        label: s.label,
        vectors: vectors.try_into().expect("four corner regions"),
        center: resize(s.regions.region(4), FUSION_SIDE, FUSION_SIDE)?,
    })
}

pub fn fuse_prepared(s: &PreparedSample, extractors: &[MlpModel; 4]) -> Result<CompositeImage> {
    let f: Vec<FeatureVector> = extractors
        .iter()
        .zip(&s.vectors)
        .map(|(m, v)| m.extract(v))
        .collect::<Result<_>>()?;
    Ok(CompositeImage {
        image: build_composite(&s.center, [&f[0], &f[1], &f[2], &f[3]])?,
        source_id: s.image_id.clone(),
    })
}

/// Order-preserving composite construction for a set of region samples.
pub fn fuse_dataset(
    samples: &[RegionedSample],
    extractors: &[MlpModel; 4],
    channel: usize,
) -> Result<Vec<(CompositeImage, Label)>> {
    samples
        .par_iter()
        .map(|s| {
            let prepared = prepare_sample(s, channel)
                .map_err(|e| e.in_stage("fuse", Some(&s.image_id)))?;
            let composite = fuse_prepared(&prepared, extractors)
                .map_err(|e| e.in_stage("fuse", Some(&s.image_id)))?;
            Ok((composite, s.label))
        })
        .collect()
}
