//! Margin crop, five-window region split, resizing and channel vectorization.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::registration::lerp;

pub const REGISTERED_SIDE: usize = 512;
pub const MARGIN: usize = 56;
pub const CROP_SIDE: usize = REGISTERED_SIDE - 2 * MARGIN;
pub const REGION_SIDE: usize = 200;
/// Top-left offsets (row, col) of regions 1..5 inside the crop.
pub const REGION_OFFSETS: [(usize, usize); 5] = [(0, 0), (0, 200), (200, 0), (200, 200), (100, 100)];

/// Side of the network input for regions 1–4.
pub const EXTRACTOR_SIDE: usize = 32;
/// Side region 5 is resized to before fusion.
pub const FUSION_SIDE: usize = 30;

/// The five fixed windows of a cropped image: four quadrants and the
/// overlapping center window (index 4).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub regions: [ImageTensor; 5],
}

impl RegionSet {
    pub fn region(&self, k: usize) -> &ImageTensor {
        &self.regions[k]
    }

    /// Assembles a set from loaded parts, naming `sample` if any is missing.
    pub fn from_parts(sample: &str, parts: Vec<Option<ImageTensor>>) -> Result<Self> {
        if parts.len() != 5 {
            return Err(Error::validation(format!(
                "sample `{sample}`: expected 5 regions, got {}",
                parts.len()
            )));
        }
        let mut out = Vec::with_capacity(5);
        for (k, p) in parts.into_iter().enumerate() {
            out.push(p.ok_or_else(|| {
                Error::validation(format!("sample `{sample}`: region {} missing", k + 1))
            })?);
        }
        let regions: [ImageTensor; 5] = out.try_into().expect("length checked");
        Ok(Self { regions })
    }
}

/// Copies the `h×w` window whose top-left pixel is `(top, left)`.
pub fn window(img: &ImageTensor, top: usize, left: usize, h: usize, w: usize) -> Result<ImageTensor> {
    if top + h > img.height() || left + w > img.width() {
        return Err(Error::shape(format!(
            "window {h}x{w} at ({top},{left}) exceeds {}x{}",
            img.height(),
            img.width()
        )));
    }
    let ch = img.channels();
    let stride = img.width() * ch;
    let mut data = Vec::with_capacity(h * w * ch);
    for r in top..top + h {
        let start = r * stride + left * ch;
        data.extend_from_slice(&img.data()[start..start + w * ch]);
    }
    ImageTensor::new(h, w, ch, data)
}

pub fn crop_margins(img: &ImageTensor) -> Result<ImageTensor> {
    if img.dims() != (REGISTERED_SIDE, REGISTERED_SIDE) {
        return Err(Error::shape(format!(
            "margin crop expects {REGISTERED_SIDE}x{REGISTERED_SIDE}, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    window(img, MARGIN, MARGIN, CROP_SIDE, CROP_SIDE)
}

pub fn split_regions(img: &ImageTensor) -> Result<RegionSet> {
    if img.dims() != (CROP_SIDE, CROP_SIDE) {
        return Err(Error::shape(format!(
            "region split expects {CROP_SIDE}x{CROP_SIDE}, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let mut regions = Vec::with_capacity(5);
    for (top, left) in REGION_OFFSETS {
        regions.push(window(img, top, left, REGION_SIDE, REGION_SIDE)?);
    }
    Ok(RegionSet {
        regions: regions.try_into().expect("five offsets"),
    })
}

/// Bilinear resize with pixel-center alignment: output pixel `i` samples
/// source coordinate `(i + 0.5)·in/out − 0.5`, clamped to the image.
pub fn resize(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize to an empty image"));
    }
    let (h, w) = img.dims();
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let ch = img.channels();
    ImageTensor::from_fn(out_h, out_w, ch, |r, c, k| {
        let (r0, r1, fy) = rows[r];
        let (c0, c1, fx) = cols[c];
        let top = lerp(img.get(r0, c0, k), img.get(r0, c1, k), fx);
        let bottom = lerp(img.get(r1, c0, k), img.get(r1, c1, k), fx);
        lerp(top, bottom, fy)
    })
}

/// Row-major flattening of one channel.
pub fn vectorize_channel(img: &ImageTensor, channel: usize) -> Result<Vec<f64>> {
    if channel >= img.channels() {
        return Err(Error::Index(format!(
            "channel {channel} out of range for {}-channel image",
            img.channels()
        )));
    }
    Ok(img
        .data()
        .iter()
        .skip(channel)
        .step_by(img.channels())
        .copied()
        .collect())
}

/// Network input for a corner region: resize to 32×32 and vectorize `channel`.
pub fn extractor_input(region: &ImageTensor, channel: usize) -> Result<Vec<f64>> {
    vectorize_channel(&resize(region, EXTRACTOR_SIDE, EXTRACTOR_SIDE)?, channel)
}
