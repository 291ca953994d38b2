//! Hue/saturation tongue detector for synthetic images.
//!
//! Pixels with a red-to-orange hue, enough saturation and brightness form a
//! mask; the axis-aligned bounding box of its largest 4-connected component
//! is returned as the tongue quad. Only contracted for generated data.

use std::collections::VecDeque;

use crate::dataset::BoundingQuad;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const HUE_RANGE_DEG: (f64, f64) = (-30.0, 50.0);
pub const MIN_SATURATION: f64 = 0.38;
pub const MIN_VALUE: f64 = 0.3;
pub const MIN_COMPONENT_AREA: usize = 500;

/// `(hue in degrees wrapped to (−180, 180], saturation, value)`.
pub fn hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = if h > 180.0 { h - 360.0 } else { h };
    (h, s, max)
}

pub fn is_tongue_pixel(img: &ImageTensor, row: usize, col: usize) -> bool {
    if img.channels() != 3 {
        return false;
    }
    let (h, s, v) = hsv(img.get(row, col, 0), img.get(row, col, 1), img.get(row, col, 2));
    (HUE_RANGE_DEG.0..=HUE_RANGE_DEG.1).contains(&h) && s >= MIN_SATURATION && v >= MIN_VALUE
}

pub fn detect_quad_heuristic(img: &ImageTensor) -> Result<BoundingQuad> {
    let (height, width) = img.dims();
    let mask: Vec<bool> = (0..height * width)
        .map(|i| is_tongue_pixel(img, i / width, i % width))
        .collect();
    let mut seen = vec![false; mask.len()];
    let mut best: Option<(usize, (usize, usize, usize, usize))> = None;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut area = 0;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(p) = queue.pop_front() {
            area += 1;
            let (y, x) = (p / width, p % width);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
            let mut visit = |q: usize| {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
        if best.is_none_or(|(a, _)| area > a) {
            best = Some((area, (x0, y0, x1, y1)));
        }
    }
    match best {
        Some((area, (x0, y0, x1, y1))) if area >= MIN_COMPONENT_AREA && x1 > x0 && y1 > y0 => Ok(
            BoundingQuad::axis_aligned(x0 as f64, y0 as f64, x1 as f64, y1 as f64),
        ),
        Some((area, _)) => Err(Error::DetectionFailed(format!(
            "largest tongue-colored component has {area} pixels (< {MIN_COMPONENT_AREA})"
        ))),
        None => Err(Error::DetectionFailed("no tongue-colored pixels".into())),
    }
}

/// Intersection-over-union of the axis-aligned bounds of two quads.
pub fn bbox_iou(a: &BoundingQuad, b: &BoundingQuad) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.bounds();
    let (bx0, by0, bx1, by1) = b.bounds();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_reference_colors() {
        let (h, s, v) = hsv(1.0, 0.0, 0.0);
        assert_eq!((h, s, v), (0.0, 1.0, 1.0));
        assert!((hsv(0.0, 1.0, 0.0).0 - 120.0).abs() < 1e-12);
        assert!((hsv(1.0, 0.0, 0.5).0 + 30.0).abs() < 1e-12);
        assert_eq!(hsv(0.4, 0.4, 0.4).1, 0.0);
    }

    #[test]
    fn black_image_fails() {
        let img = ImageTensor::filled(64, 64, 3, 0.0).unwrap();
        assert!(matches!(detect_quad_heuristic(&img), Err(Error::DetectionFailed(_))));
    }

    #[test]
    fn finds_largest_red_block() {
        let img = ImageTensor::from_fn(100, 120, 3, |r, c, k| {
            let big = (20..=70).contains(&r) && (30..=100).contains(&c);
            let small = (2..=8).contains(&r) && (2..=8).contains(&c);
            if big || small {
                [0.8, 0.3, 0.35][k]
            } else {
                [0.8, 0.7, 0.62][k]
            }
        })
        .unwrap();
        let q = detect_quad_heuristic(&img).unwrap();
        assert_eq!(q, BoundingQuad::axis_aligned(30.0, 20.0, 100.0, 70.0));
        assert_eq!(detect_quad_heuristic(&img).unwrap(), q);
    }

    #[test]
    fn iou_basics() {
        let a = BoundingQuad::axis_aligned(0.0, 0.0, 10.0, 10.0);
        assert_eq!(bbox_iou(&a, &a), 1.0);
        let b = BoundingQuad::axis_aligned(5.0, 0.0, 15.0, 10.0);
        assert!((bbox_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }
}
