//! Four-corner affine registration onto the reference frame.
//!
//! The fitted transform maps reference-frame points to moving-image points,
//! `y_moving ≈ T · [y_ref; 1]`, and minimizes the summed squared corner
//! error. Zeroing the six partial derivatives gives two decoupled 3×3 normal
//! systems (one for `t11,t12,t13`, one for `t21,t22,t23`) that share the Gram
//! matrix of the homogeneous reference corners.

use serde::{Deserialize, Serialize};

use crate::dataset::{BoundingQuad, Point, ReferenceModel};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub t11: f64,
    pub t12: f64,
    pub t13: f64,
    pub t21: f64,
    pub t22: f64,
    pub t23: f64,
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        t11: 1.0,
        t12: 0.0,
        t13: 0.0,
        t21: 0.0,
        t22: 1.0,
        t23: 0.0,
    };

    pub fn from_params(p: [f64; 6]) -> Self {
        Self {
            t11: p[0],
            t12: p[1],
            t13: p[2],
            t21: p[3],
            t22: p[4],
            t23: p[5],
        }
    }

    pub fn params(&self) -> [f64; 6] {
        [self.t11, self.t12, self.t13, self.t21, self.t22, self.t23]
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            t13: dx,
            t23: dy,
            ..Self::IDENTITY
        }
    }

    pub fn det(&self) -> f64 {
        self.t11 * self.t22 - self.t12 * self.t21
    }

    pub fn apply(&self, p: Point) -> Point {
        apply_point(self, p)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        AffineTransform {
            t11: self.t11 * other.t11 + self.t12 * other.t21,
            t12: self.t11 * other.t12 + self.t12 * other.t22,
            t13: self.t11 * other.t13 + self.t12 * other.t23 + self.t13,
            t21: self.t21 * other.t11 + self.t22 * other.t21,
            t22: self.t21 * other.t12 + self.t22 * other.t22,
            t23: self.t21 * other.t13 + self.t22 * other.t23 + self.t23,
        }
    }
}

pub fn apply_point(t: &AffineTransform, p: Point) -> Point {
    Point::new(
        t.t11 * p.x + t.t12 * p.y + t.t13,
        t.t21 * p.x + t.t22 * p.y + t.t23,
    )
}

/// One 3×3 block of the least-squares normal equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalSystem {
    pub a: [[f64; 3]; 3],
    pub b: [f64; 3],
}

impl NormalSystem {
    /// Solves `a · t = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self) -> Result<[f64; 3]> {
        let mut m = [[0.0; 4]; 3];
        for (row, (a_row, b)) in m.iter_mut().zip(self.a.iter().zip(self.b)) {
            row[..3].copy_from_slice(a_row);
            row[3] = b;
        }
        let scale = self
            .a
            .iter()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        if scale == 0.0 {
            return Err(Error::Degenerate("zero normal matrix".into()));
        }
        for col in 0..3 {
            let pivot = (col..3)
                .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
                .unwrap_or(col);
            if m[pivot][col].abs() <= 1e-10 * scale {
                return Err(Error::Degenerate(
                    "singular normal matrix (collinear reference corners)".into(),
                ));
            }
            m.swap(col, pivot);
            for r in col + 1..3 {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
        let mut x = [0.0; 3];
        for r in (0..3).rev() {
            let tail: f64 = (r + 1..3).map(|c| m[r][c] * x[c]).sum();
            x[r] = (m[r][3] - tail) / m[r][r];
        }
        Ok(x)
    }
}

/// Builds the x-row and y-row normal systems for the four correspondences.
pub fn normal_systems(moving: &BoundingQuad, reference: &BoundingQuad) -> (NormalSystem, NormalSystem) {
    let mut a = [[0.0; 3]; 3];
    let mut bx = [0.0; 3];
    let mut by = [0.0; 3];
    for (m, r) in moving.corners.iter().zip(&reference.corners) {
        let h = [r.x, r.y, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += h[i] * h[j];
            }
            bx[i] += m.x * h[i];
            by[i] += m.y * h[i];
        }
    }
    (NormalSystem { a, b: bx }, NormalSystem { a, b: by })
}

/// Least-squares affine map taking `reference` corners onto `moving` corners.
pub fn fit_affine(moving: &BoundingQuad, reference: &BoundingQuad) -> Result<AffineTransform> {
    let (sx, sy) = normal_systems(moving, reference);
    let [t11, t12, t13] = sx.solve()?;
    let [t21, t22, t23] = sy.solve()?;
    Ok(AffineTransform {
        t11,
        t12,
        t13,
        t21,
        t22,
        t23,
    })
}

/// Summed squared corner error `Σ ‖moving_j − T·reference_j‖²`.
pub fn residual(t: &AffineTransform, moving: &BoundingQuad, reference: &BoundingQuad) -> f64 {
    moving
        .corners
        .iter()
        .zip(&reference.corners)
        .map(|(m, r)| {
            let p = t.apply(*r);
            (m.x - p.x).powi(2) + (m.y - p.y).powi(2)
        })
        .sum()
}

pub fn invert(t: &AffineTransform) -> Result<AffineTransform> {
    let det = t.det();
    if !det.is_finite() || det.abs() <= 1e-12 {
        return Err(Error::Degenerate(format!("affine transform not invertible (det = {det:e})")));
    }
    let (a, b, c, d) = (t.t22 / det, -t.t12 / det, -t.t21 / det, t.t11 / det);
    Ok(AffineTransform {
        t11: a,
        t12: b,
        t13: -(a * t.t13 + b * t.t23),
        t21: c,
        t22: d,
        t23: -(c * t.t13 + d * t.t23),
    })
}

const EDGE_EPS: f64 = 1e-9;

/// Bilinear sample at `(x, y)`; `None` when the point falls outside the
/// pixel-center hull of the image.
#[inline]
pub fn sample_bilinear(img: &ImageTensor, x: f64, y: f64, channel: usize) -> Option<f64> {
    let (h, w) = img.dims();
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    if !(x >= -EDGE_EPS && x <= xmax + EDGE_EPS && y >= -EDGE_EPS && y <= ymax + EDGE_EPS) {
        return None;
    }
    let x = x.clamp(0.0, xmax);
    let y = y.clamp(0.0, ymax);
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = lerp(img.get(y0, x0, channel), img.get(y0, x1, channel), fx);
    let bottom = lerp(img.get(y1, x0, channel), img.get(y1, x1, channel), fx);
    Some(lerp(top, bottom, fy))
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Output pixel `(row v, col u)` takes the source value at `t(u, v)`;
/// samples outside the source are black.
pub fn warp_to_reference(
    img: &ImageTensor,
    t: &AffineTransform,
    out_dims: (usize, usize),
) -> Result<ImageTensor> {
    invert(t)?;
    let (oh, ow) = out_dims;
    let ch = img.channels();
    let mut data = Vec::with_capacity(oh * ow * ch);
    for v in 0..oh {
        for u in 0..ow {
            let p = t.apply(Point::new(u as f64, v as f64));
            for c in 0..ch {
                data.push(sample_bilinear(img, p.x, p.y, c).unwrap_or(0.0).clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(oh, ow, ch, data)
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub image: ImageTensor,
    pub transform: AffineTransform,
    pub residual: f64,
    /// Largest distance between a moving corner mapped into the reference
    /// frame and its reference corner.
    pub corner_error: f64,
}

/// Fits the corner transform and resamples `img` into the reference frame.
pub fn register_sample(
    img: &ImageTensor,
    quad: &BoundingQuad,
    reference: &ReferenceModel,
) -> Result<Registration> {
    if quad.is_degenerate() {
        return Err(Error::Degenerate(format!(
            "tongue quad has area {:e}",
            quad.area()
        )));
    }
    quad.check_within(img.height(), img.width())?;
    let ref_quad = &reference.reference_quad;
    let transform = fit_affine(quad, ref_quad)?;
    let back = invert(&transform)?;
    let corner_error = quad
        .corners
        .iter()
        .zip(&ref_quad.corners)
        .map(|(m, r)| back.apply(*m).dist(*r))
        .fold(0.0, f64::max);
    let [h, w] = reference.reference_dims;
    let image = warp_to_reference(img, &transform, (h, w))?;
    Ok(Registration {
        image,
        residual: residual(&transform, quad, ref_quad),
        transform,
        corner_error,
    })
}
