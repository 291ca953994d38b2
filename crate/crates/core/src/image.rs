//! Real-valued image tensors and PNG I/O.
//!
//! Pixels are stored row-major, channel-interleaved (`H×W×C`), with every
//! value in `[0, 1]`. Loading divides 8-bit samples by 255; saving rounds to
//! the nearest 8-bit level. No gamma handling is applied in either direction.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from a per-sample function `f(row, col, channel)`.
    /// Results are clamped into `[0, 1]`, which only absorbs rounding noise
    /// from interpolation arithmetic.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Multiplies every value by `a`, which must lie in `[0, 1]`.
    pub fn scaled(&self, a: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Domain(format!("scale {a} outside [0,1]")));
        }
        Self::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|v| v * a).collect(),
        )
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let color = if self.channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        image::save_buffer(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
        )
        .map_err(|e| image_err(path, e))
    }
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Reads an 8-bit RGB or grayscale PNG into `[0, 1]` reals.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = match img.color() {
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16 => {
            (1, img.into_luma8().into_raw())
        }
        _ => (3, img.into_rgb8().into_raw()),
    };
    ImageTensor::new(
        h,
        w,
        channels,
        bytes.into_iter().map(|b| f64::from(b) / 255.0).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(matches!(ImageTensor::new(2, 2, 3, vec![0.0; 11]), Err(Error::Shape(_))));
        assert!(matches!(ImageTensor::new(1, 1, 2, vec![0.0; 2]), Err(Error::Shape(_))));
        assert!(matches!(ImageTensor::new(1, 1, 1, vec![1.5]), Err(Error::Validation(_))));
        assert!(matches!(ImageTensor::new(1, 1, 1, vec![f64::NAN]), Err(Error::Validation(_))));
    }

    #[test]
    fn black_png_loads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("black.png");
        image::save_buffer(&p, &[0u8; 12], 2, 2, image::ExtendedColorType::Rgb8).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn white_pixel_and_grayscale_channel_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.png");
        image::save_buffer(&p, &[255u8; 3], 1, 1, image::ExtendedColorType::Rgb8).unwrap();
        assert_eq!(load_image(&p).unwrap().data(), &[1.0, 1.0, 1.0]);

        let g = dir.path().join("gray.png");
        image::save_buffer(&g, &[51u8, 204], 2, 1, image::ExtendedColorType::L8).unwrap();
        let img = load_image(&g).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data(), &[0.2, 0.8]);
    }

    #[test]
    fn corrupt_file_is_io_class() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not a png").unwrap();
        let err = load_image(&p).unwrap_err();
        assert_eq!(err.exit_class(), crate::ExitClass::Io);
        let missing = load_image(dir.path().join("nope.png")).unwrap_err();
        assert!(matches!(missing, Error::Io { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn png_round_trip_within_quantization(vals in proptest::collection::vec(0.0f64..=1.0, 3 * 4 * 5)) {
            let img = ImageTensor::new(4, 5, 3, vals).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rt.png");
            img.save_png(&p).unwrap();
            let back = load_image(&p).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
            }
        }
    }
}
