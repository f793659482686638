//! Grayscale rasters, file I/O and the two intensity domains used by the
//! pipeline.
//!
//! Every image inside the library is a [`GrayImage`] holding `f32` values in
//! `[0, 1]`, row-major. Eight-bit quantisation only happens at file
//! boundaries. The translation network works on [`ModelImage`] values in
//! `[-1, 1]` obtained with mean 0.5 and standard deviation 0.5.

use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};

/// Single-channel raster with intensities in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    /// All-zero image.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be positive");
        Self { width, height, data: vec![0.0; width * height] }
    }

    /// Wraps row-major data, clamping every value into `[0, 1]`.
    pub fn from_vec(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut img = Self::new(width, height);
        for r in 0..height {
            for c in 0..width {
                img.data[r * width + c] = f(r, c).clamp(0.0, 1.0);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Value at signed coordinates; anything outside the raster reads as 0.
    #[inline]
    pub fn get_or_zero(&self, row: isize, col: isize) -> f32 {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            0.0
        } else {
            self.data[row as usize * self.width + col as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value.clamp(0.0, 1.0);
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn same_size(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn inverted(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    /// Sum of all intensities.
    pub fn mass(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn count_above(&self, threshold: f32) -> usize {
        self.data.iter().filter(|&&v| v > threshold).count()
    }

    /// Places the image on an all-zero `canvas`x`canvas` background with
    /// offsets `floor((canvas - dim) / 2)`.
    pub fn centered_on(&self, canvas: usize) -> Result<GrayImage> {
        if self.width > canvas || self.height > canvas {
            return Err(Error::ExceedsCanvas { width: self.width, height: self.height, canvas });
        }
        let top = (canvas - self.height) / 2;
        let left = (canvas - self.width) / 2;
        let mut out = GrayImage::new(canvas, canvas);
        for r in 0..self.height {
            let dst = (top + r) * canvas + left;
            out.data[dst..dst + self.width].copy_from_slice(self.row(r));
        }
        Ok(out)
    }

    /// Integer translation; pixels shifted in from outside are 0.
    pub fn translated(&self, dy: isize, dx: isize) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |r, c| {
            self.get_or_zero(r as isize - dy, c as isize - dx)
        })
    }

    /// Inclusive bounding box `(top, bottom, left, right)` of pixels above
    /// `threshold`, or `None` when nothing qualifies.
    pub fn bounding_box(&self, threshold: f32) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) > threshold {
                    bbox = Some(match bbox {
                        None => (r, r, c, c),
                        Some((t, b, l, rt)) => (t.min(r), b.max(r), l.min(c), rt.max(c)),
                    });
                }
            }
        }
        bbox
    }

    /// Bilinear sample at fractional `(y, x)`; neighbours outside the raster
    /// read as 0.
    pub fn sample_bilinear(&self, y: f64, x: f64) -> f32 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let (r, c) = (y0 as isize, x0 as isize);
        let v00 = self.get_or_zero(r, c) as f64;
        let v01 = self.get_or_zero(r, c + 1) as f64;
        let v10 = self.get_or_zero(r + 1, c) as f64;
        let v11 = self.get_or_zero(r + 1, c + 1) as f64;
        let top = v00 + fx * (v01 - v00);
        let bottom = v10 + fx * (v11 - v10);
        (top + fy * (bottom - top)) as f32
    }

    /// Nearest-neighbour sample; outside reads as 0.
    pub fn sample_nearest(&self, y: f64, x: f64) -> f32 {
        if !(y.is_finite() && x.is_finite()) {
            return 0.0;
        }
        self.get_or_zero(y.round() as isize, x.round() as isize)
    }

    /// Nearest 8-bit code for every pixel.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_vec(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }
}

#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Image in the network's normalised range `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ModelImage {
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data: data.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect() })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

pub const NORM_MEAN: f32 = 0.5;
pub const NORM_STD: f32 = 0.5;

pub fn to_model_range(img: &GrayImage) -> ModelImage {
    ModelImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| ((v - NORM_MEAN) / NORM_STD).clamp(-1.0, 1.0)).collect(),
    }
}

pub fn from_model_range(m: &ModelImage) -> GrayImage {
    GrayImage {
        width: m.width,
        height: m.height,
        data: m.data.iter().map(|&v| (NORM_STD * v + NORM_MEAN).clamp(0.0, 1.0)).collect(),
    }
}

/// Reads an 8-bit raster. Multi-channel files are collapsed by averaging the
/// colour channels (alpha is ignored).
pub fn load_image(path: impl AsRef<Path>, invert: bool, canvas: Option<usize>) -> Result<GrayImage> {
    let path = path.as_ref();
    let dynamic = image::open(path)
        .map_err(|source| Error::ImageRead { path: path.to_path_buf(), source })?;
    let mut img = collapse_channels(&dynamic);
    if invert {
        img = img.inverted();
    }
    match canvas {
        Some(size) => img.centered_on(size),
        None => Ok(img),
    }
}

fn collapse_channels(dynamic: &DynamicImage) -> GrayImage {
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let data = if dynamic.color().has_color() {
        dynamic
            .to_rgb8()
            .pixels()
            .map(|p| (p.0[0] as f32 + p.0[1] as f32 + p.0[2] as f32) / (3.0 * 255.0))
            .collect()
    } else {
        dynamic.to_luma8().into_raw().into_iter().map(|b| b as f32 / 255.0).collect()
    };
    GrayImage { width, height, data }
}

/// Writes a lossless 8-bit single-channel file. The format follows the
/// extension: `.pgm` gives binary P5 with maxval 255, anything else PNG.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
        bytes.extend(img.to_u8());
        return std::fs::write(path, bytes).map_err(|e| Error::io(path, e));
    }
    let buffer = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.to_u8())
        .expect("buffer length matches dimensions");
    buffer
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::ImageWrite { path: path.to_path_buf(), source })
}
