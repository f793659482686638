//! Single-image training set construction.
//!
//! Each augmented item applies one random rotation followed by one random
//! elastic deformation to the (chromosome, curved backbone) pair. Both images
//! always go through the identical geometric transform: the chromosome is
//! resampled bilinearly and the backbone with nearest-neighbour lookups so
//! that its stick labels stay exact.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imgcore::{load_image, save_image, GrayImage};
use crate::seed;

pub const DEFAULT_PAIRS: usize = 1000;
pub const DEFAULT_GRID_POINTS: usize = 3;
pub const DEFAULT_SIGMA: f64 = 18.0;
pub const DEFAULT_MAX_ANGLE: f64 = 45.0;
/// Validation share of the 9:1 split.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Tap indices (clamped to the grid) and weights for a fractional grid position.
fn cubic_taps(u: f64, n: usize) -> [(usize, f64); 4] {
    let base = u.floor();
    let t = u - base;
    let base = base as isize;
    let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
    [
        (clamp(base - 1), cubic_weight(t + 1.0)),
        (clamp(base), cubic_weight(t)),
        (clamp(base + 1), cubic_weight(1.0 - t)),
        (clamp(base + 2), cubic_weight(2.0 - t)),
    ]
}

/// Grid coordinate of a pixel: control nodes sit at equally spaced positions
/// covering the image, the first on pixel 0 and the last on pixel `len - 1`.
fn grid_coordinate(pixel: usize, len: usize, points: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        pixel as f64 * (points - 1) as f64 / (len - 1) as f64
    }
}

/// Coarse displacement grid and its dense interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformField {
    points: usize,
    sigma: f64,
    control_dy: Vec<f64>,
    control_dx: Vec<f64>,
    width: usize,
    height: usize,
    dense_dy: Vec<f64>,
    dense_dx: Vec<f64>,
}

impl DeformField {
    /// Draws `points`x`points` displacement pairs i.i.d. from `Normal(0, sigma^2)`:
    /// all row displacements first (row-major), then all column displacements.
    pub fn random(points: usize, sigma: f64, seed: u64, width: usize, height: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidParameter(format!("deformation grid needs >= 2 points, got {points}")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        let normal = Normal::new(0.0, sigma).expect("validated sigma");
        let mut rng = seed::rng(seed);
        let n = points * points;
        let control_dy: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let control_dx: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let mut field = Self::from_control_grid(points, control_dy, control_dx, width, height)?;
        field.sigma = sigma;
        Ok(field)
    }

    /// Field from explicit control displacements (row-major, `points^2` each).
    pub fn from_control_grid(
        points: usize,
        control_dy: Vec<f64>,
        control_dx: Vec<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if points < 2 || control_dy.len() != points * points || control_dx.len() != points * points {
            return Err(Error::InvalidParameter("control grid must be points x points with points >= 2".into()));
        }
        let dense_dy = interpolate_grid(&control_dy, points, width, height);
        let dense_dx = interpolate_grid(&control_dx, points, width, height);
        Ok(Self { points, sigma: f64::NAN, control_dy, control_dx, width, height, dense_dy, dense_dx })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn control_dy(&self) -> &[f64] {
        &self.control_dy
    }

    pub fn control_dx(&self) -> &[f64] {
        &self.control_dx
    }

    /// Dense displacement `(dy, dx)` at a pixel.
    pub fn at(&self, row: usize, col: usize) -> (f64, f64) {
        let i = row * self.width + col;
        (self.dense_dy[i], self.dense_dx[i])
    }

    /// Backward warp: output pixel `p` samples the input at `p + field(p)`.
    pub fn warp(&self, img: &GrayImage, mode: Sampling) -> Result<GrayImage> {
        if img.width() != self.width || img.height() != self.height {
            return Err(Error::DimensionMismatch("deformation field and image differ in size".into()));
        }
        Ok(GrayImage::from_fn(self.width, self.height, |r, c| {
            let (dy, dx) = self.at(r, c);
            mode.sample(img, r as f64 + dy, c as f64 + dx)
        }))
    }
}

/// Separable bicubic upsampling of a control grid to `height`x`width`.
fn interpolate_grid(grid: &[f64], points: usize, width: usize, height: usize) -> Vec<f64> {
    // along columns first, one intermediate row per grid row
    let mut along_x = vec![0.0; points * width];
    for gi in 0..points {
        for c in 0..width {
            let taps = cubic_taps(grid_coordinate(c, width, points), points);
            along_x[gi * width + c] = taps.iter().map(|&(j, w)| w * grid[gi * points + j]).sum();
        }
    }
    let mut dense = vec![0.0; width * height];
    for r in 0..height {
        let taps = cubic_taps(grid_coordinate(r, height, points), points);
        for c in 0..width {
            dense[r * width + c] = taps.iter().map(|&(i, w)| w * along_x[i * width + c]).sum();
        }
    }
    dense
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Bilinear,
    Nearest,
}

impl Sampling {
    #[inline]
    fn sample(self, img: &GrayImage, y: f64, x: f64) -> f32 {
        match self {
            Sampling::Bilinear => img.sample_bilinear(y, x),
            Sampling::Nearest => img.sample_nearest(y, x),
        }
    }
}

fn check_pair(y: &GrayImage, x: &GrayImage) -> Result<()> {
    if !y.same_size(x) {
        return Err(Error::DimensionMismatch(format!(
            "chromosome {}x{} vs backbone {}x{}",
            y.width(),
            y.height(),
            x.width(),
            x.height()
        )));
    }
    Ok(())
}

/// Warps chromosome `y` and backbone `x` through one random field.
pub fn elastic_deform_pair(
    y: &GrayImage,
    x: &GrayImage,
    points: usize,
    sigma: f64,
    seed: u64,
) -> Result<(GrayImage, GrayImage)> {
    check_pair(y, x)?;
    let field = DeformField::random(points, sigma, seed, y.width(), y.height())?;
    Ok((field.warp(y, Sampling::Bilinear)?, field.warp(x, Sampling::Nearest)?))
}

/// Rotation of a single image about the canvas centre `((w-1)/2, (h-1)/2)`.
///
/// A positive angle maps `(dy, dx) = (0, 1)` towards `(1, 1)`, i.e. clockwise
/// on screen with rows growing downwards.
pub fn rotate(img: &GrayImage, angle_deg: f64, mode: Sampling) -> GrayImage {
    if angle_deg == 0.0 {
        return img.clone();
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let cx = (img.width() as f64 - 1.0) / 2.0;
    GrayImage::from_fn(img.width(), img.height(), |r, col| {
        let (dy, dx) = (r as f64 - cy, col as f64 - cx);
        let sx = c * dx + s * dy;
        let sy = -s * dx + c * dy;
        mode.sample(img, cy + sy, cx + sx)
    })
}

pub fn rotate_pair(y: &GrayImage, x: &GrayImage, angle_deg: f64) -> Result<(GrayImage, GrayImage)> {
    check_pair(y, x)?;
    if !angle_deg.is_finite() {
        return Err(Error::InvalidParameter(format!("rotation angle {angle_deg}")));
    }
    Ok((rotate(y, angle_deg, Sampling::Bilinear), rotate(x, angle_deg, Sampling::Nearest)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub k: usize,
    pub points: usize,
    pub sigma: f64,
    pub max_angle: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { k: DEFAULT_PAIRS, points: DEFAULT_GRID_POINTS, sigma: DEFAULT_SIGMA, max_angle: DEFAULT_MAX_ANGLE }
    }
}

impl AugmentParams {
    /// Default parameters with sigma scaled from its 256-pixel value.
    pub fn for_canvas(canvas: usize) -> Self {
        Self { sigma: DEFAULT_SIGMA * canvas as f64 / 256.0, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    /// Backbone stick figure (the condition).
    pub x: GrayImage,
    /// Chromosome (the target).
    pub y: GrayImage,
    pub angle: f64,
    pub deform_seed: u64,
}

#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    pub pairs: Vec<TrainingPair>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub seed: u64,
    pub params: AugmentParams,
}

/// One augmented item: the transform is a pure function of `(seed, index)`.
pub fn augment_item(y: &GrayImage, x: &GrayImage, params: &AugmentParams, seed: u64, index: usize) -> Result<TrainingPair> {
    let mut rng = seed::stream_rng(seed, index as u64);
    let angle = if params.max_angle > 0.0 { rng.random_range(-params.max_angle..=params.max_angle) } else { 0.0 };
    let deform_seed = rng.next_u64();
    let (ry, rx) = rotate_pair(y, x, angle)?;
    let (dy, dx) = elastic_deform_pair(&ry, &rx, params.points, params.sigma, deform_seed)?;
    Ok(TrainingPair { x: dx, y: dy, angle, deform_seed })
}

/// Seeded 9:1 split of `0..k`; both lists are returned sorted.
pub fn split_indices(k: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut seed::stream_rng(seed, seed::streams::SPLIT));
    let n_val = ((k as f64) * VALIDATION_FRACTION).round() as usize;
    let mut validation = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    validation.sort_unstable();
    train.sort_unstable();
    (train, validation)
}

pub fn build_augmented_dataset(y: &GrayImage, x: &GrayImage, params: &AugmentParams, seed: u64) -> Result<AugmentedDataset> {
    check_pair(y, x)?;
    if params.k < 10 {
        return Err(Error::InvalidParameter(format!("need at least 10 pairs for a 9:1 split, got {}", params.k)));
    }
    if !(params.max_angle >= 0.0 && params.max_angle <= 180.0) {
        return Err(Error::InvalidParameter(format!("max angle {} outside [0, 180]", params.max_angle)));
    }
    let pairs = (0..params.k)
        .into_par_iter()
        .map(|i| augment_item(y, x, params, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let (train, validation) = split_indices(params.k, seed);
    Ok(AugmentedDataset { pairs, train, validation, seed, params: *params })
}

impl AugmentedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn canvas(&self) -> (usize, usize) {
        let first = &self.pairs[0].x;
        (first.height(), first.width())
    }

    /// SHA-256 over the parameters, split and the 8-bit pixel codes of every
    /// pair, so the hash survives a save/load cycle.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((self.params.k as u64).to_le_bytes());
        h.update((self.params.points as u64).to_le_bytes());
        h.update(self.params.sigma.to_le_bytes());
        h.update(self.params.max_angle.to_le_bytes());
        for idx in self.train.iter().chain(&self.validation) {
            h.update((*idx as u64).to_le_bytes());
        }
        for pair in &self.pairs {
            h.update((pair.x.width() as u64).to_le_bytes());
            h.update((pair.x.height() as u64).to_le_bytes());
            h.update(pair.x.to_u8());
            h.update(pair.y.to_u8());
        }
        h.finalize().iter().fold(String::new(), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
    }

    pub fn manifest(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        let mut m = String::new();
        writeln!(m, "seed={}", self.seed).unwrap();
        writeln!(m, "k={}", self.params.k).unwrap();
        writeln!(m, "points={}", self.params.points).unwrap();
        writeln!(m, "sigma={}", self.params.sigma).unwrap();
        writeln!(m, "max_angle={}", self.params.max_angle).unwrap();
        writeln!(m, "order=rotate_then_deform").unwrap();
        writeln!(m, "train={}", join(&self.train)).unwrap();
        writeln!(m, "validation={}", join(&self.validation)).unwrap();
        for (i, p) in self.pairs.iter().enumerate() {
            writeln!(m, "transform.{i:04}={:.9} {}", p.angle, p.deform_seed).unwrap();
        }
        writeln!(m, "hash={}", self.content_hash()).unwrap();
        m
    }

    /// Writes `pairs/{i:04}_x.png`, `pairs/{i:04}_y.png` and `manifest.txt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let pairs_dir = dir.join("pairs");
        std::fs::create_dir_all(&pairs_dir).map_err(|e| Error::io(&pairs_dir, e))?;
        for (i, pair) in self.pairs.iter().enumerate() {
            save_image(&pair.x, pairs_dir.join(format!("{i:04}_x.png")))?;
            save_image(&pair.y, pairs_dir.join(format!("{i:04}_y.png")))?;
        }
        let manifest = dir.join("manifest.txt");
        std::fs::write(&manifest, self.manifest()).map_err(|e| Error::io(&manifest, e))
    }

    /// Reads a directory written by [`AugmentedDataset::save`] and checks the
    /// recorded content hash.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("manifest.txt");
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let kv = parse_key_values(&text)?;
        let get = |key: &str| {
            kv.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::format("dataset manifest", format!("missing key {key}")))
        };
        let num = |key: &str| -> Result<f64> {
            get(key)?.parse().map_err(|_| Error::format("dataset manifest", format!("bad value for {key}")))
        };
        let list = |key: &str| -> Result<Vec<usize>> {
            let v = get(key)?;
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|s| s.parse().map_err(|_| Error::format("dataset manifest", format!("bad index in {key}"))))
                .collect()
        };
        let seed: u64 = get("seed")?.parse().map_err(|_| Error::format("dataset manifest", "bad seed"))?;
        let params = AugmentParams {
            k: num("k")? as usize,
            points: num("points")? as usize,
            sigma: num("sigma")?,
            max_angle: num("max_angle")?,
        };
        let mut pairs = Vec::with_capacity(params.k);
        for i in 0..params.k {
            let (angle, deform_seed) = get(&format!("transform.{i:04}"))?
                .split_once(' ')
                .and_then(|(a, s)| Some((a.parse().ok()?, s.parse().ok()?)))
                .ok_or_else(|| Error::format("dataset manifest", format!("bad transform record {i}")))?;
            let x = load_image(dir.join("pairs").join(format!("{i:04}_x.png")), false, None)?;
            let y = load_image(dir.join("pairs").join(format!("{i:04}_y.png")), false, None)?;
            pairs.push(TrainingPair { x, y, angle, deform_seed });
        }
        let ds = AugmentedDataset { pairs, train: list("train")?, validation: list("validation")?, seed, params };
        let recorded = get("hash")?;
        let actual = ds.content_hash();
        if recorded != actual {
            return Err(Error::format("dataset", format!("content hash mismatch: manifest {recorded}, data {actual}")));
        }
        Ok(ds)
    }
}

/// Flat `key=value` lines; blank lines and `#` comments are skipped.
pub(crate) fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::format("key=value text", l.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{self, BackboneParams};

    fn checkerboard(size: usize, cell: usize) -> GrayImage {
        GrayImage::from_fn(size, size, |r, c| if (r / cell + c / cell).is_multiple_of(2) { 0.9 } else { 0.1 })
    }

    fn blob_pair(size: usize) -> (GrayImage, GrayImage) {
        let y = GrayImage::from_fn(size, size, |r, c| {
            let (dy, dx) = (r as f64 - size as f64 / 2.0, c as f64 - size as f64 / 2.0 - 0.1 * r as f64);
            if dx.abs() < 5.0 && dy.abs() < size as f64 * 0.35 { 0.4 + 0.5 * ((r / 4) % 2) as f32 } else { 0.0 }
        });
        let ext = backbone::extract_backbone(&y, &BackboneParams::for_canvas(size)).unwrap();
        (y, ext.backbone.curved)
    }

    #[test]
    fn zero_sigma_is_identity() {
        let (y, x) = blob_pair(64);
        let (wy, wx) = elastic_deform_pair(&y, &x, 3, 0.0, 42).unwrap();
        assert_eq!(wy, y);
        assert_eq!(wx, x);
    }

    #[test]
    fn constant_field_translates_left() {
        let img = checkerboard(32, 4);
        let field = DeformField::from_control_grid(3, vec![0.0; 9], vec![5.0; 9], 32, 32).unwrap();
        let out = field.warp(&img, Sampling::Bilinear).unwrap();
        for r in 0..32 {
            for c in 0..27 {
                assert!((out.get(r, c) - img.get(r, c + 5)).abs() < 1e-6);
            }
            for c in 27..32 {
                assert!(out.get(r, c).abs() < 1e-6);
            }
        }
    }

    /// Direct 16-tap bicubic evaluation of the control grid at one pixel.
    fn oracle_displacement(grid: &[f64], points: usize, r: usize, c: usize, width: usize, height: usize) -> f64 {
        let u = r as f64 * (points - 1) as f64 / (height - 1) as f64;
        let v = c as f64 * (points - 1) as f64 / (width - 1) as f64;
        let kernel = |t: f64| {
            let t = t.abs();
            if t <= 1.0 {
                1.5 * t.powi(3) - 2.5 * t.powi(2) + 1.0
            } else if t < 2.0 {
                -0.5 * t.powi(3) + 2.5 * t.powi(2) - 4.0 * t + 2.0
            } else {
                0.0
            }
        };
        let (u0, v0) = (u.floor() as i64, v.floor() as i64);
        let mut acc = 0.0;
        for i in u0 - 1..=u0 + 2 {
            for j in v0 - 1..=v0 + 2 {
                let gi = i.clamp(0, points as i64 - 1) as usize;
                let gj = j.clamp(0, points as i64 - 1) as usize;
                acc += kernel(u - i as f64) * kernel(v - j as f64) * grid[gi * points + gj];
            }
        }
        acc
    }

    #[test]
    fn dense_field_matches_direct_bicubic_oracle() {
        let size = 48;
        let img = checkerboard(size, 6);
        let labels = GrayImage::from_fn(size, size, |r, c| ((r / 8 + c / 8) % 9 + 1) as f32 * 23.0 / 255.0);
        let field = DeformField::random(3, 18.0 * size as f64 / 256.0 * 4.0, 99, size, size).unwrap();
        let mut expected_y = GrayImage::new(size, size);
        let mut expected_x = GrayImage::new(size, size);
        for r in 0..size {
            for c in 0..size {
                let dy = oracle_displacement(field.control_dy(), 3, r, c, size, size);
                let dx = oracle_displacement(field.control_dx(), 3, r, c, size, size);
                let (fy, fx) = field.at(r, c);
                assert!((dy - fy).abs() < 1e-9 && (dx - fx).abs() < 1e-9);
                expected_y.set(r, c, img.sample_bilinear(r as f64 + dy, c as f64 + dx));
                expected_x.set(r, c, labels.sample_nearest(r as f64 + dy, c as f64 + dx));
            }
        }
        let (wy, wx) = elastic_deform_pair(&img, &labels, 3, 18.0 * size as f64 / 256.0 * 4.0, 99).unwrap();
        assert_eq!(wy.to_u8(), expected_y.to_u8());
        assert_eq!(wx, expected_x);
    }

    #[test]
    fn deform_rejects_bad_input() {
        let a = GrayImage::new(8, 8);
        assert!(elastic_deform_pair(&a, &GrayImage::new(8, 9), 3, 1.0, 0).is_err());
        assert!(elastic_deform_pair(&a, &a, 1, 1.0, 0).is_err());
        assert!(rotate_pair(&a, &GrayImage::new(9, 8), 3.0).is_err());
    }

    #[test]
    fn zero_rotation_is_identity() {
        let (y, x) = blob_pair(64);
        let (ry, rx) = rotate_pair(&y, &x, 0.0).unwrap();
        assert_eq!((ry, rx), (y, x));
    }

    #[test]
    fn horizontal_line_rotates_onto_diagonal() {
        let size = 65;
        let line = GrayImage::from_fn(size, size, |r, c| if r == 32 && (12..=52).contains(&c) { 1.0 } else { 0.0 });
        let out = rotate(&line, 45.0, Sampling::Bilinear);
        let mut lit = 0;
        for r in 0..size {
            for c in 0..size {
                if out.get(r, c) > 0.25 {
                    lit += 1;
                    // analytic image of the line is r - 32 == c - 32
                    let dist = (r as f64 - c as f64).abs() / 2f64.sqrt();
                    assert!(dist <= 1.0, "pixel ({r},{c}) is {dist} px off the diagonal");
                }
            }
        }
        assert!(lit > 20);
    }

    #[test]
    fn rotation_keeps_backbone_labels() {
        let (y, x) = blob_pair(64);
        let before: std::collections::BTreeSet<u8> = x.to_u8().into_iter().collect();
        for angle in [-45.0, -12.5, 7.0, 33.0, 45.0] {
            let (_, rx) = rotate_pair(&y, &x, angle).unwrap();
            let after: std::collections::BTreeSet<u8> = rx.to_u8().into_iter().collect();
            assert!(after.is_subset(&before));
        }
    }

    #[test]
    fn dataset_split_and_determinism() {
        let (y, x) = blob_pair(32);
        let params = AugmentParams { k: 1000, ..AugmentParams::for_canvas(32) };
        let a = build_augmented_dataset(&y, &x, &params, 5).unwrap();
        assert_eq!((a.train.len(), a.validation.len()), (900, 100));
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());

        let small = AugmentParams { k: 20, ..params };
        let b1 = build_augmented_dataset(&y, &x, &small, 5).unwrap();
        let b2 = build_augmented_dataset(&y, &x, &small, 5).unwrap();
        assert_eq!(b1.pairs, b2.pairs);
        assert_eq!(b1.content_hash(), b2.content_hash());
        let c = build_augmented_dataset(&y, &x, &small, 6).unwrap();
        assert_ne!(b1.content_hash(), c.content_hash());
    }

    #[test]
    fn degenerate_transform_reproduces_source() {
        let (y, x) = blob_pair(32);
        let params = AugmentParams { k: 10, points: 3, sigma: 0.0, max_angle: 0.0 };
        let ds = build_augmented_dataset(&y, &x, &params, 1).unwrap();
        assert!(ds.pairs.iter().all(|p| p.x == x && p.y == y));
    }

    #[test]
    fn too_few_pairs_rejected() {
        let (y, x) = blob_pair(32);
        let params = AugmentParams { k: 9, ..AugmentParams::default() };
        assert!(build_augmented_dataset(&y, &x, &params, 1).is_err());
    }

    #[test]
    fn augmented_labels_stay_closed() {
        let (y, x) = blob_pair(64);
        let ds = build_augmented_dataset(&y, &x, &AugmentParams { k: 30, ..AugmentParams::for_canvas(64) }, 3).unwrap();
        for p in &ds.pairs {
            assert!(p.x.to_u8().iter().all(|&v| v % 23 == 0 && v <= 207));
        }
    }

    #[test]
    fn save_and_load_preserve_hash() {
        let (y, x) = blob_pair(32);
        let ds = build_augmented_dataset(&y, &x, &AugmentParams { k: 12, ..AugmentParams::for_canvas(32) }, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert!(dir.path().join("pairs/0011_y.png").exists());
        let back = AugmentedDataset::load(dir.path()).unwrap();
        assert_eq!(back.content_hash(), ds.content_hash());
        assert_eq!(back.train, ds.train);
        assert_eq!(back.pairs[3].x, ds.pairs[3].x);
    }
}
