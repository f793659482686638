//! Internal backbone extraction.
//!
//! The central axis is the per-row midpoint of the foreground, smoothed with a
//! moving average. Its vertical extent is split into eleven equal parts; the
//! outermost parts are discarded and the ten remaining boundary points are
//! joined by nine thick "sticks" whose intensities `23, 46, ..., 207` encode
//! their order along the chromosome. The same sticks re-laid end to end on a
//! vertical line form the straightened backbone fed to the generator.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imgcore::GrayImage;

/// Minimum number of foreground rows accepted by [`extract_central_axis`].
pub const MIN_FOREGROUND_ROWS: usize = 22;
/// Number of equal parts the axis span is divided into.
pub const AXIS_PARTS: usize = 11;
pub const CONTROL_POINTS: usize = AXIS_PARTS - 1;
pub const STICKS: usize = CONTROL_POINTS - 1;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 11;
pub const DEFAULT_STICK_WIDTH: usize = 33;
pub const DEFAULT_VALUE_STEP: u8 = 23;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub y: f64,
    pub x: f64,
}

impl Point {
    pub fn new(y: f64, x: f64) -> Self {
        Self { y, x }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.y - other.y).hypot(self.x - other.x)
    }
}

/// One entry of the central axis: row index and fractional centre column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRow {
    pub h: usize,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    rows: Vec<AxisRow>,
}

impl Axis {
    /// Builds an axis from explicit rows, which must be strictly increasing.
    pub fn from_rows(rows: Vec<AxisRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::NoForeground);
        }
        if rows.windows(2).any(|w| w[1].h <= w[0].h) {
            return Err(Error::InvalidParameter("axis rows must be strictly increasing".into()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[AxisRow] {
        &self.rows
    }

    pub fn h1(&self) -> usize {
        self.rows[0].h
    }

    pub fn h2(&self) -> usize {
        self.rows[self.rows.len() - 1].h
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.rows.iter().map(|r| Point::new(r.h as f64, r.x))
    }

    /// Centre column at a fractional row, by linear interpolation between
    /// neighbouring axis rows (clamped at the ends).
    pub fn x_at(&self, y: f64) -> f64 {
        let first = self.rows[0];
        let last = self.rows[self.rows.len() - 1];
        if y <= first.h as f64 {
            return first.x;
        }
        if y >= last.h as f64 {
            return last.x;
        }
        let idx = self.rows.partition_point(|r| (r.h as f64) <= y);
        let (a, b) = (self.rows[idx - 1], self.rows[idx]);
        let t = (y - a.h as f64) / (b.h - a.h) as f64;
        a.x + t * (b.x - a.x)
    }
}

/// Per-row midpoint axis of all pixels strictly greater than 0.
pub fn extract_central_axis(img: &GrayImage) -> Result<Axis> {
    extract_central_axis_above(img, 0.0)
}

/// Like [`extract_central_axis`] with a configurable foreground threshold.
///
/// Rows with several foreground runs use the first and last foreground
/// columns overall. Rows between `h1` and `h2` without foreground are filled
/// by linear interpolation of their neighbours.
pub fn extract_central_axis_above(img: &GrayImage, threshold: f32) -> Result<Axis> {
    let mut found: Vec<(usize, f64)> = Vec::new();
    for h in 0..img.height() {
        let row = img.row(h);
        let first = row.iter().position(|&v| v > threshold);
        let last = row.iter().rposition(|&v| v > threshold);
        if let (Some(w1), Some(w2)) = (first, last) {
            found.push((h, (w1 + w2) as f64 / 2.0));
        }
    }
    if found.is_empty() {
        return Err(Error::NoForeground);
    }
    if found.len() < MIN_FOREGROUND_ROWS {
        return Err(Error::TooFewRows { found: found.len(), needed: MIN_FOREGROUND_ROWS });
    }
    let mut rows = Vec::with_capacity(found[found.len() - 1].0 - found[0].0 + 1);
    for pair in found.windows(2) {
        let ((ha, xa), (hb, xb)) = (pair[0], pair[1]);
        rows.push(AxisRow { h: ha, x: xa });
        for h in ha + 1..hb {
            let t = (h - ha) as f64 / (hb - ha) as f64;
            rows.push(AxisRow { h, x: xa + t * (xb - xa) });
        }
    }
    let (h, x) = found[found.len() - 1];
    rows.push(AxisRow { h, x });
    Ok(Axis { rows })
}

/// Centred moving average of the axis columns. Near the ends the window is
/// truncated to the rows that exist.
pub fn smooth_axis(axis: &Axis, window: usize) -> Result<Axis> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("smoothing window must be odd and >= 3, got {window}")));
    }
    let half = window / 2;
    let n = axis.rows.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0f64);
    for r in &axis.rows {
        prefix.push(prefix[prefix.len() - 1] + r.x);
    }
    let rows = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let mean = (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1) as f64;
            AxisRow { h: axis.rows[i].h, x: mean }
        })
        .collect();
    Ok(Axis { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPoints {
    points: Vec<Point>,
    stick_lengths: Vec<f64>,
}

impl ControlPoints {
    /// Validates ten points with strictly increasing rows.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != CONTROL_POINTS {
            return Err(Error::InvalidParameter(format!(
                "expected {CONTROL_POINTS} control points, got {}",
                points.len()
            )));
        }
        if points.windows(2).any(|w| w[1].y <= w[0].y) {
            return Err(Error::InvalidParameter("control point rows must increase".into()));
        }
        let stick_lengths = points.windows(2).map(|w| w[0].distance(w[1])).collect();
        Ok(Self { points, stick_lengths })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn stick_lengths(&self) -> &[f64] {
        &self.stick_lengths
    }

    pub fn total_length(&self) -> f64 {
        self.stick_lengths.iter().sum()
    }

    /// Plain-text table, one `y x` pair per line with six decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            writeln!(out, "{:.6} {:.6}", p.y, p.x).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut parts = line.split_whitespace().map(str::parse::<f64>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(y)), Some(Ok(x)), None) => points.push(Point::new(y, x)),
                _ => return Err(Error::format("control point table", line.to_string())),
            }
        }
        Self::new(points)
    }
}

/// Splits the axis span `[h1, h2]` into eleven equal parts and keeps the ten
/// interior boundaries.
pub fn make_control_points(axis: &Axis) -> Result<ControlPoints> {
    let (h1, h2) = (axis.h1() as f64, axis.h2() as f64);
    let span = h2 - h1;
    if span < AXIS_PARTS as f64 {
        return Err(Error::SpanTooShort { span, needed: AXIS_PARTS as f64 });
    }
    let points = (1..=CONTROL_POINTS)
        .map(|j| {
            let y = h1 + j as f64 * span / AXIS_PARTS as f64;
            Point::new(y, axis.x_at(y))
        })
        .collect();
    ControlPoints::new(points)
}

/// Stick geometry and label encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StickStyle {
    /// Full stick width in pixels; the capsule radius is `(width - 1) / 2`.
    pub width: usize,
    /// 8-bit value of the first stick; stick `k` (1-based) has `k * step`.
    pub value_step: u8,
}

impl Default for StickStyle {
    fn default() -> Self {
        Self { width: DEFAULT_STICK_WIDTH, value_step: DEFAULT_VALUE_STEP }
    }
}

impl StickStyle {
    /// Width scaled proportionally to a canvas other than 256, kept odd.
    pub fn for_canvas(canvas: usize) -> Self {
        let scaled = (DEFAULT_STICK_WIDTH as f64 * canvas as f64 / 256.0).round() as usize;
        let width = if scaled.is_multiple_of(2) { scaled + 1 } else { scaled }.max(3);
        Self { width, value_step: DEFAULT_VALUE_STEP }
    }

    pub fn radius(&self) -> f64 {
        (self.width.saturating_sub(1)) as f64 / 2.0
    }

    /// Intensity of stick `k` (1-based) in `[0, 1]`.
    pub fn value(&self, k: usize) -> f32 {
        (k * self.value_step as usize) as f32 / 255.0
    }

    /// All stick intensities, ascending.
    pub fn values(&self) -> Vec<f32> {
        (1..=STICKS).map(|k| self.value(k)).collect()
    }

    fn check(&self) -> Result<()> {
        if self.width == 0 || self.value_step == 0 || STICKS * self.value_step as usize > 255 {
            return Err(Error::InvalidParameter(format!("invalid stick style {self:?}")));
        }
        Ok(())
    }
}

/// Draws a filled capsule (segment dilated by `radius`) with `value`.
fn draw_capsule(img: &mut GrayImage, a: Point, b: Point, radius: f64, value: f32) {
    let (h, w) = (img.height() as f64, img.width() as f64);
    let top = (a.y.min(b.y) - radius).floor().max(0.0) as usize;
    let bottom = (a.y.max(b.y) + radius).ceil().min(h - 1.0) as usize;
    let left = (a.x.min(b.x) - radius).floor().max(0.0) as usize;
    let right = (a.x.max(b.x) + radius).ceil().min(w - 1.0) as usize;
    let (dy, dx) = (b.y - a.y, b.x - a.x);
    let len2 = dy * dy + dx * dx;
    let limit = radius * radius + 1e-9;
    for r in top..=bottom {
        for c in left..=right {
            let (py, px) = (r as f64 - a.y, c as f64 - a.x);
            let t = if len2 > 0.0 { ((py * dy + px * dx) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (ey, ex) = (py - t * dy, px - t * dx);
            if ey * ey + ex * ex <= limit {
                img.set(r, c, value);
            }
        }
    }
}

fn check_inside(p: Point, width: usize, height: usize) -> Result<()> {
    let inside = p.y >= 0.0 && p.x >= 0.0 && p.y <= (height - 1) as f64 && p.x <= (width - 1) as f64;
    if inside {
        Ok(())
    } else {
        Err(Error::PointOutOfCanvas { y: p.y, x: p.x, width, height })
    }
}

/// Rasterises the nine sticks joining consecutive control points on a
/// `canvas`x`canvas` image. Later sticks overwrite earlier ones.
pub fn rasterize_backbone(cp: &ControlPoints, canvas: usize, style: StickStyle) -> Result<GrayImage> {
    rasterize_sticks(cp.points(), canvas, canvas, style)
}

fn rasterize_sticks(points: &[Point], width: usize, height: usize, style: StickStyle) -> Result<GrayImage> {
    style.check()?;
    for &p in points {
        check_inside(p, width, height)?;
    }
    let mut img = GrayImage::new(width, height);
    for (k, pair) in points.windows(2).enumerate() {
        draw_capsule(&mut img, pair[0], pair[1], style.radius(), style.value(k + 1));
    }
    Ok(img)
}

/// Control points of the straightened figure: same stick lengths stacked on
/// the column `floor(canvas / 2)`, vertically centred.
pub fn vertical_control_points(cp: &ControlPoints, canvas: usize, style: StickStyle) -> Result<Vec<Point>> {
    let total = cp.total_length();
    let needed = total + 2.0 * style.radius();
    if needed > (canvas - 1) as f64 {
        return Err(Error::InvalidParameter(format!(
            "vertical backbone of height {needed:.1} does not fit a {canvas} canvas"
        )));
    }
    let x = (canvas / 2) as f64;
    let top = (((canvas - 1) as f64 - total) / 2.0).floor();
    let mut y = top;
    let mut points = vec![Point::new(y, x)];
    for len in cp.stick_lengths() {
        y += len;
        points.push(Point::new(y, x));
    }
    Ok(points)
}

/// The straightened backbone: sticks of the original lengths on a vertical line.
pub fn make_vertical_backbone(cp: &ControlPoints, canvas: usize, style: StickStyle) -> Result<GrayImage> {
    let points = vertical_control_points(cp, canvas, style)?;
    rasterize_sticks(&points, canvas, canvas, style)
}

/// Curved and straightened stick figures sharing one set of stick lengths.
#[derive(Debug, Clone)]
pub struct BackbonePair {
    pub curved: GrayImage,
    pub vertical: GrayImage,
    pub lengths: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneParams {
    pub window: usize,
    pub style: StickStyle,
    /// Pixels strictly above this value count as foreground.
    pub threshold: f32,
}

impl Default for BackboneParams {
    fn default() -> Self {
        Self { window: DEFAULT_SMOOTHING_WINDOW, style: StickStyle::default(), threshold: 0.0 }
    }
}

impl BackboneParams {
    pub fn for_canvas(canvas: usize) -> Self {
        Self { style: StickStyle::for_canvas(canvas), ..Self::default() }
    }
}

/// Everything produced by running the full extraction on one image.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub axis: Axis,
    pub smoothed: Axis,
    pub control_points: ControlPoints,
    pub backbone: BackbonePair,
}

/// Runs the whole extraction on a square image.
pub fn extract_backbone(img: &GrayImage, params: &BackboneParams) -> Result<Extraction> {
    if img.width() != img.height() {
        return Err(Error::DimensionMismatch(format!(
            "backbone extraction expects a square canvas, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let canvas = img.width();
    let axis = extract_central_axis_above(img, params.threshold)?;
    let smoothed = smooth_axis(&axis, params.window)?;
    let control_points = make_control_points(&smoothed)?;
    let curved = rasterize_backbone(&control_points, canvas, params.style)?;
    let vertical = make_vertical_backbone(&control_points, canvas, params.style)?;
    let lengths = control_points.stick_lengths().to_vec();
    Ok(Extraction { axis, smoothed, control_points, backbone: BackbonePair { curved, vertical, lengths } })
}
