//! Scoring straightened chromosomes against a known straight version by
//! their longitudinal band profiles and simple pixel statistics.

use std::fmt::Write as _;

use crate::backbone::{extract_central_axis_above, smooth_axis, DEFAULT_SMOOTHING_WINDOW};
use crate::error::{Error, Result};
use crate::imgcore::GrayImage;
use crate::synthgen::BandProfile;

pub const PROFILE_SAMPLES: usize = 100;
pub const DEFAULT_THRESHOLD: f32 = 10.0 / 255.0;
/// Fraction of the local half width averaged across the chromosome. The
/// outermost pixels are dimmed by anti-aliasing and would bias the levels.
const CORE_FRACTION: f64 = 0.5;
/// Spacing of the samples along each cross-section, in pixels.
const CROSS_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileParams {
    pub threshold: f32,
    pub window: usize,
    pub samples: usize,
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, window: DEFAULT_SMOOTHING_WINDOW, samples: PROFILE_SAMPLES }
    }
}

/// Linear resampling of `values` placed at increasing positions `at` onto
/// `n` evenly spaced positions spanning the same range.
fn resample(at: &[f64], values: &[f64], n: usize) -> Vec<f64> {
    let (start, end) = (at[0], at[at.len() - 1]);
    let mut j = 0;
    (0..n)
        .map(|i| {
            let s = if n == 1 { start } else { start + (end - start) * i as f64 / (n - 1) as f64 };
            while j + 2 < at.len() && at[j + 1] < s {
                j += 1;
            }
            let span = at[j + 1] - at[j];
            let t = if span > 0.0 { ((s - at[j]) / span).clamp(0.0, 1.0) } else { 0.0 };
            values[j] + t * (values[j + 1] - values[j])
        })
        .collect()
}

/// Mean foreground intensity across the chromosome at each row of its
/// smoothed central axis, sampled perpendicular to the axis and resampled to
/// `samples` points evenly spaced in arc length.
pub fn band_profile(img: &GrayImage, params: &ProfileParams) -> Result<BandProfile> {
    let axis = smooth_axis(&extract_central_axis_above(img, params.threshold)?, params.window)?;
    let rows = axis.rows();
    let n = rows.len();
    let mut arc = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for (i, row) in rows.iter().enumerate() {
        let (prev, next) = (rows[i.saturating_sub(1)], rows[(i + 1).min(n - 1)]);
        let slope = (next.x - prev.x) / (next.h - prev.h) as f64;
        let (sin, cos) = slope.atan().sin_cos();
        arc.push(if i == 0 { 0.0 } else { arc[i - 1] + (1.0 + (row.x - rows[i - 1].x).powi(2)).sqrt() });

        let line = img.row(row.h);
        let fg: Vec<f32> = line.iter().copied().filter(|&v| v > params.threshold).collect();
        let first = line.iter().position(|&v| v > params.threshold);
        let last = line.iter().rposition(|&v| v > params.threshold);
        let value = match first.zip(last) {
            Some((l, r)) => {
                let half = ((r - l + 1) as f64 / 2.0 * cos * CORE_FRACTION).max(CROSS_STEP);
                let steps = (half / CROSS_STEP).floor() as i64;
                let (y0, x0) = (row.h as f64, row.x);
                let picked: Vec<f64> = (-steps..=steps)
                    .map(|k| {
                        let t = k as f64 * CROSS_STEP;
                        img.sample_bilinear(y0 - t * sin, x0 + t * cos) as f64
                    })
                    .filter(|&v| v > params.threshold as f64)
                    .collect();
                if picked.is_empty() {
                    fg.iter().map(|&v| v as f64).sum::<f64>() / fg.len() as f64
                } else {
                    picked.iter().sum::<f64>() / picked.len() as f64
                }
            }
            // an interpolated gap row of the axis
            None => values.last().copied().unwrap_or(0.0),
        };
        values.push(value);
    }
    let samples = if n == 1 { vec![values[0]; params.samples] } else { resample(&arc, &values, params.samples) };
    BandProfile::new(samples.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
}

/// Pearson correlation; 0 when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a[..n].iter().zip(&b[..n]) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// [`pearson`] on profile samples.
pub fn profile_correlation(a: &[f32], b: &[f32]) -> f64 {
    let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    pearson(&widen(a), &widen(b))
}

/// Mean absolute difference over pixels that are foreground in both images;
/// 1.0 when they share none.
pub fn overlap_abs_diff(a: &GrayImage, b: &GrayImage, threshold: f32) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        if x > threshold && y > threshold {
            sum += (x - y).abs() as f64;
            n += 1;
        }
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

/// Ratio of total intensities; a tiny floor keeps it positive for empty
/// outputs.
pub fn mass_ratio(output: &GrayImage, truth: &GrayImage) -> f64 {
    const FLOOR: f64 = 1e-9;
    (output.mass() + FLOOR) / (truth.mass() + FLOOR)
}

/// One ground-truth case with the outputs of several methods.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub name: String,
    pub curved: GrayImage,
    pub truth: GrayImage,
    pub outputs: Vec<(String, GrayImage)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub case: String,
    pub method: String,
    pub correlation: f64,
    pub mean_abs_diff: f64,
    pub mass_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub method: String,
    pub cases: usize,
    pub correlation: MeanStd,
    pub mean_abs_diff: MeanStd,
    pub mass_ratio: MeanStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<Record>,
    /// One row per method, best mean correlation first.
    pub aggregates: Vec<Aggregate>,
}

impl MetricsReport {
    pub fn aggregate(&self, method: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    pub fn to_table(&self) -> String {
        let width = self.aggregates.iter().map(|a| a.method.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<4} {:<width$} {:>5}  {:>17}  {:>17}  {:>17}",
            "rank", "method", "cases", "profile corr", "overlap |diff|", "mass ratio"
        );
        for (i, a) in self.aggregates.iter().enumerate() {
            let cell = |m: MeanStd| format!("{:.4} ± {:.4}", m.mean, m.std);
            let _ = writeln!(
                out,
                "{:<4} {:<width$} {:>5}  {:>17}  {:>17}  {:>17}",
                i + 1,
                a.method,
                a.cases,
                cell(a.correlation),
                cell(a.mean_abs_diff),
                cell(a.mass_ratio)
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,method,correlation,mean_abs_diff,mass_ratio\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{:.6},{:.6},{:.6}", r.case, r.method, r.correlation, r.mean_abs_diff, r.mass_ratio);
        }
        out
    }
}

/// Scores every method output of every case against the case's ground truth.
/// An output whose profile cannot be extracted scores correlation 0.
pub fn evaluate_methods(cases: &[EvalCase], params: &ProfileParams) -> Result<MetricsReport> {
    if cases.is_empty() {
        return Err(Error::InvalidParameter("no cases to evaluate".into()));
    }
    let mut records = Vec::new();
    for case in cases {
        let truth = band_profile(&case.truth, params)?;
        for (method, output) in &case.outputs {
            if !output.same_size(&case.truth) {
                return Err(Error::DimensionMismatch(format!("{}/{method}: output and truth differ in size", case.name)));
            }
            let correlation = match band_profile(output, params) {
                Ok(p) => profile_correlation(truth.samples(), p.samples()),
                Err(e) => {
                    log::warn!("{}/{method}: no band profile ({e}); scoring correlation 0", case.name);
                    0.0
                }
            };
            records.push(Record {
                case: case.name.clone(),
                method: method.clone(),
                correlation,
                mean_abs_diff: overlap_abs_diff(output, &case.truth, params.threshold),
                mass_ratio: mass_ratio(output, &case.truth),
            });
        }
    }
    let mut methods: Vec<String> = Vec::new();
    for r in &records {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut aggregates: Vec<Aggregate> = methods
        .into_iter()
        .map(|m| {
            let mine: Vec<&Record> = records.iter().filter(|r| r.method == m).collect();
            let col = |f: fn(&Record) -> f64| MeanStd::of(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            Aggregate {
                cases: mine.len(),
                correlation: col(|r| r.correlation),
                mean_abs_diff: col(|r| r.mean_abs_diff),
                mass_ratio: col(|r| r.mass_ratio),
                method: m,
            }
        })
        .collect();
    aggregates.sort_by(|a, b| b.correlation.mean.total_cmp(&a.correlation.mean).then_with(|| a.method.cmp(&b.method)));
    Ok(MetricsReport { records, aggregates })
}
