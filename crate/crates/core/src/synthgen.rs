//! Synthetic chromosomes with known banding, and bending along parametric
//! spines, so straightening results can be scored against a ground truth.

use rand::Rng;

use crate::backbone::{Point, MIN_FOREGROUND_ROWS};
use crate::error::{Error, Result};
use crate::imgcore::GrayImage;
use crate::seed::{self, streams};

/// Width of the soft edge on each side of the chromosome body.
const EDGE_RAMP: f64 = 2.0;
/// Relative position of the widest row (the centromere) along the body.
const CENTROMERE: f64 = 0.4;
pub const DEFAULT_CENTRE_WIDTH: f64 = 25.0;
pub const DEFAULT_END_WIDTH: f64 = 17.0;

/// Longitudinal intensity signature, one sample per body row.
#[derive(Debug, Clone, PartialEq)]
pub struct BandProfile {
    samples: Vec<f32>,
}

impl BandProfile {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if samples.len() < MIN_FOREGROUND_ROWS {
            return Err(Error::InvalidParameter(format!(
                "band profile needs at least {MIN_FOREGROUND_ROWS} samples, got {}",
                samples.len()
            )));
        }
        if let Some(v) = samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("band intensity {v} outside [0, 1]")));
        }
        Ok(Self { samples })
    }

    pub fn constant(len: usize, value: f32) -> Result<Self> {
        Self::new(vec![value; len])
    }

    /// Alternating bands of `band` rows, starting with `first`.
    pub fn square_wave(len: usize, band: usize, first: f32, second: f32) -> Result<Self> {
        let band = band.max(1);
        Self::new((0..len).map(|r| if (r / band).is_multiple_of(2) { first } else { second }).collect())
    }

    /// Random light/dark bands whose thickness scales with `len`, lightly
    /// blurred so band edges are not single-pixel steps.
    pub fn random(len: usize, rng: &mut impl Rng) -> Result<Self> {
        let min_band = (len / 14).max(2);
        let max_band = (len / 6).max(min_band + 1);
        let mut raw = Vec::with_capacity(len);
        let mut light = rng.random_bool(0.5);
        while raw.len() < len {
            let thickness = rng.random_range(min_band..=max_band);
            let level: f32 = if light { rng.random_range(0.75..0.95) } else { rng.random_range(0.25..0.5) };
            raw.extend(std::iter::repeat_n(level, thickness));
            light = !light;
        }
        raw.truncate(len);
        let blurred = (0..len)
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(len - 1);
                raw[lo..=hi].iter().sum::<f32>() / (hi - lo + 1) as f32
            })
            .collect();
        Self::new(blurred)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.samples.iter().map(|v| format!("{v:.6}\n")).collect()
    }
}

/// Per-row widths narrowing smoothly from `centre` at the centromere to
/// `end` at both tips.
pub fn tapered_widths(len: usize, centre: f64, end: f64) -> Vec<f64> {
    let c = CENTROMERE * (len.max(2) - 1) as f64;
    (0..len)
        .map(|r| {
            let r = r as f64;
            let span = if r <= c { c } else { (len - 1) as f64 - c };
            let t = if span > 0.0 { (r - c).abs() / span } else { 0.0 };
            end + (centre - end) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        })
        .collect()
}

/// Upright chromosome centred on a square canvas: body row `r` carries
/// `profile[r]` across `widths[r]` columns, with a 2-px ramp at the edges.
pub fn make_straight_chromosome(profile: &BandProfile, widths: &[f64], canvas: usize) -> Result<GrayImage> {
    let len = profile.len();
    if widths.len() != len {
        return Err(Error::DimensionMismatch(format!("{} widths for a body of {len} rows", widths.len())));
    }
    if len + 2 > canvas {
        return Err(Error::ExceedsCanvas { width: 0, height: len + 2, canvas });
    }
    let widest = widths.iter().cloned().fold(0.0, f64::max);
    if widest + 2.0 > canvas as f64 || widths.iter().any(|&w| w <= 0.0) {
        return Err(Error::InvalidParameter(format!("widths must be positive and fit the canvas, widest {widest}")));
    }
    let cx = (canvas / 2) as f64;
    let top = (canvas - len) / 2;
    let mut img = GrayImage::new(canvas, canvas);
    for (r, (&v, &w)) in profile.samples().iter().zip(widths).enumerate() {
        let half = w / 2.0;
        for c in 0..canvas {
            let d = (c as f64 - cx).abs();
            if d < half {
                let ramp = ((half - d) / EDGE_RAMP).min(1.0);
                img.set(top + r, c, (v as f64 * ramp) as f32);
            }
        }
    }
    Ok(img)
}

/// Centre line sampled at unit arc-length spacing, top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Spine {
    points: Vec<Point>,
}

impl Spine {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidParameter("a spine needs at least two points".into()));
        }
        if points.windows(2).any(|w| w[1].y <= w[0].y) {
            return Err(Error::InvalidParameter("spine rows must increase strictly".into()));
        }
        if points.windows(2).any(|w| (w[1].x - w[0].x).abs() > 2.0) {
            return Err(Error::InvalidParameter("spine is not continuous".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    /// Straight vertical line through the canvas centre column.
    pub fn vertical(length: usize, canvas: usize) -> Result<Self> {
        let top = (canvas.saturating_sub(length + 1)) as f64 / 2.0;
        let x = (canvas / 2) as f64;
        Self::new((0..=length).map(|s| Point::new(top + s as f64, x)).collect())
    }

    /// Resamples a dense polyline at unit arc-length steps.
    pub fn from_polyline(dense: &[Point]) -> Result<Self> {
        let mut out = vec![dense[0]];
        let mut next = 1.0;
        let mut walked = 0.0;
        for w in dense.windows(2) {
            let seg = w[0].distance(w[1]);
            while seg > 0.0 && walked + seg >= next {
                let t = (next - walked) / seg;
                out.push(Point::new(w[0].y + t * (w[1].y - w[0].y), w[0].x + t * (w[1].x - w[0].x)));
                next += 1.0;
            }
            walked += seg;
        }
        Self::new(out)
    }

    /// Cubic Bezier through `p0..p3`, resampled by arc length.
    pub fn bezier(p: [Point; 4]) -> Result<Self> {
        const DENSE: usize = 4000;
        let dense: Vec<Point> = (0..=DENSE)
            .map(|i| {
                let t = i as f64 / DENSE as f64;
                let u = 1.0 - t;
                let (a, b, c, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
                Point::new(
                    a * p[0].y + b * p[1].y + c * p[2].y + d * p[3].y,
                    a * p[0].x + b * p[1].x + c * p[2].x + d * p[3].x,
                )
            })
            .collect();
        Self::from_polyline(&dense)
    }

    /// Circular arc from `start`, heading straight down and turning by
    /// `degrees` towards +x.
    pub fn arc(radius: f64, degrees: f64, start: Point) -> Result<Self> {
        let sweep = degrees.to_radians();
        let n = (radius * sweep * 8.0).ceil().max(2.0) as usize;
        let dense: Vec<Point> = (0..=n)
            .map(|i| {
                let a = sweep * i as f64 / n as f64;
                Point::new(start.y + radius * a.sin(), start.x + radius * (1.0 - a.cos()))
            })
            .collect();
        Self::from_polyline(&dense)
    }

    /// Shifts the spine so its bounding box is centred on the canvas.
    pub fn centred(&self, canvas: usize) -> Result<Self> {
        let (mut y0, mut y1, mut x0, mut x1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &self.points {
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
        }
        let mid = (canvas - 1) as f64 / 2.0;
        let (dy, dx) = ((mid - (y0 + y1) / 2.0).round(), (mid - (x0 + x1) / 2.0).round());
        Self::new(self.points.iter().map(|p| Point::new(p.y + dy, p.x + dx)).collect())
    }

    /// Smooth curve of arc length at least `length` with one bend (a "C")
    /// or two bends (an "S"). `curvature` is the sideways control-point
    /// offset as a fraction of the chord.
    pub fn bent(length: f64, bends: usize, curvature: f64, canvas: usize) -> Result<Self> {
        if !(1..=2).contains(&bends) {
            return Err(Error::InvalidParameter(format!("bend count must be 1 or 2, got {bends}")));
        }
        let build = |chord: f64| {
            let off = curvature * chord;
            let (o1, o2) = if bends == 1 { (off, off) } else { (off, -off) };
            Spine::bezier([
                Point::new(0.0, 0.0),
                Point::new(chord / 3.0, o1),
                Point::new(2.0 * chord / 3.0, o2),
                Point::new(chord, 0.0),
            ])
        };
        // the longest chord whose curve still reaches the wanted length
        let (mut lo, mut hi) = (length / 4.0, length + 1.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if build(mid)?.arc_length() >= length + 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        build(hi)?.centred(canvas)
    }
}

/// Wraps a straight chromosome around `spine`: the body row at arc position
/// `s` is laid perpendicular to the spine tangent there. Pixels are mapped
/// backwards through their nearest spine point and sampled bilinearly.
pub fn bend_along_spine(img: &GrayImage, spine: &Spine) -> Result<GrayImage> {
    let (top, bottom, left, right) = img.bounding_box(0.0).ok_or(Error::NoForeground)?;
    let height = (bottom - top) as f64;
    let arc = spine.arc_length();
    if arc + 1e-9 < height {
        return Err(Error::InvalidParameter(format!("spine of length {arc:.1} is shorter than the {height}-px chromosome")));
    }
    let src_cx = (left + right) as f64 / 2.0;
    let s_offset = (arc - height) / 2.0;
    let pts = spine.points();
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for w in pts.windows(2) {
        cum.push(cum[cum.len() - 1] + w[0].distance(w[1]));
    }
    let last = pts.len() - 2;
    Ok(GrayImage::from_fn(img.width(), img.height(), |r, c| {
        let (py, px) = (r as f64, c as f64);
        let mut best = (f64::MAX, 0.0, 0.0);
        for i in 0..=last {
            let (a, b) = (pts[i], pts[i + 1]);
            let (ty, tx) = (b.y - a.y, b.x - a.x);
            let len = ty.hypot(tx);
            let (ty, tx) = (ty / len, tx / len);
            let along = (py - a.y) * ty + (px - a.x) * tx;
            // the end segments extend past the spine so the tips stay crisp
            let lo = if i == 0 { f64::NEG_INFINITY } else { 0.0 };
            let hi = if i == last { f64::INFINITY } else { len };
            let t = along.clamp(lo, hi);
            let (qy, qx) = (a.y + t * ty, a.x + t * tx);
            let dist2 = (py - qy).powi(2) + (px - qx).powi(2);
            if dist2 < best.0 {
                let normal = (py - qy) * -tx + (px - qx) * ty;
                best = (dist2, cum[i] + t, normal);
            }
        }
        let (_, s, n) = best;
        img.sample_bilinear(top as f64 + s - s_offset, src_cx + n)
    }))
}

/// Settings for a random ground-truth case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseSpec {
    pub canvas: usize,
    pub length: usize,
    pub centre_width: f64,
    pub end_width: f64,
    pub bends: usize,
    /// Range of the sideways Bezier offset as a fraction of the chord.
    pub curvature: (f64, f64),
}

impl CaseSpec {
    /// Proportions of a 256-px chromosome scaled to `canvas`.
    pub fn for_canvas(canvas: usize, bends: usize) -> Self {
        let scale = canvas as f64 / 256.0;
        Self {
            canvas,
            length: ((150.0 * scale).round() as usize).max(MIN_FOREGROUND_ROWS + 8),
            centre_width: DEFAULT_CENTRE_WIDTH * scale,
            end_width: DEFAULT_END_WIDTH * scale,
            bends,
            curvature: if bends == 1 { (0.35, 0.6) } else { (0.3, 0.45) },
        }
    }
}

/// Known straight/bent pair with its band profile.
#[derive(Debug, Clone)]
pub struct SynthCase {
    pub profile: BandProfile,
    pub straight: GrayImage,
    pub spine: Spine,
    pub bent: GrayImage,
}

pub fn make_case(spec: &CaseSpec, seed: u64) -> Result<SynthCase> {
    let mut rng = seed::stream_rng(seed, streams::SYNTH);
    let profile = BandProfile::random(spec.length, &mut rng)?;
    let widths = tapered_widths(spec.length, spec.centre_width, spec.end_width);
    let straight = make_straight_chromosome(&profile, &widths, spec.canvas)?;
    let (lo, hi) = spec.curvature;
    let mut curvature = if hi > lo { rng.random_range(lo..hi) } else { lo };
    if rng.random_bool(0.5) {
        curvature = -curvature;
    }
    let spine = Spine::bent(spec.length as f64, spec.bends, curvature, spec.canvas)?;
    let bent = bend_along_spine(&straight, &spine)?;
    Ok(SynthCase { profile, straight, spine, bent })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_bar_geometry() {
        let p = BandProfile::constant(100, 0.8).unwrap();
        let img = make_straight_chromosome(&p, &[21.0; 100], 256).unwrap();
        let (t, b, l, r) = img.bounding_box(0.0).unwrap();
        assert_eq!((b - t + 1, r - l + 1), (100, 21));
        assert_eq!(img.get((t + b) / 2, (l + r) / 2), 0.8);
        assert!(img.get((t + b) / 2, l) < 0.8);
    }

    #[test]
    fn short_profile_rejected() {
        assert!(BandProfile::constant(10, 0.5).is_err());
        assert!(BandProfile::new(vec![1.5; 30]).is_err());
    }

    #[test]
    fn oversize_body_rejected() {
        let p = BandProfile::constant(80, 0.5).unwrap();
        assert!(make_straight_chromosome(&p, &[9.0; 80], 64).is_err());
    }

    #[test]
    fn taper_is_widest_at_centromere() {
        let w = tapered_widths(101, 25.0, 17.0);
        assert!((w[40] - 25.0).abs() < 1e-9);
        assert!((w[0] - 17.0).abs() < 1e-9 && (w[100] - 17.0).abs() < 1e-9);
        assert!(w[..40].windows(2).all(|p| p[1] >= p[0]));
        assert!(w[40..].windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn spines_are_unit_spaced() {
        let c = Spine::bent(120.0, 1, 0.5, 256).unwrap();
        let s = Spine::bent(120.0, 2, 0.4, 256).unwrap();
        assert!(c.arc_length() >= 120.0 && s.arc_length() >= 120.0);
        for spine in [c, s, Spine::arc(80.0, 80.0, Point::new(20.0, 40.0)).unwrap()] {
            // unit steps along the curve; chords fall short by O(1/R^2)
            for w in spine.points().windows(2) {
                assert!((w[0].distance(w[1]) - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn straight_spine_is_identity() {
        let mut rng = seed::rng(4);
        let p = BandProfile::random(100, &mut rng).unwrap();
        let img = make_straight_chromosome(&p, &tapered_widths(100, 25.0, 17.0), 256).unwrap();
        let bent = bend_along_spine(&img, &Spine::vertical(99, 256).unwrap()).unwrap();
        let worst = img.data().iter().zip(bent.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(worst <= 0.02, "max difference {worst}");
    }

    #[test]
    fn quarter_circle_moves_mass_sideways() {
        let p = BandProfile::constant(100, 0.8).unwrap();
        let img = make_straight_chromosome(&p, &[21.0; 100], 256).unwrap();
        let (top, ..) = img.bounding_box(0.0).unwrap();
        // slightly under 90 degrees keeps the rows strictly increasing
        let spine = Spine::arc(70.0, 89.0, Point::new(top as f64, 128.0)).unwrap();
        let bent = bend_along_spine(&img, &spine).unwrap();
        let centroid_x = |g: &GrayImage| {
            let (mut m, mut mx) = (0.0, 0.0);
            for r in 0..256 {
                for c in 0..256 {
                    m += g.get(r, c) as f64;
                    mx += g.get(r, c) as f64 * c as f64;
                }
            }
            mx / m
        };
        assert!((centroid_x(&img) - 128.0).abs() < 1.0);
        assert!(centroid_x(&bent) - 128.0 > 10.0);
    }

    #[test]
    fn bending_preserves_mass() {
        for (seed, bends) in [(1, 1), (2, 2), (3, 1), (4, 2)] {
            let case = make_case(&CaseSpec::for_canvas(256, bends), seed).unwrap();
            let ratio = case.bent.mass() / case.straight.mass();
            assert!((ratio - 1.0).abs() < 0.05, "seed {seed}: mass ratio {ratio}");
        }
    }

    #[test]
    fn short_spine_rejected() {
        let p = BandProfile::constant(100, 0.8).unwrap();
        let img = make_straight_chromosome(&p, &[21.0; 100], 256).unwrap();
        assert!(bend_along_spine(&img, &Spine::vertical(50, 256).unwrap()).is_err());
    }

    #[test]
    fn desk_cases_keep_enough_rows() {
        for seed in 0..10 {
            for bends in [1, 2] {
                let case = make_case(&CaseSpec::for_canvas(64, bends), seed).unwrap();
                let (t, b, l, r) = case.bent.bounding_box(0.0).unwrap();
                assert!(b - t + 1 >= MIN_FOREGROUND_ROWS, "seed {seed}");
                assert!(t > 0 && l > 0 && b < 63 && r < 63, "seed {seed} touches the border");
            }
        }
    }
}
